"""Dense linear algebra, activations and the multinomial (softmax) loss.

Everything here works on float64 numpy arrays. Samples are stored row-wise
where a batch is involved.
"""

from __future__ import annotations

import enum

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class UnsupportedDerivative(ValueError):
    pass


class Activation(str, enum.Enum):
    RELU = "relu"
    TANH = "tanh"
    SIGN = "sign"
    IDENTITY = "identity"

    @classmethod
    def parse(cls, value) -> "Activation":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown activation {value!r}; expected one of "
                             f"{[a.value for a in cls]}") from None


# Multiplicative corruption of activation derivatives, used only by the
# gradcheck fault-injection hook.
_GRAD_FAULTS: dict[Activation, float] = {}


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by "
                         f"{b.shape[0]}x{b.shape[1]}")
    return a @ b


def activate(kind, v) -> np.ndarray:
    kind = Activation.parse(kind)
    v = np.asarray(v, dtype=np.float64)
    if kind is Activation.RELU:
        return np.maximum(v, 0.0)
    if kind is Activation.TANH:
        return np.tanh(v)
    if kind is Activation.SIGN:
        # sign(0) = +1
        return np.where(v >= 0.0, 1.0, -1.0)
    return v.copy()


def activate_grad(kind, v) -> np.ndarray:
    """Elementwise derivative of the activation. ReLU'(0) is taken as 0."""
    kind = Activation.parse(kind)
    v = np.asarray(v, dtype=np.float64)
    if kind is Activation.SIGN:
        raise UnsupportedDerivative("sign activation has no usable derivative")
    if kind is Activation.RELU:
        g = (v > 0.0).astype(np.float64)
    elif kind is Activation.TANH:
        g = 1.0 - np.tanh(v) ** 2
    else:
        g = np.ones_like(v)
    if kind in _GRAD_FAULTS:
        g = g * _GRAD_FAULTS[kind]
    return g


def softmax(logits) -> np.ndarray:
    """Row-wise softmax of a vector or a batch of logit rows."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    zmax = z.max(axis=-1, keepdims=True)
    return (zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True)))[..., 0]


def _check_onehot(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if not (np.all((y == 0.0) | (y == 1.0)) and np.all(y.sum(axis=-1) == 1.0)):
        raise ValueError("labels must be one-hot vectors")
    return y


def _check_loss_shapes(y, x, W):
    y = _check_onehot(y)
    x = np.asarray(x, dtype=np.float64)
    W = as_matrix(W)
    if x.ndim != 1 or y.ndim != 1:
        raise ShapeError("y and x must be vectors")
    if W.shape != (x.shape[0], y.shape[0]):
        raise ShapeError(f"W must be {x.shape[0]}x{y.shape[0]} "
                         f"(features x classes), got {W.shape[0]}x{W.shape[1]}")
    return y, x, W


def multinomial_loss(y, x, W) -> float:
    """-sum_i y_i w_i.x + log sum_l exp(w_l.x); W holds one column per class."""
    y, x, W = _check_loss_shapes(y, x, W)
    logits = W.T @ x
    return float(logsumexp(logits) - y @ logits)


def multinomial_grads(y, x, W) -> tuple[np.ndarray, np.ndarray]:
    y, x, W = _check_loss_shapes(y, x, W)
    r = softmax(W.T @ x) - y
    return W @ r, np.outer(x, r)


def batch_multinomial(Y, A, Wout) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and logit residuals p - y for a batch.

    ``A`` is batch x features and ``Wout`` is classes x features (network
    orientation, logits = A Wout^T).
    """
    logits = A @ Wout.T
    losses = logsumexp(logits) - np.sum(Y * logits, axis=1)
    return losses, softmax(logits) - Y


def lambda_max(M, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    M = as_matrix(M)
    n, k = M.shape
    if n != k:
        raise ShapeError(f"lambda_max needs a square matrix, got {n}x{k}")
    scale = np.abs(M).max() if M.size else 0.0
    if scale == 0.0:
        return 0.0
    if np.abs(M - M.T).max() > 1e-10 * max(1.0, scale):
        raise ValueError("lambda_max needs a symmetric matrix")
    x = np.random.default_rng(0).uniform(0.5, 1.5, size=n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = M @ x
        lam = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        resid = np.linalg.norm(y - lam * x)
        x = y / ny
        if resid <= tol * abs(lam):
            break
    return float(x @ M @ x)


def lipschitz_bound(D, W) -> float:
    """Upper bound on the Hessian of the supervised code objective.

    ``W`` holds the k-1 non-reference class columns, so k = W.cols + 1.
    """
    D = as_matrix(D)
    W = as_matrix(W)
    if D.shape[1] != W.shape[0]:
        raise ShapeError(f"D is {D.shape[0]}x{D.shape[1]} but W is "
                         f"{W.shape[0]}x{W.shape[1]}")
    k = W.shape[1] + 1
    return lambda_max(D.T @ D) + k * lambda_max(W @ W.T)


def code_objective(c, D, x, y, W) -> float:
    """0.5||Dc - x||^2 plus reference-class multinomial loss of the code.

    ``y`` is a length-k one-hot vector whose last entry is the reference class.
    """
    c = np.asarray(c, dtype=np.float64)
    s = W.T @ c
    r = D @ c - x
    return float(0.5 * r @ r - y[:-1] @ s + np.logaddexp.reduce(np.append(s, 0.0)))


def code_objective_grad(c, D, x, y, W) -> np.ndarray:
    s = W.T @ c
    d = np.exp(s - np.logaddexp.reduce(np.append(s, 0.0)))
    return D.T @ (D @ c - x) - W @ y[:-1] + W @ d


def code_objective_hessian(c, D, W) -> np.ndarray:
    s = W.T @ c
    d = np.exp(s - np.logaddexp.reduce(np.append(s, 0.0)))
    return D.T @ D + W @ (np.diag(d) - np.outer(d, d)) @ W.T
