"""Online alternating minimization over codes and weights.

One minibatch step (:func:`train_minibatch`) is: forward encode, backward
sweep of per-layer code subproblems, then independent per-layer weight
subproblems. AM-Adam solves the hidden-layer weight problems with Adam on
the current minibatch; AM-mem keeps co-activation memories A = sum a a^T,
B = sum c a^T and minimizes the accumulated surrogate by block coordinate
descent over weight columns. The output layer is always trained with Adam
on the multinomial loss.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .datasets import Dataset
from .loop import Hooks, MetricsRow, run_epochs
from .model import CodeBatch, NetworkState, activations, encode_input, evaluate
from .numerics import Activation, activate, activate_grad, batch_multinomial, logsumexp

BINARY_EPS = 1e-3


class NonFiniteError(FloatingPointError):
    def __init__(self, what: str, layer: int):
        super().__init__(f"non-finite {what} at layer {layer}")
        self.layer = layer


class Variant(str, enum.Enum):
    AM_ADAM = "am-adam"
    AM_MEM = "am-mem"


class Event(str, enum.Enum):
    BATCH = "batch"
    EPOCH = "epoch"


@dataclass
class MuSchedule:
    """Penalty weight schedule: additive per minibatch, multiplicative per
    epoch, clamped to ``mu_max``. ``value`` is the current mu."""

    mu0: float = 0.01
    batch_increment: float = 0.0
    epoch_multiplier: float = 1.0
    mu_max: float = 1.0
    value: float | None = None

    def __post_init__(self):
        if self.mu0 < 0 or self.batch_increment < 0:
            raise ValueError("mu0 and batch_increment must be >= 0")
        if self.epoch_multiplier < 1:
            raise ValueError("epoch_multiplier must be >= 1")
        if self.mu_max <= 0 or self.mu0 > self.mu_max:
            raise ValueError("need 0 < mu0 <= mu_max")
        if self.value is None:
            self.value = self.mu0

    def reset(self) -> None:
        self.value = self.mu0


def mu_step(mu: MuSchedule, event) -> float:
    event = Event(event)
    if event is Event.BATCH:
        mu.value = min(mu.value + mu.batch_increment, mu.mu_max)
    else:
        mu.value = min(mu.value * mu.epoch_multiplier, mu.mu_max)
    return mu.value


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param))

    def apply(self, param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return param - lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class AmConfig:
    variant: Variant = Variant.AM_ADAM
    weight_lr: float = 0.001
    code_lr: float = 0.1
    code_iters: int = 1
    weight_iters: int = 1
    mu: MuSchedule = field(default_factory=MuSchedule)

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.weight_lr <= 0 or self.code_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if self.code_iters < 0 or self.weight_iters < 0:
            raise ValueError("iteration counts must be >= 0")


@dataclass
class MemoryState:
    A: list[np.ndarray]
    B: list[np.ndarray]
    sample_count: int = 0

    @classmethod
    def zeros(cls, net: NetworkState) -> "MemoryState":
        sizes = net.spec.layer_sizes
        L = net.n_hidden
        return cls([np.zeros((sizes[l - 1], sizes[l - 1])) for l in range(1, L + 1)],
                   [np.zeros((sizes[l], sizes[l - 1])) for l in range(1, L + 1)])


def adam_states(net: NetworkState) -> list[AdamState]:
    return [AdamState.like(w) for w in net.weights]


# -- code subproblems ----------------------------------------------------------

def _finite(arr, what, layer):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(what, layer)


def output_code_objective(c, u, Y, Wout, act, mu) -> np.ndarray:
    """Per-sample L(y, act(c), Wout) + mu ||c - u||^2."""
    losses, _ = batch_multinomial(Y, activate(act, c), Wout)
    return losses + mu * np.sum((c - u) ** 2, axis=1)


def hidden_code_objective(c, u, target, Wnext, act, mu) -> np.ndarray:
    """Per-sample mu ||target - Wnext act(c)||^2 + mu ||c - u||^2."""
    r = target - activate(act, c) @ Wnext.T
    return mu * np.sum(r * r, axis=1) + mu * np.sum((c - u) ** 2, axis=1)


def output_code_grad(c, u, Y, Wout, act, mu) -> np.ndarray:
    _, resid = batch_multinomial(Y, activate(act, c), Wout)
    return activate_grad(act, c) * (resid @ Wout) + 2.0 * mu * (c - u)


def hidden_code_grad(c, u, target, Wnext, act, mu) -> np.ndarray:
    r = target - activate(act, c) @ Wnext.T
    return -2.0 * mu * activate_grad(act, c) * (r @ Wnext) + 2.0 * mu * (c - u)


def _sign_candidates(c, u, eps):
    """Per unit and per sign: the code value the update would use and its
    penalty (value - u)^2. The value is u when its sign agrees, otherwise
    the closer of s*eps and the current code (when that already has sign s)."""
    su = activate(Activation.SIGN, u)
    sc = activate(Activation.SIGN, c)
    out = {}
    for sign in (1.0, -1.0):
        agree = su == sign
        value = np.where(agree, u, sign * eps)
        better = (sc == sign) & ~agree & ((c - u) ** 2 < (value - u) ** 2)
        value = np.where(better, c, value)
        out[sign] = (value, (value - u) ** 2)
    return out


def _pair_polish(s, head, cand, W, mu, max_rounds):
    """Best-improvement local search over single and pairwise sign flips for
    an inner layer, whose objective mu||t - W s||^2 + mu sum_i cost_i(s_i)
    is quadratic in s. head = t - s W^T is kept in sync. Only samples that
    improved in the previous round are revisited."""
    s, head = s.copy(), head.copy()
    d = s.shape[1]
    Q = W.T @ W
    diag = np.diag(Q)
    idx = np.arange(d)
    active = np.arange(s.shape[0])
    for _ in range(max_rounds):
        if active.size == 0:
            break
        sa, ha = s[active], head[active]
        delta = -2.0 * sa
        ca = {k: v[1][active] for k, v in cand.items()}
        flip = np.where(sa > 0, ca[-1.0] - ca[1.0], ca[1.0] - ca[-1.0])
        single = mu * (-2.0 * delta * (ha @ W) + delta * delta * diag + flip)
        pair = (single[:, :, None] + single[:, None, :]
                + 2.0 * mu * delta[:, :, None] * delta[:, None, :] * Q)
        pair[:, idx, idx] = single
        flat = pair.reshape(active.size, -1)
        k = flat.argmin(axis=1)
        gain = flat[np.arange(active.size), k]
        go = gain < -1e-12 * (1.0 + mu * np.sum(ha * ha, axis=1))
        if not go.any():
            break
        i, j = np.divmod(k[go], d)
        r = active[go]
        di, dj = delta[go, i], delta[go, j]
        s[r, i] *= -1.0
        head[r] -= di[:, None] * W[:, i].T
        two = i != j
        s[r[two], j[two]] *= -1.0
        head[r[two]] -= dj[two][:, None] * W[:, j[two]].T
        active = r
    return s, head


def binary_code_update(c, u, mu, *, target=None, Wnext=None, Y=None, Wout=None,
                       eps: float = BINARY_EPS, polish_rounds: int = 100) -> np.ndarray:
    """Code update for a sign-activated layer.

    ``u`` is the feedforward input W^l a^{l-1}. Pass ``target``/``Wnext``
    (the next layer's codes and weights) for an inner layer, or ``Y``/``Wout``
    when the layer feeds the output. One coordinate sweep in ascending unit
    order sets each sign entry to whichever of +1/-1 gives the lower
    objective, tracking the next-layer residual (or logits) incrementally.
    For an inner layer the sweep is followed by single/pairwise flip local
    search (``polish_rounds`` = 0 disables it), which escapes most of the
    one-flip local minima the sweep stops in.
    """
    c = np.asarray(c, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    inner = target is not None
    s = activate(Activation.SIGN, c)
    cand = _sign_candidates(c, u, eps)
    W = Wnext if inner else Wout
    # head = target - s W^T (inner) or logits s Wout^T (output)
    head = target - s @ W.T if inner else s @ W.T

    def head_cost(h):
        if inner:
            return np.sum(h * h, axis=1) * mu
        return logsumexp(h) - np.sum(Y * h, axis=1)

    for i in range(c.shape[1]):
        col = W[:, i]
        best = None
        for sign in (1.0, -1.0):
            delta = sign - s[:, i]
            h = head - np.outer(delta, col) if inner else head + np.outer(delta, col)
            obj = head_cost(h) + mu * cand[sign][1][:, i]
            if best is None:
                best = (obj, h, np.full(c.shape[0], sign))
            else:
                take = obj < best[0]
                best = (np.where(take, obj, best[0]),
                        np.where(take[:, None], h, best[1]),
                        np.where(take, sign, best[2]))
        _, head, s[:, i] = best
    if inner and polish_rounds > 0:
        # polish the sweep result and, separately, the penalty-free pattern
        # sign(u); keep whichever ends lower for each sample
        def total(sv, h):
            return mu * (np.sum(h * h, axis=1)
                         + np.where(sv > 0, cand[1.0][1], cand[-1.0][1]).sum(axis=1))

        s, head = _pair_polish(s, head, cand, W, mu, polish_rounds)
        su = activate(Activation.SIGN, u)
        su, hu = _pair_polish(su, target - su @ W.T, cand, W, mu, polish_rounds)
        s = np.where((total(su, hu) < total(s, head))[:, None], su, s)
    return np.where(s > 0, cand[1.0][0], cand[-1.0][0])


def binary_layer_objective(c, u, mu, *, target=None, Wnext=None, Y=None, Wout=None):
    s = activate(Activation.SIGN, c)
    pen = mu * np.sum((c - u) ** 2, axis=1)
    if target is not None:
        r = target - s @ Wnext.T
        return mu * np.sum(r * r, axis=1) + pen
    losses, _ = batch_multinomial(Y, s, Wout)
    return losses + pen


def update_codes(net: NetworkState, x, codes: CodeBatch, Y, cfg: AmConfig,
                 mu: float) -> CodeBatch:
    """Backward sweep l = L..1 of per-layer code subproblems.

    Each layer gets ``cfg.code_iters`` gradient steps of size ``cfg.code_lr``
    (or sign-pattern sweeps for a sign layer); samples are independent.
    """
    if mu <= 0:
        raise ValueError("mu must be > 0")
    L = net.n_hidden
    new = codes.copy()
    if cfg.code_iters == 0:
        return new
    x = np.asarray(x, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    Wout = net.weights[L]
    for l in range(L, 0, -1):
        act = net.act(l)
        a_prev = x if l == 1 else activate(net.act(l - 1), new.codes[l - 2])
        u = a_prev @ net.weights[l - 1].T
        c = new.codes[l - 1]
        if l == L:
            kw = dict(Y=Y, Wout=Wout)
        else:
            kw = dict(target=new.codes[l], Wnext=net.weights[l])
        for _ in range(cfg.code_iters):
            if act is Activation.SIGN:
                c = binary_code_update(c, u, mu, **kw)
            elif l == L:
                c = c - cfg.code_lr * output_code_grad(c, u, Y, Wout, act, mu)
            else:
                c = c - cfg.code_lr * hidden_code_grad(c, u, kw["target"], kw["Wnext"], act, mu)
        _finite(c, "code objective", l)
        new.codes[l - 1] = c
    return new


# -- weight subproblems --------------------------------------------------------

def hidden_weight_grad(W, a_prev, c, mu) -> np.ndarray:
    """Gradient of mu * mean_i ||c_i - W a_i||^2."""
    R = a_prev @ W.T - c
    return (2.0 * mu / c.shape[0]) * (R.T @ a_prev)


def output_weight_grad(Wout, aL, Y) -> np.ndarray:
    """Gradient of the mean multinomial loss w.r.t. the output weights."""
    _, resid = batch_multinomial(Y, aL, Wout)
    return resid.T @ aL / Y.shape[0]


def _adam_layer(W, grad_fn, opt: AdamState, lr, iters, layer):
    for _ in range(iters):
        g = grad_fn(W)
        _finite(g, "gradient", layer)
        W = opt.apply(W, g, lr)
    return W


def update_output_layer(net: NetworkState, codes: CodeBatch, Y, cfg: AmConfig,
                        opt: AdamState) -> np.ndarray:
    L = net.n_hidden
    aL = activate(net.act(L), codes.codes[-1])
    return _adam_layer(net.weights[L], lambda W: output_weight_grad(W, aL, Y),
                       opt, cfg.weight_lr, cfg.weight_iters, L + 1)


def update_weights_sgd(net: NetworkState, x, codes: CodeBatch, Y, cfg: AmConfig,
                       mu: float, opt: list[AdamState],
                       order: Sequence[int] | None = None) -> NetworkState:
    """AM-Adam weight step. Each layer reads only codes and its own weights,
    so ``order`` (1-based layer indices, L+1 = output) does not affect the
    result."""
    if cfg.variant is not Variant.AM_ADAM:
        raise ValueError("update_weights_sgd is the AM-Adam weight step")
    L = net.n_hidden
    acts = activations(net, np.asarray(x, dtype=np.float64), codes)
    Y = np.asarray(Y, dtype=np.float64)
    new = list(net.weights)
    for l in (order or range(1, L + 2)):
        if l == L + 1:
            new[L] = update_output_layer(net, codes, Y, cfg, opt[L])
        else:
            a_prev, c = acts[l - 1], codes.codes[l - 1]
            new[l - 1] = _adam_layer(net.weights[l - 1],
                                     lambda W: hidden_weight_grad(W, a_prev, c, mu),
                                     opt[l - 1], cfg.weight_lr, cfg.weight_iters, l)
    return NetworkState(net.spec, new)


def update_memory(mem: MemoryState, net: NetworkState, x, codes: CodeBatch) -> MemoryState:
    """Accumulate A^l += a^{l-1} a^{l-1}^T and B^l += c^l a^{l-1}^T, one
    sample at a time in ascending order."""
    acts = activations(net, np.asarray(x, dtype=np.float64), codes)
    A = [a.copy() for a in mem.A]
    B = [b.copy() for b in mem.B]
    for l in range(len(A)):
        a_prev, c = acts[l], codes.codes[l]
        for i in range(a_prev.shape[0]):
            A[l] += np.outer(a_prev[i], a_prev[i])
            B[l] += np.outer(c[i], a_prev[i])
    return MemoryState(A, B, mem.sample_count + acts[0].shape[0])


def surrogate(W, A, B) -> float:
    """Tr(W^T W A) - 2 Tr(W^T B)."""
    return float(np.sum((W @ A) * W) - 2.0 * np.sum(W * B))


def bcd_sweep(W, A, B, dead: float = 1e-12) -> np.ndarray:
    """One ascending pass of exact column minimization of the surrogate."""
    W = W.copy()
    for j in range(W.shape[1]):
        ajj = A[j, j]
        if ajj < dead:
            continue
        W[:, j] += (B[:, j] - W @ A[:, j]) / ajj
    return W


def update_weights_mem(net: NetworkState, mem: MemoryState, cfg: AmConfig,
                       order: Sequence[int] | None = None) -> NetworkState:
    """AM-mem hidden-layer step; the output layer is left untouched."""
    if cfg.variant is not Variant.AM_MEM:
        raise ValueError("update_weights_mem is the AM-mem weight step")
    if mem.sample_count < 1:
        raise ValueError("memory is empty")
    new = list(net.weights)
    for l in (order or range(1, net.n_hidden + 1)):
        W = net.weights[l - 1]
        for _ in range(cfg.weight_iters):
            W = bcd_sweep(W, mem.A[l - 1], mem.B[l - 1])
        new[l - 1] = W
    return NetworkState(net.spec, new)


# -- driver --------------------------------------------------------------------

def train_minibatch(net: NetworkState, mem: MemoryState | None, opt: list[AdamState],
                    x, Y, cfg: AmConfig, mu: float, update_weights: bool = True):
    """One AM iteration. Returns (net, mem, {"loss", "accuracy"}) with the
    metrics taken from the forward pass before any update."""
    x = np.asarray(x, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    codes = encode_input(net, x)
    L = net.n_hidden
    aL = activate(net.act(L), codes.codes[-1])
    losses, resid = batch_multinomial(Y, aL, net.weights[L])
    logits = aL @ net.weights[L].T
    metrics = {"loss": float(losses.mean()),
               "accuracy": float(np.mean(logits.argmax(1) == Y.argmax(1)))}
    codes = update_codes(net, x, codes, Y, cfg, mu)
    if not update_weights:
        return net, mem, metrics
    if cfg.variant is Variant.AM_ADAM:
        net = update_weights_sgd(net, x, codes, Y, cfg, mu, opt)
    else:
        if mem is None:
            mem = MemoryState.zeros(net)
        mem = update_memory(mem, net, x, codes)
        out = update_output_layer(net, codes, Y, cfg, opt[L])
        net = update_weights_mem(net, mem, cfg)
        net.weights[L] = out
    return net, mem, metrics


@dataclass
class AmTrainer:
    """Mutable training state for :func:`fit`."""

    net: NetworkState
    cfg: AmConfig
    opt: list[AdamState] = None
    mem: MemoryState | None = None

    def __post_init__(self):
        if self.opt is None:
            self.opt = adam_states(self.net)

    def hooks(self) -> Hooks:
        def step(x, Y):
            self.net, self.mem, m = train_minibatch(self.net, self.mem, self.opt, x, Y,
                                                    self.cfg, self.cfg.mu.value)
            return m["loss"], m["accuracy"]

        return Hooks(step=step,
                     evaluate=lambda x, Y: evaluate(self.net, x, Y),
                     mu=lambda: self.cfg.mu.value,
                     after_batch=lambda: mu_step(self.cfg.mu, Event.BATCH),
                     after_epoch=lambda epoch: mu_step(self.cfg.mu, Event.EPOCH))


def fit(net: NetworkState, train: Dataset, cfg: AmConfig, epochs: int, batch_size: int,
        seed: int, evals=None, eval_every: int = 0) -> tuple[NetworkState, list[MetricsRow]]:
    cfg = replace(cfg, mu=replace(cfg.mu, value=None))
    trainer = AmTrainer(net.copy(), cfg)
    rows = run_epochs(trainer.hooks(), train, epochs, batch_size, seed,
                      cfg.variant.value, evals, eval_every)
    return trainer.net, rows
