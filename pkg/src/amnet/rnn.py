"""Elman RNN for sequence classification, trained by AM or by BPTT.

Unit: c^t = U x^t + W h^{t-1} + b, h^t = sigma(c^t), z^t = V h^t with
h^0 = 0. The class is predicted once, from C relu(z) where z stacks the
scalar outputs of all T steps. AM treats every c^t and the output
sequence z as free codes.

Shapes: x is batch x T x p, codes c are batch x T x d, z is batch x T.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .altmin import AdamState, AmConfig, Event, NonFiniteError, mu_step
from .baselines import Algo, BaselineConfig
from .datasets import Dataset
from .loop import Hooks, MetricsRow, run_epochs
from .numerics import Activation, ShapeError, activate, activate_grad, batch_multinomial

PARAMS = ("U", "W", "b", "V", "C")


@dataclass
class ElmanState:
    U: np.ndarray  # d x p
    W: np.ndarray  # d x d
    b: np.ndarray  # d
    V: np.ndarray  # 1 x d
    C: np.ndarray  # m x T
    act: Activation = Activation.TANH

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def T(self) -> int:
        return self.C.shape[1]

    def copy(self) -> "ElmanState":
        return replace(self, **{k: getattr(self, k).copy() for k in PARAMS})

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAMS}


@dataclass
class RnnCodeBatch:
    c: np.ndarray  # batch x T x d
    z: np.ndarray  # batch x T

    def copy(self) -> "RnnCodeBatch":
        return RnnCodeBatch(self.c.copy(), self.z.copy())


def init_elman(d: int, T: int, p: int, m: int, seed: int,
               act=Activation.TANH) -> ElmanState:
    rng = np.random.default_rng(seed)

    def u(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return ElmanState(U=u((d, p), p), W=u((d, d), d), b=u((d,), d),
                      V=u((1, d), d), C=u((m, T), T), act=Activation.parse(act))


def _check_x(st: ElmanState, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != st.T or x.shape[2] != st.U.shape[1]:
        raise ShapeError(f"sequences must be batch x {st.T} x {st.U.shape[1]}, got {x.shape}")
    return x


def rnn_encode(st: ElmanState, x) -> RnnCodeBatch:
    x = _check_x(st, x)
    n, T, _ = x.shape
    c = np.empty((n, T, st.d))
    h = np.zeros((n, st.d))
    for t in range(T):
        c[:, t] = x[:, t] @ st.U.T + h @ st.W.T + st.b
        h = activate(st.act, c[:, t])
    z = activate(st.act, c) @ st.V[0]
    return RnnCodeBatch(c, z)


def _prev_hidden(st: ElmanState, c: np.ndarray) -> np.ndarray:
    """h^{t-1} for every t (zeros at t = 1)."""
    h = activate(st.act, c)
    prev = np.zeros_like(h)
    prev[:, 1:] = h[:, :-1]
    return prev


def rnn_penalty(st: ElmanState, x, codes: RnnCodeBatch) -> float:
    x = _check_x(st, x)
    pred = x @ st.U.T + _prev_hidden(st, codes.c) @ st.W.T + st.b
    zr = codes.z - activate(st.act, codes.c) @ st.V[0]
    return float(np.sum((codes.c - pred) ** 2) + np.sum(zr ** 2))


def rnn_losses(st: ElmanState, z, Y) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != st.T:
        raise ShapeError(f"z must be batch x {st.T}, got {z.shape}")
    return batch_multinomial(np.asarray(Y, dtype=np.float64), np.maximum(z, 0.0), st.C)


def rnn_loss(st: ElmanState, z, Y) -> float:
    return float(rnn_losses(st, z, Y)[0].mean())


def rnn_loss_grad_z(st: ElmanState, z, Y) -> np.ndarray:
    """Gradient of the mean loss w.r.t. z (ReLU'(0) = 0)."""
    _, resid = rnn_losses(st, z, Y)
    return (resid @ st.C) * (np.asarray(z) > 0) / z.shape[0]


def rnn_evaluate(st: ElmanState, x, Y) -> tuple[float, float]:
    codes = rnn_encode(st, x)
    losses, resid = rnn_losses(st, codes.z, Y)
    probs = resid + Y
    return float(losses.mean()), float(np.mean(probs.argmax(1) == np.asarray(Y).argmax(1)))


# -- AM code step ----------------------------------------------------------------

def z_objective(st: ElmanState, z, c, Y, mu) -> np.ndarray:
    losses, _ = rnn_losses(st, z, Y)
    e = z - activate(st.act, c) @ st.V[0]
    return losses + mu * np.sum(e * e, axis=1)


def z_grad(st: ElmanState, z, c, Y, mu) -> np.ndarray:
    """Per-sample gradient of L(y, relu(z), C) + mu ||z - V sigma(c)||^2."""
    _, resid = rnn_losses(st, z, Y)
    return (resid @ st.C) * (z > 0) + 2.0 * mu * (z - activate(st.act, c) @ st.V[0])


def step_code_objective(st: ElmanState, ct, t, x, codes: RnnCodeBatch, mu) -> np.ndarray:
    """Per-sample objective of the time-t code subproblem."""
    T = st.T
    h_prev = activate(st.act, codes.c[:, t - 1]) if t > 0 else np.zeros_like(ct)
    own = ct - (x[:, t] @ st.U.T + h_prev @ st.W.T + st.b)
    h = activate(st.act, ct)
    zr = codes.z[:, t] - h @ st.V[0]
    obj = mu * np.sum(own * own, axis=1) + mu * zr * zr
    if t < T - 1:
        nxt = codes.c[:, t + 1] - (x[:, t + 1] @ st.U.T + h @ st.W.T + st.b)
        obj = obj + mu * np.sum(nxt * nxt, axis=1)
    return obj


def step_code_grad(st: ElmanState, ct, t, x, codes: RnnCodeBatch, mu) -> np.ndarray:
    T = st.T
    h_prev = activate(st.act, codes.c[:, t - 1]) if t > 0 else np.zeros_like(ct)
    own = ct - (x[:, t] @ st.U.T + h_prev @ st.W.T + st.b)
    h = activate(st.act, ct)
    dh = -2.0 * mu * np.outer(codes.z[:, t] - h @ st.V[0], st.V[0])
    if t < T - 1:
        nxt = codes.c[:, t + 1] - (x[:, t + 1] @ st.U.T + h @ st.W.T + st.b)
        dh = dh - 2.0 * mu * (nxt @ st.W)
    return activate_grad(st.act, ct) * dh + 2.0 * mu * own


def rnn_update_codes(st: ElmanState, codes: RnnCodeBatch, x, Y, cfg: AmConfig,
                     mu: float) -> RnnCodeBatch:
    """z first (loss information flows back first), then c^T down to c^1."""
    if mu <= 0:
        raise ValueError("mu must be > 0")
    new = codes.copy()
    if cfg.code_iters == 0:
        return new
    x = _check_x(st, x)
    Y = np.asarray(Y, dtype=np.float64)
    for _ in range(cfg.code_iters):
        new.z = new.z - cfg.code_lr * z_grad(st, new.z, new.c, Y, mu)
    if not np.all(np.isfinite(new.z)):
        raise NonFiniteError("output-sequence code", st.T + 1)
    for t in range(st.T - 1, -1, -1):
        ct = new.c[:, t]
        for _ in range(cfg.code_iters):
            ct = ct - cfg.code_lr * step_code_grad(st, ct, t, x, new, mu)
        if not np.all(np.isfinite(ct)):
            raise NonFiniteError("code", t + 1)
        new.c[:, t] = ct
    return new


# -- AM weight step --------------------------------------------------------------

def recurrent_block_grads(st: ElmanState, x, codes: RnnCodeBatch, mu) -> dict[str, np.ndarray]:
    """Gradients of mu * mean_n sum_t ||c^t - U x^t - W h^{t-1} - b||^2."""
    n = x.shape[0]
    hp = _prev_hidden(st, codes.c)
    R = x @ st.U.T + hp @ st.W.T + st.b - codes.c
    k = 2.0 * mu / n
    return {"U": k * np.einsum("ntd,ntp->dp", R, x),
            "W": k * np.einsum("ntd,nte->de", R, hp),
            "b": k * R.sum(axis=(0, 1))}


def readout_block_grad(st: ElmanState, codes: RnnCodeBatch, mu) -> np.ndarray:
    """Gradient of mu * mean_n sum_t (z^t - V h^t)^2 w.r.t. V."""
    h = activate(st.act, codes.c)
    e = h @ st.V[0] - codes.z
    return (2.0 * mu / e.shape[0]) * np.einsum("nt,ntd->d", e, h)[None, :]


def classifier_block_grad(st: ElmanState, codes: RnnCodeBatch, Y) -> np.ndarray:
    _, resid = rnn_losses(st, codes.z, Y)
    return resid.T @ np.maximum(codes.z, 0.0) / resid.shape[0]


def rnn_weight_objectives(st: ElmanState, x, codes: RnnCodeBatch, Y, mu) -> dict[str, float]:
    n = x.shape[0]
    hp = _prev_hidden(st, codes.c)
    R = x @ st.U.T + hp @ st.W.T + st.b - codes.c
    e = activate(st.act, codes.c) @ st.V[0] - codes.z
    return {"recurrent": mu * float(np.sum(R * R)) / n,
            "readout": mu * float(np.sum(e * e)) / n,
            "classifier": rnn_loss(st, codes.z, Y)}


def rnn_adam_states(st: ElmanState) -> dict[str, AdamState]:
    return {k: AdamState.like(v) for k, v in st.params().items()}


def rnn_update_weights(st: ElmanState, codes: RnnCodeBatch, x, Y, cfg: AmConfig, mu: float,
                       opt: dict[str, AdamState],
                       order=("recurrent", "readout", "classifier")) -> ElmanState:
    """Independent Adam steps on the (U, W, b), V and C blocks; each block
    reads only the codes and its own parameters."""
    x = _check_x(st, x)
    Y = np.asarray(Y, dtype=np.float64)
    out = st.copy()
    for block in order:
        cur = st.copy()
        for _ in range(cfg.weight_iters):
            if block == "recurrent":
                g = recurrent_block_grads(cur, x, codes, mu)
            elif block == "readout":
                g = {"V": readout_block_grad(cur, codes, mu)}
            elif block == "classifier":
                g = {"C": classifier_block_grad(cur, codes, Y)}
            else:
                raise ValueError(f"unknown block {block!r}")
            for k, gk in g.items():
                if not np.all(np.isfinite(gk)):
                    raise NonFiniteError(f"{k} gradient", 0)
                setattr(cur, k, opt[k].apply(getattr(cur, k), gk, cfg.weight_lr))
        names = {"recurrent": ("U", "W", "b"), "readout": ("V",),
                 "classifier": ("C",)}[block]
        for k in names:
            setattr(out, k, getattr(cur, k))
    return out


def rnn_train_minibatch(st, opt, x, Y, cfg: AmConfig, mu: float):
    x = _check_x(st, x)
    codes = rnn_encode(st, x)
    losses, resid = rnn_losses(st, codes.z, Y)
    metrics = {"loss": float(losses.mean()),
               "accuracy": float(np.mean((resid + Y).argmax(1) == np.asarray(Y).argmax(1)))}
    codes = rnn_update_codes(st, codes, x, Y, cfg, mu)
    st = rnn_update_weights(st, codes, x, Y, cfg, mu, opt)
    return st, metrics


def rnn_fit(st: ElmanState, train: Dataset, cfg: AmConfig, epochs: int, batch_size: int,
            seed: int, evals=None, eval_every: int = 0) -> tuple[ElmanState, list[MetricsRow]]:
    cfg = replace(cfg, mu=replace(cfg.mu, value=None))
    state = {"st": st.copy()}
    opt = rnn_adam_states(st)

    def step(x, Y):
        state["st"], m = rnn_train_minibatch(state["st"], opt, x, Y, cfg, cfg.mu.value)
        return m["loss"], m["accuracy"]

    hooks = Hooks(step=step, evaluate=lambda x, Y: rnn_evaluate(state["st"], x, Y),
                  mu=lambda: cfg.mu.value,
                  after_batch=lambda: mu_step(cfg.mu, Event.BATCH),
                  after_epoch=lambda e: mu_step(cfg.mu, Event.EPOCH))
    rows = run_epochs(hooks, train, epochs, batch_size, seed, "am-adam", evals, eval_every)
    return state["st"], rows


# -- BPTT baseline ---------------------------------------------------------------

def bptt_grads(st: ElmanState, x, Y) -> dict[str, np.ndarray]:
    """Exact gradients of the mean loss by backpropagation through time."""
    x = _check_x(st, x)
    Y = np.asarray(Y, dtype=np.float64)
    n, T, _ = x.shape
    codes = rnn_encode(st, x)
    c, z = codes.c, codes.z
    h = activate(st.act, c)
    hp = _prev_hidden(st, c)
    _, resid = rnn_losses(st, z, Y)
    dlogits = resid / n
    g = {"C": dlogits.T @ np.maximum(z, 0.0)}
    dz = (dlogits @ st.C) * (z > 0)
    g["V"] = np.einsum("nt,ntd->d", dz, h)[None, :]
    dc = np.zeros_like(c)
    carry = np.zeros((n, st.d))
    for t in range(T - 1, -1, -1):
        dh = np.outer(dz[:, t], st.V[0]) + carry
        dc[:, t] = dh * activate_grad(st.act, c[:, t])
        carry = dc[:, t] @ st.W
    g["U"] = np.einsum("ntd,ntp->dp", dc, x)
    g["W"] = np.einsum("ntd,nte->de", dc, hp)
    g["b"] = dc.sum(axis=(0, 1))
    return g


def bptt_fit(st: ElmanState, train: Dataset, cfg: BaselineConfig, epochs: int,
             batch_size: int, seed: int, evals=None,
             eval_every: int = 0) -> tuple[ElmanState, list[MetricsRow]]:
    state = {"st": st.copy(), "lr": cfg.lr}
    opt = rnn_adam_states(st)

    def step(x, Y):
        cur = state["st"]
        loss, acc = rnn_evaluate(cur, x, Y)
        g = bptt_grads(cur, x, Y)
        new = cur.copy()
        for k, gk in g.items():
            if cfg.algo is Algo.SGD:
                setattr(new, k, getattr(cur, k) - state["lr"] * gk)
            else:
                setattr(new, k, opt[k].apply(getattr(cur, k), gk, state["lr"]))
        state["st"] = new
        return loss, acc

    def after_epoch(epoch):
        if cfg.algo is Algo.SGD:
            state["lr"] *= cfg.sgd_epoch_decay

    hooks = Hooks(step=step, evaluate=lambda x, Y: rnn_evaluate(state["st"], x, Y),
                  after_epoch=after_epoch)
    rows = run_epochs(hooks, train, epochs, batch_size, seed, cfg.algo.value, evals, eval_every)
    return state["st"], rows
