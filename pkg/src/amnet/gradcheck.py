"""Finite-difference and closed-form oracle checks across the package.

Every analytic gradient is compared with central differences; the BCD
weight step is compared with the normal-equation solution; the Lipschitz
bound is compared with the exact Hessian spectrum.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import numerics
from .altmin import (bcd_sweep, hidden_code_grad, hidden_code_objective, hidden_weight_grad,
                     output_code_grad, output_code_objective, output_weight_grad)
from .baselines import backprop_grads
from .model import NetworkSpec, evaluate, init_network
from .numerics import (Activation, batch_multinomial, code_objective,
                       code_objective_grad, code_objective_hessian, lipschitz_bound,
                       multinomial_grads, multinomial_loss)
from .rnn import (bptt_grads, classifier_block_grad, init_elman, readout_block_grad,
                  recurrent_block_grads, rnn_encode, rnn_loss, rnn_weight_objectives,
                  step_code_grad, step_code_objective, z_grad, z_objective)

TOL = 1e-5
FAMILIES = ("multinomial", "mlp-backprop", "am-codes", "am-weights", "rnn-blocks",
            "bptt", "bcd-oracle", "lipschitz")


@dataclass
class CheckResult:
    family: str
    name: str
    error: float
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.family}/{self.name} err={self.error:.3e}"


def fd_grad(f, x, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar f at array x."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


@contextlib.contextmanager
def corrupt_derivative(kind, factor: float = 1.5):
    """Test hook: scale the derivative of one activation while active."""
    kind = Activation.parse(kind)
    numerics._GRAD_FAULTS[kind] = factor
    try:
        yield
    finally:
        numerics._GRAD_FAULTS.pop(kind, None)


def _onehot(rng, n, m):
    Y = np.zeros((n, m))
    Y[np.arange(n), rng.integers(0, m, n)] = 1.0
    return Y


def _compare(out, family, name, analytic, numeric, tol=TOL):
    e = rel_error(analytic, numeric)
    out.append(CheckResult(family, name, e, e < tol))


def check_multinomial(rng, out):
    p, m = rng.integers(2, 6), rng.integers(2, 5)
    x, W = rng.standard_normal(p), rng.standard_normal((p, m))
    y = np.eye(m)[rng.integers(m)]
    gx, gW = multinomial_grads(y, x, W)
    _compare(out, "multinomial", "dx", gx, fd_grad(lambda v: multinomial_loss(y, v, W), x))
    _compare(out, "multinomial", "dW", gW, fd_grad(lambda v: multinomial_loss(y, x, v), W))


def check_mlp_backprop(rng, out):
    acts = [Activation.TANH, Activation.RELU, Activation.IDENTITY]
    hidden = [int(rng.integers(2, 5)) for _ in range(3)]
    sizes = (4, *hidden, 3)
    net = init_network(NetworkSpec(sizes, acts, seed=int(rng.integers(1 << 30))))
    x, Y = rng.standard_normal((5, 4)), _onehot(rng, 5, 3)
    grads = backprop_grads(net, x, Y)
    for l, g in enumerate(grads):
        def f(W, l=l):
            trial = net.copy()
            trial.weights[l] = W
            return evaluate(trial, x, Y)[0]
        _compare(out, "mlp-backprop", f"W{l + 1}", g, fd_grad(f, net.weights[l]))


def check_am_codes(rng, out):
    n, d, k, m = 3, 4, 3, 3
    mu = float(rng.uniform(0.1, 2.0))
    c, u = rng.standard_normal((n, d)), rng.standard_normal((n, d))
    Wout, Y = rng.standard_normal((m, d)), _onehot(rng, n, m)
    target, Wnext = rng.standard_normal((n, k)), rng.standard_normal((k, d))
    for act in (Activation.TANH, Activation.RELU):
        _compare(out, "am-codes", f"output-{act.value}",
                 output_code_grad(c, u, Y, Wout, act, mu),
                 fd_grad(lambda v: output_code_objective(v, u, Y, Wout, act, mu).sum(), c))
        _compare(out, "am-codes", f"hidden-{act.value}",
                 hidden_code_grad(c, u, target, Wnext, act, mu),
                 fd_grad(lambda v: hidden_code_objective(v, u, target, Wnext, act, mu).sum(), c))


def check_am_weights(rng, out):
    n, p, d, m = 5, 4, 3, 3
    mu = float(rng.uniform(0.1, 2.0))
    a, c, W = rng.standard_normal((n, p)), rng.standard_normal((n, d)), rng.standard_normal((d, p))
    _compare(out, "am-weights", "hidden", hidden_weight_grad(W, a, c, mu),
             fd_grad(lambda v: mu * np.mean(np.sum((c - a @ v.T) ** 2, axis=1)), W))
    aL, Wout, Y = rng.standard_normal((n, d)), rng.standard_normal((m, d)), _onehot(rng, n, m)
    _compare(out, "am-weights", "output", output_weight_grad(Wout, aL, Y),
             fd_grad(lambda v: batch_multinomial(Y, aL, v)[0].mean(), Wout))


def _rnn_instance(rng, T=5, d=3, p=2, m=3, n=4):
    st = init_elman(d, T, p, m, seed=int(rng.integers(1 << 30)))
    x = rng.standard_normal((n, T, p))
    Y = _onehot(rng, n, m)
    codes = rnn_encode(st, x)
    codes.c += 0.3 * rng.standard_normal(codes.c.shape)
    codes.z += 0.3 * rng.standard_normal(codes.z.shape) + 0.5
    return st, x, Y, codes


def check_rnn_blocks(rng, out):
    st, x, Y, codes = _rnn_instance(rng)
    mu = float(rng.uniform(0.1, 2.0))
    g = recurrent_block_grads(st, x, codes, mu)
    for k in ("U", "W", "b"):
        def f(v, k=k):
            trial = st.copy()
            setattr(trial, k, v)
            return rnn_weight_objectives(trial, x, codes, Y, mu)["recurrent"]
        _compare(out, "rnn-blocks", k, g[k], fd_grad(f, getattr(st, k)))

    def fV(v):
        trial = st.copy()
        trial.V = v
        return rnn_weight_objectives(trial, x, codes, Y, mu)["readout"]
    _compare(out, "rnn-blocks", "V", readout_block_grad(st, codes, mu), fd_grad(fV, st.V))

    def fC(v):
        trial = st.copy()
        trial.C = v
        return rnn_loss(trial, codes.z, Y)
    _compare(out, "rnn-blocks", "C", classifier_block_grad(st, codes, Y), fd_grad(fC, st.C))
    _compare(out, "rnn-blocks", "z-code", z_grad(st, codes.z, codes.c, Y, mu),
             fd_grad(lambda v: z_objective(st, v, codes.c, Y, mu).sum(), codes.z))
    for t in (0, st.T // 2, st.T - 1):
        _compare(out, "rnn-blocks", f"c-code-t{t + 1}",
                 step_code_grad(st, codes.c[:, t], t, x, codes, mu),
                 fd_grad(lambda v: step_code_objective(st, v, t, x, codes, mu).sum(),
                         codes.c[:, t]))


def check_bptt(rng, out):
    st, x, Y, _ = _rnn_instance(rng)
    g = bptt_grads(st, x, Y)
    for k in ("U", "W", "b", "V", "C"):
        def f(v, k=k):
            trial = st.copy()
            setattr(trial, k, v)
            return rnn_loss(trial, rnn_encode(trial, x).z, Y)
        _compare(out, "bptt", k, g[k], fd_grad(f, getattr(st, k)))


def check_bcd(rng, out, size: int = 5, sweeps: int = 500):
    M = rng.standard_normal((size, size))
    A = M @ M.T + size * np.eye(size)
    B = rng.standard_normal((size, size))
    W = np.zeros((size, size))
    for _ in range(sweeps):
        W = bcd_sweep(W, A, B)
    err = float(np.linalg.norm(W - np.linalg.solve(A, B.T).T))
    out.append(CheckResult("bcd-oracle", f"{size}x{size}", err, err < 1e-6))


def check_lipschitz(rng, out):
    n, kk = int(rng.integers(2, 6)), int(rng.integers(2, 5))
    D = rng.standard_normal((int(rng.integers(2, 6)), n))
    W = rng.standard_normal((n, kk - 1))
    c, x = rng.standard_normal(n), rng.standard_normal(D.shape[0])
    y = np.eye(kk)[rng.integers(kk)]
    _compare(out, "lipschitz", "objective-grad", code_objective_grad(c, D, x, y, W),
             fd_grad(lambda v: code_objective(v, D, x, y, W), c))
    H = code_objective_hessian(c, D, W)
    top = float(np.linalg.eigvalsh(H).max())
    bound = lipschitz_bound(D, W)
    out.append(CheckResult("lipschitz", "hessian-bound", max(0.0, top - bound),
                           top <= bound * (1 + 1e-12)))


CHECKS = (check_multinomial, check_mlp_backprop, check_am_codes, check_am_weights,
          check_rnn_blocks, check_bptt, check_bcd, check_lipschitz)


def run_all(seed: int = 0, instances: int = 3) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out: list[CheckResult] = []
    for _ in range(instances):
        for check in CHECKS:
            check(rng, out)
    return out


def summarize(results) -> dict[str, bool]:
    fams: dict[str, bool] = {}
    for r in results:
        fams[r.family] = fams.get(r.family, True) and r.passed
    return fams

