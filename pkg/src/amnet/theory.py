"""Empirical check of the stochastic AM convergence rate on quadratic problems.

The test objective is the concave quadratic

    L(theta) = -1/2 sum_d lam ||D_d||^2 - sum_{d<e} D_d^T G_de D_e,   D_d = theta_d - theta_d*

for which the strong-concavity and smoothness moduli coincide (both lam)
and the gradient-stability constant of block d is gamma_d = sum_e ||G_de||_2.
Updates descend f = -L, so with no noise and no coupling each block step
multiplies the error by (1 - eta*lam).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class AdmissibilityError(ValueError):
    pass


@dataclass
class TheoryProblem:
    K: int
    dims: tuple[int, ...]
    theta_star: list[np.ndarray]
    lambda_d: np.ndarray
    mu_d: np.ndarray
    gamma_d: np.ndarray
    radii: np.ndarray
    noise_sigma: float
    coupling: dict = field(default_factory=dict)  # (d, e) -> G_de for d < e

    @property
    def xi(self) -> float:
        return float(np.min(2 * self.mu_d * self.lambda_d / (self.mu_d + self.lambda_d)))

    @property
    def gamma(self) -> float:
        return float(np.max(self.gamma_d))

    @property
    def rate_a(self) -> float:
        """2 xi - 3 gamma (K-1); positive exactly when admissible."""
        return 2 * self.xi - 3 * self.gamma * (self.K - 1)

    def block(self, d: int, e: int) -> np.ndarray:
        """G_de as it multiplies D_e in the gradient of block d."""
        if d < e:
            return self.coupling[(d, e)]
        return self.coupling[(e, d)].T

    def grad_f(self, deltas, d: int) -> np.ndarray:
        """Gradient of f = -L w.r.t. block d at errors ``deltas`` (leading
        axes broadcast)."""
        g = self.lambda_d[d] * deltas[d]
        for e in range(self.K):
            if e != d:
                g = g + deltas[e] @ self.block(d, e).T
        return g

    def objective(self, deltas) -> np.ndarray:
        val = 0.0
        for d in range(self.K):
            val = val - 0.5 * self.lambda_d[d] * np.sum(deltas[d] ** 2, axis=-1)
            for e in range(d + 1, self.K):
                val = val - np.sum(deltas[d] * (deltas[e] @ self.block(d, e).T), axis=-1)
        return val

    def sigma2(self) -> float:
        """Bound on E||grad f^1||^2 over the feasible set, summed over blocks.

        Feasible errors satisfy ||D_d|| <= r_d (ball of radius r_d/2 around a
        start within r_d/2 of the optimum), so the population gradient of
        block d is at most lam_d r_d + sum_e ||G_de|| r_e; the noise adds
        dim_d * noise_sigma^2.
        """
        total = 0.0
        for d in range(self.K):
            g = self.lambda_d[d] * self.radii[d]
            for e in range(self.K):
                if e != d:
                    g += np.linalg.norm(self.block(d, e), 2) * self.radii[e]
            total += g * g + self.dims[d] * self.noise_sigma ** 2
        return float(total)


def check_admissible(p: TheoryProblem) -> None:
    if np.any(p.gamma_d < 0) or np.any(p.gamma_d >= p.lambda_d) or np.any(p.lambda_d > p.mu_d):
        raise AdmissibilityError("need 0 <= gamma_d < lambda_d <= mu_d for every block")
    if p.K > 1:
        limit = 2 * p.xi / (3 * (p.K - 1))
        if not p.gamma < limit:
            raise AdmissibilityError(
                f"inadmissible: gamma = {p.gamma:.6g} must be < 2*xi/(3(K-1)) = {limit:.6g}")


def make_quadratic_problem(K: int, dims, lam: float, coupling: float, seed: int,
                           noise_sigma: float = 0.0, radius: float = 2.0) -> TheoryProblem:
    """Random quadratic with every coupling block scaled to spectral norm
    ``coupling``; raises AdmissibilityError when the rate theorem does not
    apply."""
    if K < 1:
        raise ValueError("K must be >= 1")
    dims = tuple(int(n) for n in (dims if np.ndim(dims) else [dims] * K))
    if len(dims) != K or min(dims) < 1:
        raise ValueError("need one positive dimension per block")
    if lam <= 0 or coupling < 0 or noise_sigma < 0 or radius <= 0:
        raise ValueError("lam and radius must be > 0; coupling and noise >= 0")
    rng = np.random.default_rng(seed)
    theta_star = [rng.standard_normal(n) for n in dims]
    blocks = {}
    gamma = np.zeros(K)
    for d in range(K):
        for e in range(d + 1, K):
            G = rng.standard_normal((dims[d], dims[e]))
            G *= coupling / np.linalg.norm(G, 2) if coupling > 0 else 0.0
            blocks[(d, e)] = G
            gamma[d] += coupling
            gamma[e] += coupling
    p = TheoryProblem(K, dims, theta_star, np.full(K, float(lam)), np.full(K, float(lam)),
                      gamma, np.full(K, float(radius)), float(noise_sigma), blocks)
    check_admissible(p)
    return p


def step_size(p: TheoryProblem, t) -> np.ndarray:
    """eta^t = (3/2) / (A (t+2) + (3/2)(K-1) gamma), A = 2 xi - 3 gamma (K-1)."""
    t = np.asarray(t, dtype=np.float64)
    return 1.5 / (p.rate_a * (t + 2) + 1.5 * (p.K - 1) * p.gamma)


def contraction_q(p: TheoryProblem, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=np.float64)
    return 1 - (1 - 2 * eta * p.xi + 2 * eta * p.gamma * (p.K - 1)) / (1 - (p.K - 1) * eta * p.gamma)


def noise_weight(p: TheoryProblem, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=np.float64)
    return eta * eta / (1 - (p.K - 1) * eta * p.gamma)


def project(theta, center, radius) -> np.ndarray:
    """Euclidean projection onto the ball ||theta - center|| <= radius (rows)."""
    diff = theta - center
    norm = np.linalg.norm(diff, axis=-1, keepdims=True)
    scale = np.where(norm > radius, radius / np.maximum(norm, 1e-300), 1.0)
    return center + diff * scale


def population_step(p: TheoryProblem, deltas, d: int, eta: float) -> np.ndarray:
    """Noiseless block operator in error coordinates: D_d - eta grad_d f."""
    return deltas[d] - eta * p.grad_f(deltas, d)


@dataclass
class AmTrace:
    """block_errors[..., t, d] = ||D_d^t||^2 for t = 0..T; a leading axis
    indexes traces when the trace comes from an ensemble."""
    block_errors: np.ndarray
    steps: np.ndarray
    max_drift: float  # largest ||theta_d^t - theta_d^0|| / (r_d/2) seen

    @property
    def total(self) -> np.ndarray:
        return self.block_errors.sum(axis=-1)

    @property
    def n_traces(self) -> int:
        return 1 if self.block_errors.ndim == 2 else self.block_errors.shape[0]


def _init_and_noise(p: TheoryProblem, T: int, rng, init_fraction: float):
    starts = []
    for d in range(p.K):
        u = rng.standard_normal(p.dims[d])
        u *= init_fraction * p.radii[d] / 2 / np.linalg.norm(u)
        starts.append(u)
    noise = rng.standard_normal((T, sum(p.dims))) * p.noise_sigma
    return starts, noise


def _run(p: TheoryProblem, T: int, starts, noise) -> AmTrace:
    """Vectorized over traces: starts[d] is n x dim_d, noise is n x T x sum(dims)."""
    if T < 0:
        raise ValueError("T must be >= 0")
    check_admissible(p)
    offsets = np.cumsum((0,) + p.dims)
    deltas = [s.copy() for s in starts]
    delta0 = [s.copy() for s in starts]
    half = p.radii / 2
    n = starts[0].shape[0]
    errs = np.empty((n, T + 1, p.K))
    errs[:, 0] = np.stack([np.sum(x * x, axis=1) for x in deltas], axis=1)
    eta = step_size(p, np.arange(T))
    drift = 0.0
    for t in range(T):
        for d in range(p.K):
            g = p.grad_f(deltas, d) + noise[:, t, offsets[d]:offsets[d + 1]]
            deltas[d] = project(deltas[d] - eta[t] * g, delta0[d], half[d])
            drift = max(drift, float(np.max(np.linalg.norm(deltas[d] - delta0[d], axis=1)))
                        / half[d])
        errs[:, t + 1] = np.stack([np.sum(x * x, axis=1) for x in deltas], axis=1)
    return AmTrace(errs, eta, drift)


def stochastic_am_run(p: TheoryProblem, T: int, seed, init_fraction: float = 1.0) -> AmTrace:
    """One trace of block-cyclic projected SGD on f = -L. The start lies at
    distance init_fraction * r_d/2 from the optimum in a random direction."""
    rng = np.random.default_rng(seed)
    starts, noise = _init_and_noise(p, T, rng, init_fraction)
    tr = _run(p, T, [s[None] for s in starts], noise[None])
    return AmTrace(tr.block_errors[0], tr.steps, tr.max_drift)


def run_ensemble(p: TheoryProblem, T: int, n_traces: int, seed: int,
                 init_fraction: float = 1.0) -> AmTrace:
    """n_traces independent traces; trace i equals stochastic_am_run with the
    i-th child of SeedSequence(seed)."""
    if n_traces < 1:
        raise ValueError("need at least one trace")
    children = np.random.SeedSequence(seed).spawn(n_traces)
    draws = [_init_and_noise(p, T, np.random.default_rng(c), init_fraction) for c in children]
    starts = [np.stack([dr[0][d] for dr in draws]) for d in range(p.K)]
    noise = np.stack([dr[1] for dr in draws])
    return _run(p, T, starts, noise)


@dataclass
class BoundReport:
    t: np.ndarray
    mean_error: np.ndarray  # mean of sum_d ||D_d^{t+1}||^2
    recursion_rhs: np.ndarray
    final_rhs: np.ndarray
    recursion_pass: np.ndarray
    final_pass: np.ndarray
    slope: float = float("nan")
    slope_range: tuple[float, float] = (-1.3, -0.7)

    @property
    def passed(self) -> np.ndarray:
        return self.recursion_pass & self.final_pass

    @property
    def slope_ok(self) -> bool:
        return bool(self.slope_range[0] <= self.slope <= self.slope_range[1])

    def failures(self, which: str = "both") -> list[int]:
        mask = {"recursion": self.recursion_pass, "final": self.final_pass,
                "both": self.passed}[which]
        return [int(t) for t in self.t[~mask]]

    def rows(self):
        for i in range(len(self.t)):
            yield (int(self.t[i]), float(self.mean_error[i]), float(self.recursion_rhs[i]),
                   float(self.final_rhs[i]), bool(self.passed[i]))


def _ensemble_totals(trace: AmTrace) -> np.ndarray:
    tot = trace.total
    return tot[None] if tot.ndim == 1 else tot


def _within(diffs: np.ndarray, n_se: float) -> np.ndarray:
    """Mean of per-trace differences (error - bound) is at most n_se standard
    errors above zero; exact comparison with one trace."""
    n = diffs.shape[0]
    mean = diffs.mean(axis=0)
    se = diffs.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else 0.0
    scale = np.maximum(1.0, np.abs(diffs).max(axis=0))
    return mean <= n_se * se + 1e-12 * scale


def check_recursion(trace: AmTrace, p: TheoryProblem, n_se: float = 3.0,
                    sigma2: float | None = None) -> BoundReport:
    """E_{t+1} <= (1 - q^t) E_t + (eta^t)^2 sigma^2 / (1 - (K-1) eta^t gamma)."""
    E = _ensemble_totals(trace)
    T = E.shape[1] - 1
    s2 = p.sigma2() if sigma2 is None else sigma2
    eta = step_size(p, np.arange(T))
    q = contraction_q(p, eta)
    bound = (1 - q) * E[:, :-1] + noise_weight(p, eta) * s2
    ok = _within(E[:, 1:] - bound, n_se)
    fin = _final_bound(E, p, s2)
    return BoundReport(np.arange(T), E[:, 1:].mean(axis=0), bound.mean(axis=0),
                       fin.mean(axis=0), ok, np.ones(T, dtype=bool))


def _final_bound(E: np.ndarray, p: TheoryProblem, s2: float) -> np.ndarray:
    t = np.arange(E.shape[1] - 1)
    return (E[:, :1] * (2.0 / (t + 3)) ** 1.5
            + 9 * s2 / (p.rate_a ** 2 * (t + 3)))


def loglog_slope(t, err) -> float:
    """Least-squares slope of log(err) against log(t + 3) over the final
    decade of iterations."""
    t = np.asarray(t, dtype=np.float64)
    x = t + 3
    sel = x >= x[-1] / 10
    if sel.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[sel]), np.log(np.maximum(err[sel], 1e-300)), 1)[0])


def check_final_rate(trace: AmTrace, p: TheoryProblem, n_se: float = 3.0,
                     sigma2: float | None = None) -> BoundReport:
    """E_{t+1} <= E_0 (2/(t+3))^{3/2} + 9 sigma^2 / (A^2 (t+3)) plus the
    terminal log-log slope of the mean error."""
    E = _ensemble_totals(trace)
    s2 = p.sigma2() if sigma2 is None else sigma2
    bound = _final_bound(E, p, s2)
    ok = _within(E[:, 1:] - bound, n_se)
    rec = check_recursion(trace, p, n_se, s2)
    mean = E[:, 1:].mean(axis=0)
    return BoundReport(rec.t, mean, rec.recursion_rhs, bound.mean(axis=0),
                       np.ones_like(ok), ok, slope=loglog_slope(rec.t, mean))


def check_bounds(trace: AmTrace, p: TheoryProblem, n_se: float = 3.0) -> BoundReport:
    """Both inequalities in one report (the row format used by the CLI)."""
    rec = check_recursion(trace, p, n_se)
    fin = check_final_rate(trace, p, n_se)
    return BoundReport(rec.t, rec.mean_error, rec.recursion_rhs, fin.final_rhs,
                       rec.recursion_pass, fin.final_pass, slope=fin.slope)


def sample_ball_deltas(p: TheoryProblem, n: int, seed: int) -> list[np.ndarray]:
    """n random error vectors per block with ||D_d|| <= r_d."""
    rng = np.random.default_rng(seed)
    out = []
    for d in range(p.K):
        u = rng.standard_normal((n, p.dims[d]))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        out.append(u * p.radii[d] * rng.uniform(0, 1, (n, 1)))
    return out
