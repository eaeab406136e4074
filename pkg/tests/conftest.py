import itertools
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from amnet.altmin import BINARY_EPS
from amnet.config import DEFAULT_MNIST_DIR

settings.register_profile("repo", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)

MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def mnist_dir():
    return Path(os.environ.get("AMNET_MNIST_DIR", DEFAULT_MNIST_DIR))


def have_mnist():
    d = mnist_dir()
    return all((d / f).exists() for f in MNIST_FILES)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def onehot(labels, m):
    Y = np.zeros((len(labels), m))
    Y[np.arange(len(labels)), labels] = 1.0
    return Y


def separable_dataset(n=20, seed=0):
    """Tiny linearly separable 2-class problem (margin >= 1 along x0)."""
    from amnet.datasets import Dataset
    r = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    X = r.standard_normal((n, 3)) * 0.3
    X[:, 0] += np.where(labels == 1, 2.0, -2.0)
    X[:, 2] = 1.0  # bias feature
    return Dataset(X, labels, 2)


def _best_code_cost(u, c0, s):
    """Cheapest (v - u)^2 over the code values of sign s the update may pick."""
    cands = [s * BINARY_EPS]
    if (1.0 if u >= 0 else -1.0) == s:
        cands.append(u)
    if (1.0 if c0 >= 0 else -1.0) == s:
        cands.append(c0)
    return min((v - u) ** 2 for v in cands)


def brute_binary_optimum(c0, u, t, Wn, mu):
    """Exhaustive optimum of the inner sign-layer objective over all 2^d patterns."""
    d = c0.shape[0]
    best = np.inf
    for pattern in itertools.product((1.0, -1.0), repeat=d):
        s = np.array(pattern)
        r = t - Wn @ s
        obj = mu * r @ r + mu * sum(_best_code_cost(u[i], c0[i], s[i]) for i in range(d))
        best = min(best, obj)
    return best


def binary_layer_instance(r, width=8, k=4):
    """A sign-layer subproblem as it arises in training: codes near the
    feedforward value, init-scale next-layer weights, and a next-layer
    target that has moved away from W s by a gradient-sized perturbation."""
    u = r.standard_normal((1, width))
    c0 = u + 0.1 * r.standard_normal((1, width))
    Wn = r.uniform(-1, 1, (k, width)) / np.sqrt(width)
    t = np.sign(u) @ Wn.T + 0.3 * r.standard_normal((1, k))
    return u, c0, t, Wn, r.uniform(0.1, 2)
