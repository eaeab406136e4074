import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from amnet.gradcheck import fd_grad, rel_error
from amnet.numerics import (Activation, ShapeError, UnsupportedDerivative, activate,
                            activate_grad, code_objective, code_objective_grad,
                            code_objective_hessian, lambda_max, lipschitz_bound, matmul,
                            multinomial_grads, multinomial_loss, softmax)

seeds = st.integers(0, 2**31 - 1)


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def test_matmul_identity_and_zeros(rng):
    M = rng.standard_normal((2, 4))
    assert np.array_equal(matmul(np.eye(2), M), M)
    assert np.array_equal(matmul(np.zeros((2, 3)), rng.standard_normal((3, 4))), np.zeros((2, 4)))


def test_matmul_against_triple_loop(rng):
    a, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    assert np.max(np.abs(matmul(a, b) - triple_loop(a, b))) < 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"2x3.*2x2"):
        matmul(np.zeros((2, 3)), np.zeros((2, 2)))


def test_activate_examples():
    assert activate("relu", [-1, 0, 2]).tolist() == [0, 0, 2]
    assert activate("sign", [-0.5, 0, 3]).tolist() == [-1, 1, 1]
    assert activate("tanh", [0]).tolist() == [0]
    assert activate("identity", [1.5, -2]).tolist() == [1.5, -2]


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20))
def test_activation_ranges(vals):
    v = np.array(vals)
    assert set(np.unique(activate("sign", v))) <= {-1.0, 1.0}
    assert np.all(activate("relu", v) >= 0)
    assert np.all(np.abs(activate("tanh", v)) <= 1)


def test_activate_grad_examples():
    assert activate_grad("relu", [-1, 0, 2]).tolist() == [0, 0, 1]
    assert activate_grad("tanh", [0]).tolist() == [1]
    with pytest.raises(UnsupportedDerivative):
        activate_grad(Activation.SIGN, [1.0])


def test_tanh_grad_matches_fd(rng):
    v = rng.uniform(-3, 3, 20)
    h = 1e-6
    fd = (np.tanh(v + h) - np.tanh(v - h)) / (2 * h)
    assert np.max(np.abs(activate_grad("tanh", v) - fd) / np.abs(fd)) < 1e-7


def test_multinomial_uniform_loss():
    assert multinomial_loss(np.eye(10)[3], np.arange(4.0), np.zeros((4, 10))) == pytest.approx(np.log(10), abs=1e-12)


def test_multinomial_two_class_value():
    # logits 5 and 0, true class first: ln(1 + e^-5)
    W = np.array([[5.0, 0.0]])
    assert multinomial_loss(np.array([1.0, 0.0]), np.array([1.0]), W) == pytest.approx(0.006715348489117967, abs=1e-15)


def test_multinomial_rejects_non_onehot():
    with pytest.raises(ValueError):
        multinomial_loss(np.array([0.5, 0.5]), np.ones(2), np.zeros((2, 2)))


@given(seeds, st.floats(-50, 50))
def test_multinomial_shift_invariance(seed, kappa):
    r = np.random.default_rng(seed)
    x, W = r.standard_normal(3), r.standard_normal((3, 4))
    y = np.eye(4)[r.integers(4)]
    # a constant added to every logit: extra feature with value 1 and equal weights
    x2 = np.append(x, 1.0)
    W2 = np.vstack([W, np.full(4, kappa)])
    assert multinomial_loss(y, x2, W2) == pytest.approx(multinomial_loss(y, x, W), abs=1e-12)


def test_multinomial_large_logits_finite():
    W = np.array([[1000.0, -1000.0]])
    assert np.isfinite(multinomial_loss(np.array([0.0, 1.0]), np.array([1.0]), W))


def test_grads_at_zero_weights(rng):
    x = rng.standard_normal(3)
    y = np.eye(4)[1]
    gx, gW = multinomial_grads(y, x, np.zeros((3, 4)))
    assert np.array_equal(gx, np.zeros(3))
    assert np.allclose(gW, np.outer(x, 0.25 - y), atol=1e-15)


def test_grads_match_fd_at_20_points(rng):
    for _ in range(20):
        x, W = rng.standard_normal(4), rng.standard_normal((4, 3))
        y = np.eye(3)[rng.integers(3)]
        gx, gW = multinomial_grads(y, x, W)
        assert rel_error(gx, fd_grad(lambda v: multinomial_loss(y, v, W), x)) < 1e-6
        assert rel_error(gW, fd_grad(lambda v: multinomial_loss(y, x, v), W)) < 1e-6


def test_grads_vanish_when_prediction_matches():
    # huge margin for the true class: p is y to double precision
    W = np.array([[40.0, -40.0]])
    gx, gW = multinomial_grads(np.array([1.0, 0.0]), np.array([1.0]), W)
    assert np.max(np.abs(gx)) < 1e-8 and np.max(np.abs(gW)) < 1e-8


@given(st.lists(st.floats(-700, 700), min_size=2, max_size=12))
def test_softmax_is_distribution(vals):
    p = softmax(np.array([vals]))
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12


def test_lambda_max_examples(rng):
    assert lambda_max(np.diag([1.0, 3.0, 2.0])) == pytest.approx(3.0, rel=1e-10)
    assert lambda_max(np.eye(6)) == pytest.approx(1.0, rel=1e-10)
    A = rng.standard_normal((5, 5))
    M = A.T @ A
    roots = np.roots(np.poly(M)).real  # characteristic polynomial oracle
    assert lambda_max(M) == pytest.approx(roots.max(), abs=1e-8)


def test_lambda_max_errors():
    with pytest.raises(ShapeError):
        lambda_max(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        lambda_max(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_lipschitz_examples():
    assert lipschitz_bound(np.eye(2), np.zeros((2, 1))) == pytest.approx(1.0)
    assert lipschitz_bound(np.diag([2.0, 1.0]), np.array([[3.0], [0.0]])) == pytest.approx(22.0, rel=1e-10)


def test_code_objective_grad_fd(rng):
    for _ in range(20):
        D, W = rng.standard_normal((4, 3)), rng.standard_normal((3, 2))
        c, x = rng.standard_normal(3), rng.standard_normal(4)
        y = np.eye(3)[rng.integers(3)]
        assert rel_error(code_objective_grad(c, D, x, y, W),
                         fd_grad(lambda v: code_objective(v, D, x, y, W), c)) < 1e-6


def test_code_objective_hessian_fd(rng):
    D, W = rng.standard_normal((4, 3)), rng.standard_normal((3, 2))
    c, x = rng.standard_normal(3), rng.standard_normal(4)
    y = np.eye(3)[0]
    H = code_objective_hessian(c, D, W)
    num = np.stack([fd_grad(lambda v: code_objective_grad(v, D, x, y, W)[i], c) for i in range(3)])
    assert rel_error(H, num) < 1e-6


@given(seeds)
def test_lipschitz_dominates_hessian(seed):
    r = np.random.default_rng(seed)
    n, k = r.integers(1, 6), r.integers(2, 6)
    D = r.standard_normal((r.integers(1, 6), n)) * r.uniform(0.1, 3)
    W = r.standard_normal((n, k - 1)) * r.uniform(0.1, 3)
    c = r.standard_normal(n) * 3
    top = np.linalg.eigvalsh(code_objective_hessian(c, D, W)).max()
    assert top <= lipschitz_bound(D, W) + 1e-8
