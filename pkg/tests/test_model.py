import numpy as np
import pytest

from amnet.model import (CheckpointError, CodeBatch, NetworkSpec, batch_loss, encode_input,
                         init_network, load_checkpoint, penalty, predict, save_checkpoint)
from amnet.numerics import ShapeError, multinomial_loss, softmax

from conftest import onehot


def test_spec_validation():
    with pytest.raises(ValueError):
        NetworkSpec((4, 2), ())
    with pytest.raises(ValueError):
        NetworkSpec((4, 3, 2), ("relu", "relu"))
    with pytest.raises(ValueError):
        NetworkSpec((4, 0, 2), ("relu",))


def test_init_deterministic_and_shapes():
    spec = NetworkSpec((4, 3, 2), ("relu",), seed=42)
    a, b = init_network(spec), init_network(spec)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.weights, b.weights))
    assert a.weights[0].shape == (3, 4) and a.weights[1].shape == (2, 3)
    assert np.all(np.abs(a.weights[0]) <= 0.5)


def test_encode_zero_weights():
    net = init_network(NetworkSpec((3, 4, 4, 2), ("tanh", "relu")))
    net.weights = [np.zeros_like(w) for w in net.weights]
    codes = encode_input(net, np.ones((2, 3)))
    assert all(np.all(c == 0) for c in codes.codes)


def test_encode_single_layer_definition(rng):
    net = init_network(NetworkSpec((3, 4, 2), ("relu",), seed=1))
    x = rng.standard_normal((5, 3))
    assert np.array_equal(encode_input(net, x).codes[0], x @ net.weights[0].T)


def test_encode_penalty_zero(rng):
    net = init_network(NetworkSpec((6, 5, 4, 3), ("tanh", "relu"), seed=3))
    x = rng.standard_normal((5, 6))
    assert penalty(net, x, encode_input(net, x)) < 1e-20


def test_encode_shape_error():
    net = init_network(NetworkSpec((3, 4, 2), ("relu",)))
    with pytest.raises(ShapeError):
        encode_input(net, np.ones((2, 4)))


def test_predict(rng):
    net = init_network(NetworkSpec((3, 4, 5), ("relu",), seed=2))
    x = rng.standard_normal((6, 3))
    codes = encode_input(net, x)
    P = predict(net, codes)
    assert np.allclose(P.sum(1), 1, atol=1e-12)
    for i in range(6):  # naive per-sample logits
        a = np.maximum(x[i] @ net.weights[0].T, 0)
        logits = [sum(net.weights[1][k, j] * a[j] for j in range(4)) for k in range(5)]
        assert np.argmax(P[i]) == int(np.argmax(logits))
    net.weights[1][:] = 0
    assert np.allclose(predict(net, codes), 0.2)


def test_batch_loss(rng):
    net = init_network(NetworkSpec((3, 4, 10), ("relu",), seed=2))
    x = rng.standard_normal((4, 3))
    Y = onehot(rng.integers(0, 10, 4), 10)
    codes = encode_input(net, x)
    one = encode_input(net, x[:1])
    a = np.maximum(one.codes[0][0], 0)
    assert batch_loss(net, one, Y[:1]) == pytest.approx(multinomial_loss(Y[0], a, net.weights[1].T), abs=1e-14)
    perm = np.array([2, 0, 3, 1])
    assert batch_loss(net, CodeBatch([codes.codes[0][perm]]), Y[perm]) == pytest.approx(batch_loss(net, codes, Y), abs=1e-14)
    net.weights[1][:] = 0
    assert batch_loss(net, codes, Y) == pytest.approx(np.log(10))


def test_checkpoint_round_trip(tmp_path):
    net = init_network(NetworkSpec((5, 4, 3, 2), ("relu", "sign"), seed=7))
    p = tmp_path / "net.ckpt"
    save_checkpoint(net, p)
    back = load_checkpoint(p)
    assert back.spec == net.spec
    assert all(a.tobytes() == b.tobytes() for a, b in zip(net.weights, back.weights))
    assert p.read_bytes()[:8] == b"AMNET1\0\0"


def test_checkpoint_rejects_damage(tmp_path):
    net = init_network(NetworkSpec((5, 4, 2), ("relu",), seed=7))
    p = tmp_path / "net.ckpt"
    save_checkpoint(net, p)
    raw = p.read_bytes()
    for bad in (raw[:-1], raw + b"\0", b"XXXXXXXX" + raw[8:], raw[:20]):
        p.write_bytes(bad)
        with pytest.raises(CheckpointError):
            load_checkpoint(p)
