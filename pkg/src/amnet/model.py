"""Fully connected network without biases, its codes, and checkpoints.

Layout: ``weights[l]`` maps layer l to layer l+1 and has shape
(m_{l+1}, m_l). Batches are row-major (batch x features), so the
pre-activation code of layer l+1 is ``a_l @ weights[l].T``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Activation, ShapeError, activate, batch_multinomial, softmax


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple[int, ...]
    hidden_activations: tuple[Activation, ...]
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        acts = tuple(Activation.parse(a) for a in self.hidden_activations)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "hidden_activations", acts)
        if len(sizes) < 3:
            raise ValueError("need input, at least one hidden layer, and output sizes")
        if min(sizes) < 1:
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        if len(acts) != len(sizes) - 2:
            raise ValueError(f"{len(sizes) - 2} hidden layers but "
                             f"{len(acts)} activations")

    @property
    def n_hidden(self) -> int:
        return len(self.layer_sizes) - 2


@dataclass
class NetworkState:
    spec: NetworkSpec
    weights: list[np.ndarray]

    @property
    def n_hidden(self) -> int:
        return self.spec.n_hidden

    def act(self, layer: int) -> Activation:
        """Activation of hidden layer ``layer`` (1-based)."""
        return self.spec.hidden_activations[layer - 1]

    def copy(self) -> "NetworkState":
        return NetworkState(self.spec, [w.copy() for w in self.weights])


@dataclass
class CodeBatch:
    """Codes c^1..c^L for a batch; ``codes[l-1]`` is batch x m_l."""

    codes: list[np.ndarray] = field(default_factory=list)

    @property
    def batch(self) -> int:
        return self.codes[0].shape[0]

    def copy(self) -> "CodeBatch":
        return CodeBatch([c.copy() for c in self.codes])


def init_network(spec: NetworkSpec) -> NetworkState:
    rng = np.random.default_rng(spec.seed)
    weights = []
    sizes = spec.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
    return NetworkState(spec, weights)


def activations(net: NetworkState, x: np.ndarray, codes: CodeBatch) -> list[np.ndarray]:
    """[a^0 = x, a^1, ..., a^L] for the given codes."""
    return [x] + [activate(net.act(l), c) for l, c in enumerate(codes.codes, start=1)]


def encode_input(net: NetworkState, x) -> CodeBatch:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.spec.layer_sizes[0]:
        raise ShapeError(f"input must be batch x {net.spec.layer_sizes[0]}, "
                         f"got {x.shape}")
    codes = []
    a = x
    for l in range(1, net.n_hidden + 1):
        c = a @ net.weights[l - 1].T
        codes.append(c)
        a = activate(net.act(l), c)
    return CodeBatch(codes)


def _check_codes(net: NetworkState, codes: CodeBatch):
    if len(codes.codes) != net.n_hidden:
        raise ShapeError(f"expected {net.n_hidden} code layers, got {len(codes.codes)}")
    for l, c in enumerate(codes.codes, start=1):
        if c.ndim != 2 or c.shape[1] != net.spec.layer_sizes[l]:
            raise ShapeError(f"code layer {l} has shape {c.shape}, expected "
                             f"batch x {net.spec.layer_sizes[l]}")


def output_logits(net: NetworkState, codes: CodeBatch) -> np.ndarray:
    _check_codes(net, codes)
    L = net.n_hidden
    return activate(net.act(L), codes.codes[-1]) @ net.weights[L].T


def predict(net: NetworkState, codes: CodeBatch) -> np.ndarray:
    return softmax(output_logits(net, codes))


def batch_loss(net: NetworkState, codes: CodeBatch, labels) -> float:
    Y = np.asarray(labels, dtype=np.float64)
    _check_codes(net, codes)
    L = net.n_hidden
    aL = activate(net.act(L), codes.codes[-1])
    losses, _ = batch_multinomial(Y, aL, net.weights[L])
    return float(losses.mean())


def penalty(net: NetworkState, x, codes: CodeBatch) -> float:
    """Sum over layers and samples of ||c^l - W^l a^{l-1}||^2."""
    acts = activations(net, np.asarray(x, dtype=np.float64), codes)
    total = 0.0
    for l, c in enumerate(codes.codes, start=1):
        r = c - acts[l - 1] @ net.weights[l - 1].T
        total += float(np.sum(r * r))
    return total


def evaluate(net: NetworkState, x, Y) -> tuple[float, float]:
    """Mean loss and accuracy of the plain forward pass."""
    codes = encode_input(net, x)
    logits = output_logits(net, codes)
    losses, _ = batch_multinomial(np.asarray(Y, dtype=np.float64),
                                  activate(net.act(net.n_hidden), codes.codes[-1]),
                                  net.weights[-1])
    acc = float(np.mean(np.argmax(logits, axis=1) == np.argmax(Y, axis=1)))
    return float(losses.mean()), acc


# -- checkpoints -------------------------------------------------------------

MAGIC = b"AMNET1\0\0"
VERSION = 1
_ACT_CODES = {Activation.RELU: 0, Activation.TANH: 1,
              Activation.SIGN: 2, Activation.IDENTITY: 3}
_CODE_ACTS = {v: k for k, v in _ACT_CODES.items()}


class CheckpointError(ValueError):
    pass


def save_checkpoint(net: NetworkState, path) -> None:
    """Header (magic, u32 version, u32 L), u32 sizes, u32 activation tags,
    u64 seed, then row-major little-endian float64 weights."""
    spec = net.spec
    L = spec.n_hidden
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, L)
    out += struct.pack(f"<{L + 2}I", *spec.layer_sizes)
    out += struct.pack(f"<{L}I", *(_ACT_CODES[a] for a in spec.hidden_activations))
    out += struct.pack("<Q", spec.seed & 0xFFFFFFFFFFFFFFFF)
    for w in net.weights:
        out += np.ascontiguousarray(w, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> NetworkState:
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a network checkpoint (bad magic)")
    version, L = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    need = off + 4 * (L + 2) + 4 * L + 8
    if len(buf) < need:
        raise CheckpointError(f"{path}: truncated header at offset {len(buf)}")
    sizes = struct.unpack_from(f"<{L + 2}I", buf, off)
    off += 4 * (L + 2)
    tags = struct.unpack_from(f"<{L}I", buf, off)
    off += 4 * L
    (seed,) = struct.unpack_from("<Q", buf, off)
    off += 8
    try:
        acts = tuple(_CODE_ACTS[t] for t in tags)
    except KeyError as e:
        raise CheckpointError(f"{path}: unknown activation tag {e.args[0]}") from None
    spec = NetworkSpec(sizes, acts, seed)
    weights = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        nbytes = 8 * fan_in * fan_out
        if off + nbytes > len(buf):
            raise CheckpointError(f"{path}: truncated weights at offset {off}")
        w = np.frombuffer(buf, dtype="<f8", count=fan_in * fan_out, offset=off)
        weights.append(w.reshape(fan_out, fan_in).astype(np.float64))
        off += nbytes
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return NetworkState(spec, weights)
