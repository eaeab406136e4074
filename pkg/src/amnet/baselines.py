"""Backpropagation trainers (SGD with epoch-wise decay, and Adam)."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .altmin import AdamState, adam_states
from .datasets import Dataset
from .loop import Hooks, MetricsRow, run_epochs
from .model import NetworkState, encode_input, evaluate
from .numerics import Activation, UnsupportedDerivative, activate, activate_grad, batch_multinomial


class Algo(str, enum.Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass
class BaselineConfig:
    algo: Algo = Algo.ADAM
    lr: float = 0.001
    sgd_epoch_decay: float = 0.9

    def __post_init__(self):
        self.algo = Algo(self.algo)
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 < self.sgd_epoch_decay <= 1.0:
            raise ValueError("sgd_epoch_decay must lie in (0, 1]")


def backprop_grads(net: NetworkState, x, Y) -> list[np.ndarray]:
    """Gradients of the mean multinomial loss w.r.t. every weight matrix."""
    if any(a is Activation.SIGN for a in net.spec.hidden_activations):
        raise UnsupportedDerivative("backprop cannot train a sign-activated layer")
    x = np.asarray(x, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    codes = encode_input(net, x).codes
    L = net.n_hidden
    acts = [x] + [activate(net.act(l), c) for l, c in enumerate(codes, start=1)]
    n = x.shape[0]
    _, resid = batch_multinomial(Y, acts[L], net.weights[L])
    grads = [None] * (L + 1)
    grads[L] = resid.T @ acts[L] / n
    delta = (resid @ net.weights[L]) * activate_grad(net.act(L), codes[L - 1])
    for l in range(L, 0, -1):
        grads[l - 1] = delta.T @ acts[l - 1] / n
        if l > 1:
            delta = (delta @ net.weights[l - 1]) * activate_grad(net.act(l - 1), codes[l - 2])
    return grads


@dataclass
class BaselineTrainer:
    net: NetworkState
    cfg: BaselineConfig
    opt: list[AdamState] | None = None
    lr: float | None = None

    def __post_init__(self):
        self.lr = self.cfg.lr
        if self.cfg.algo is Algo.ADAM and self.opt is None:
            self.opt = adam_states(self.net)

    def step(self, x, Y):
        loss, acc = evaluate(self.net, x, Y)
        grads = backprop_grads(self.net, x, Y)
        if self.cfg.algo is Algo.SGD:
            self.net.weights = [w - self.lr * g for w, g in zip(self.net.weights, grads)]
        else:
            self.net.weights = [o.apply(w, g, self.lr)
                                for o, w, g in zip(self.opt, self.net.weights, grads)]
        return loss, acc

    def end_epoch(self, epoch):
        if self.cfg.algo is Algo.SGD:
            self.lr *= self.cfg.sgd_epoch_decay

    def hooks(self) -> Hooks:
        return Hooks(step=self.step,
                     evaluate=lambda x, Y: evaluate(self.net, x, Y),
                     after_epoch=self.end_epoch)


def baseline_fit(net: NetworkState, train: Dataset, cfg: BaselineConfig, epochs: int,
                 batch_size: int, seed: int, evals=None,
                 eval_every: int = 0) -> tuple[NetworkState, list[MetricsRow]]:
    trainer = BaselineTrainer(net.copy(), cfg)
    rows = run_epochs(trainer.hooks(), train, epochs, batch_size, seed,
                      cfg.algo.value, evals, eval_every)
    return trainer.net, rows
