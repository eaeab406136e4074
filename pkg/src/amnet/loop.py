"""Epoch/minibatch orchestration shared by the AM trainers and the baselines.

Both paths use the same shuffling, evaluation cadence and metrics rows so
that comparisons isolate the optimizer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .datasets import Dataset, minibatches, one_hot

METRICS_FIELDS = ("epoch", "batch", "split", "loss", "accuracy", "mu", "algo", "seed")


@dataclass
class MetricsRow:
    epoch: int
    batch: int
    split: str
    loss: float
    accuracy: float
    mu: float
    algo: str
    seed: int


@dataclass
class Hooks:
    """Callbacks driving one training run.

    ``step(x, Y)`` updates the model and returns (loss, accuracy) measured
    before the update; ``evaluate(x, Y)`` returns (loss, accuracy) of the
    current model; ``mu()`` reports the current penalty weight.
    """

    step: Callable[[np.ndarray, np.ndarray], tuple[float, float]]
    evaluate: Callable[[np.ndarray, np.ndarray], tuple[float, float]]
    mu: Callable[[], float] = lambda: 0.0
    after_batch: Callable[[], None] = lambda: None
    after_epoch: Callable[[int], None] = lambda epoch: None


def run_epochs(hooks: Hooks, train: Dataset, epochs: int, batch_size: int, seed: int,
               algo: str, evals: Mapping[str, Dataset] | None = None,
               eval_every: int = 0) -> list[MetricsRow]:
    """Train for ``epochs`` epochs and return the metrics series.

    Row ``batch`` is the global minibatch counter. Evaluation rows are
    emitted before training (epoch 0), every ``eval_every`` minibatches when
    positive, and at the end of every epoch.
    """
    evals = dict(evals) if evals else {"train": train}
    encoded = {name: (ds.features, one_hot(ds.labels, ds.num_classes))
               for name, ds in evals.items()}
    rows: list[MetricsRow] = []

    def evaluate_all(epoch, batch):
        for name, (x, Y) in encoded.items():
            loss, acc = hooks.evaluate(x, Y)
            rows.append(MetricsRow(epoch, batch, name, loss, acc, hooks.mu(), algo, seed))

    evaluate_all(0, 0)
    count = 0
    for epoch in range(epochs):
        for x, Y in minibatches(train, batch_size, seed, epoch):
            mu = hooks.mu()
            loss, acc = hooks.step(x, Y)
            count += 1
            rows.append(MetricsRow(epoch + 1, count, "train", loss, acc, mu, algo, seed))
            hooks.after_batch()
            if eval_every > 0 and count % eval_every == 0:
                evaluate_all(epoch + 1, count)
        hooks.after_epoch(epoch)
        if not (eval_every > 0 and count % eval_every == 0):
            evaluate_all(epoch + 1, count)
    return rows


def format_float(v: float) -> str:
    return repr(float(v))


def write_metrics(path, rows, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_FIELDS)
        for r in rows:
            w.writerow([r.epoch, r.batch, r.split, format_float(r.loss),
                        format_float(r.accuracy), format_float(r.mu), r.algo, r.seed])


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    out = []
    for rec in reader:
        out.append(MetricsRow(int(rec["epoch"]), int(rec["batch"]), rec["split"],
                              float(rec["loss"]), float(rec["accuracy"]),
                              float(rec["mu"]), rec["algo"], int(rec["seed"])))
    return out


def final_eval(rows, split: str) -> MetricsRow:
    matches = [r for r in rows if r.split == split]
    if not matches:
        raise KeyError(f"no rows for split {split!r}")
    return matches[-1]
