"""Run configuration: flat ``key = value`` text, typed schema and presets.

Syntax: one ``key = value`` per line, ``#`` starts a comment, lists are
written ``[a, b, c]``. Keys whose schema type is scalar may be given a list
in a grid-search config; each element becomes one grid axis value.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

DEFAULT_MNIST_DIR = "/root/data/mnist"


class ConfigError(ValueError):
    pass


# key -> (type, default). Types ending in "s" are inherently list-valued.
SCHEMA: dict[str, tuple[str, object]] = {
    "preset": ("str", None),
    # data
    "dataset": ("str", "mnist"),
    "data_dir": ("str", None),
    "data_path": ("str", None),
    "train_limit": ("int", 10000),
    "train_start": ("int", 0),
    "val_start": ("int", 50000),
    "val_size": ("int", 2000),
    "test_limit": ("int", 0),
    "train_fraction": ("float", 5 / 6),
    "split_seed": ("int", 0),
    "blobs_n": ("int", 600),
    "blobs_p": ("int", 2),
    "blobs_m": ("int", 2),
    "blobs_separation": ("float", 10.0),
    "pool": ("int", 4),
    # architecture
    "model": ("str", "mlp"),
    "hidden": ("ints", [100, 100]),
    "activations": ("strs", ["relu"]),
    "rnn_hidden": ("int", 15),
    # optimization
    "algo": ("str", "am-adam"),
    "lr": ("float", 0.001),
    "code_lr": ("float", 0.1),
    "code_iters": ("int", 1),
    "weight_iters": ("int", 1),
    "mu0": ("float", 0.01),
    "mu_increment": ("float", 0.0),
    "mu_multiplier": ("float", 1.0),
    "mu_max": ("float", 1.0),
    "sgd_decay": ("float", 0.9),
    "batch_size": ("int", 200),
    "epochs": ("int", 10),
    "eval_every": ("int", 0),
    "seed": ("int", 0),
    "seeds": ("ints", None),
    # theory
    "K": ("int", 2),
    "dims": ("ints", [5]),
    "lam": ("float", 1.0),
    "coupling": ("float", 0.1),
    "noise": ("float", 0.5),
    "radius": ("float", 2.0),
    "iterations": ("int", 2000),
    "traces": ("int", 200),
    "init_fraction": ("float", 1.0),
    "n_se": ("float", 3.0),
}

ALGOS = ("sgd", "adam", "am-adam", "am-mem")


def _convert(kind: str, text: str, key: str):
    base = kind.rstrip("s") if kind in ("ints", "strs", "floats") else kind
    try:
        if base == "int":
            v = float(text)
            if v != int(v):
                raise ValueError
            return int(v)
        if base == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected {base}, got {text!r}") from None
    if not text:
        raise ConfigError(f"{key}: empty value")
    return text


def _split_list(text: str, key: str) -> list[str]:
    inner = text[1:-1].strip()
    if not inner:
        raise ConfigError(f"{key}: empty list")
    return [s.strip() for s in inner.split(",")]


def parse_value(key: str, text: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown key {key!r}")
    kind = SCHEMA[key][0]
    text = text.strip()
    is_list = text.startswith("[") and text.endswith("]")
    if kind.endswith("s"):
        items = _split_list(text, key) if is_list else [text]
        return [_convert(kind, s, key) for s in items]
    if is_list:
        return [_convert(kind, s, key) for s in _split_list(text, key)]
    return _convert(kind, text, key)


def parse_config(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        try:
            out[key] = parse_value(key, value)
        except ConfigError as e:
            raise ConfigError(f"line {n}: {e}") from None
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_value(key: str, v) -> str:
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return _fmt(v)


def serialize(cfg: dict) -> str:
    """Canonical form: schema order, one key per line, floats as repr."""
    lines = [f"{k} = {format_value(k, cfg[k])}" for k in SCHEMA if cfg.get(k) is not None]
    return "\n".join(lines) + ("\n" if lines else "")


def grid_axes(cfg: dict) -> dict:
    """Scalar-typed keys given list values (the grid-search axes)."""
    return {k: v for k, v in cfg.items()
            if isinstance(v, list) and not SCHEMA[k][0].endswith("s")}


def resolve(cfg: dict, seed: int | None = None) -> dict:
    """Defaults < preset < explicit keys < ``seed`` override."""
    for k in cfg:
        if k not in SCHEMA:
            raise ConfigError(f"unknown key {k!r}")
    out = {k: v for k, (_, v) in SCHEMA.items()}
    name = cfg.get("preset")
    if name is not None:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}")
        out.update(PRESETS[name])
    out.update({k: v for k, v in cfg.items() if v is not None})
    if seed is not None:
        out["seed"] = seed
    if out["data_dir"] is None:
        out["data_dir"] = os.environ.get("AMNET_MNIST_DIR", DEFAULT_MNIST_DIR)
    validate(out)
    return out


def validate(cfg: dict) -> None:
    axes = grid_axes(cfg)
    for k, v in cfg.items():
        vals = axes.get(k, [v])
        if k == "algo":
            for a in vals:
                if a not in ALGOS:
                    raise ConfigError(f"algo must be one of {', '.join(ALGOS)}; got {a!r}")
        elif k == "dataset":
            for a in vals:
                if a not in ("mnist", "csv", "blobs"):
                    raise ConfigError(f"dataset must be mnist, csv or blobs; got {a!r}")
        elif k == "model":
            for a in vals:
                if a not in ("mlp", "rnn"):
                    raise ConfigError(f"model must be mlp or rnn; got {a!r}")
        elif k in ("batch_size", "K", "traces", "rnn_hidden", "pool"):
            if any(a < 1 for a in vals):
                raise ConfigError(f"{k} must be >= 1")
        elif k in ("epochs", "iterations", "eval_every", "train_limit", "val_size",
                   "test_limit", "code_iters", "weight_iters"):
            if any(a < 0 for a in vals):
                raise ConfigError(f"{k} must be >= 0")
        elif k in ("lr", "code_lr", "mu_max", "lam", "radius"):
            if any(a <= 0 for a in vals):
                raise ConfigError(f"{k} must be > 0")
    if cfg["dataset"] == "csv" and not cfg.get("data_path"):
        raise ConfigError("dataset = csv needs data_path")


def _mlp(hidden, algo, lr, **extra):
    return {"model": "mlp", "hidden": list(hidden), "activations": ["relu"],
            "algo": algo, "lr": lr, **extra}


def _build_presets() -> dict:
    p = {}
    # fully connected nets, single learning rate per algorithm and width
    tables = {
        "mnist": ({"dataset": "mnist"},
                  {100: {"adam": 0.0210, "sgd": 0.2030, "am-adam": 0.1973, "am-mem": 0.1737},
                   500: {"adam": 0.0005, "sgd": 0.1497, "am-adam": 0.1171, "am-mem": 0.1376}}),
        "cifar": ({"dataset": "csv"},
                  {100: {"adam": 0.0029, "sgd": 0.1500, "am-adam": 0.1974, "am-mem": 0.1746},
                   500: {"adam": 0.0002, "sgd": 0.1428, "am-adam": 0.1011, "am-mem": 0.1016}}),
    }
    for data, (base, widths) in tables.items():
        for width, algos in widths.items():
            for algo, lr in algos.items():
                p[f"{data}-mlp-{width}-{algo}"] = {**base, **_mlp([width, width], algo, lr)}
    for algo, lr in {"adam": 0.001, "sgd": 0.050, "am-adam": 0.001}.items():
        p[f"higgs-{algo}"] = {"dataset": "csv", **_mlp([300], algo, lr)}
    # convolutional-study winners, applied to the fully connected net
    am = {"code_lr": 1.0, "mu0": 0.01, "mu_multiplier": 1.1, "mu_max": 1.5,
          "code_iters": 1, "weight_iters": 1, "batch_size": 128}
    for data, inc in (("mnist", 1e-7), ("fashion", 1e-5)):
        base = {"dataset": "mnist"}
        p[f"{data}-cnn-adam"] = {**base, **_mlp([100, 100], "adam", 0.002, batch_size=128)}
        p[f"{data}-cnn-sgd"] = {**base, **_mlp([100, 100], "sgd", 0.02, batch_size=128)}
        p[f"{data}-cnn-am-adam"] = {**base, **_mlp([100, 100], "am-adam", 0.002,
                                                   mu_increment=inc, **am)}
    # Elman RNN on pooled sequences
    rnn = {"dataset": "mnist", "model": "rnn", "batch_size": 1024, "activations": ["tanh"]}
    rnn_am = {"code_iters": 5, "weight_iters": 5, "mu0": 0.01}
    p["rnn15-adam"] = {**rnn, "rnn_hidden": 15, "algo": "adam", "lr": 0.005}
    p["rnn15-sgd"] = {**rnn, "rnn_hidden": 15, "algo": "sgd", "lr": 0.05}
    p["rnn15-am-adam"] = {**rnn, **rnn_am, "rnn_hidden": 15, "algo": "am-adam", "lr": 0.005,
                          "mu_max": 1.0, "mu_multiplier": 1.1, "mu_increment": 0.01}
    p["rnn50-adam"] = {**rnn, "rnn_hidden": 50, "algo": "adam", "lr": 0.005}
    p["rnn50-sgd"] = {**rnn, "rnn_hidden": 50, "algo": "sgd", "lr": 0.005}
    p["rnn50-am-adam"] = {**rnn, **rnn_am, "rnn_hidden": 50, "algo": "am-adam", "lr": 0.005,
                          "mu_max": 1.0, "mu_multiplier": 1.0, "mu_increment": 1e-4}
    # the convolutional-study grid, as a grid-search config
    p["cnn-grid"] = {"dataset": "mnist", "model": "mlp", "batch_size": 128,
                     "lr": [2e-2, 2e-3, 2e-4, 2e-5], "mu_increment": [1e-2, 1e-5, 1e-7],
                     "mu_multiplier": [1.0, 1.1], "code_lr": [0.1, 1.0],
                     "mu0": 0.01, "mu_max": 1.5, "algo": "am-adam", "seeds": [0, 1, 2, 3, 4]}
    return p


PRESETS = _build_presets()


@dataclass
class DataBundle:
    train: object
    val: object
    test: object | None


def load_data(cfg: dict) -> DataBundle:
    """Train/validation(/test) datasets described by a resolved config."""
    from .datasets import (Dataset, SplitSpec, load_mnist, make_blobs, pool_sequence,
                           read_csv_labeled, split, standardize)

    if cfg["dataset"] == "mnist":
        d = cfg["data_dir"]
        try:
            train = load_mnist(d, "train", cfg["train_limit"] or None, cfg["train_start"])
            val = load_mnist(d, "train", cfg["val_size"], cfg["val_start"])
            test = load_mnist(d, "test", cfg["test_limit"] or None)
        except FileNotFoundError as e:
            raise ConfigError(f"MNIST files not found under {d} ({e.filename}); set data_dir "
                              "or AMNET_MNIST_DIR") from None
    else:
        if cfg["dataset"] == "csv":
            full = read_csv_labeled(cfg["data_path"], standardize_features=False)
        else:
            full = make_blobs(cfg["blobs_n"], cfg["blobs_p"], cfg["blobs_m"],
                              cfg["blobs_separation"], cfg["split_seed"])
        train, val = split(full, SplitSpec(cfg["train_fraction"], cfg["split_seed"]))
        if cfg["dataset"] == "csv":
            train, val = standardize(train, val)
        test = None
    if cfg["model"] == "rnn":
        side = int(round(train.features.shape[1] ** 0.5))
        if side * side != train.features.shape[1]:
            raise ConfigError("model = rnn needs square images")

        def seq(ds):
            return None if ds is None else Dataset(
                pool_sequence(ds.features, side, side, cfg["pool"]), ds.labels, ds.num_classes)

        train, val, test = seq(train), seq(val), seq(test)
    return DataBundle(train, val, test)
