"""Command-line experiment runner.

    amnet train --preset mnist-mlp-100-am-adam --out runs/a
    amnet gridsearch --config grid.cfg --out runs/grid
    amnet theory --out runs/theory
    amnet gradcheck --seed 3

Exit codes: 0 success, 1 configuration error, 2 failed check.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import sys
from pathlib import Path

import numpy as np

from .altmin import AmConfig, MuSchedule, fit
from .baselines import BaselineConfig, baseline_fit
from .config import (PRESETS, SCHEMA, ConfigError, format_value, grid_axes, load_config,
                     load_data, resolve, serialize)
from .loop import final_eval, format_float, write_metrics
from .model import NetworkSpec, init_network, save_checkpoint
from .rnn import bptt_fit, init_elman, rnn_fit

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2


def _hidden_acts(cfg, n):
    acts = cfg["activations"]
    if len(acts) == 1:
        return acts * n
    if len(acts) != n:
        raise ConfigError(f"{n} hidden layers but {len(acts)} activations")
    return acts


def build_trainer_configs(cfg):
    try:
        if cfg["algo"] in ("sgd", "adam"):
            return BaselineConfig(cfg["algo"], cfg["lr"], cfg["sgd_decay"])
        mu = MuSchedule(cfg["mu0"], cfg["mu_increment"], cfg["mu_multiplier"], cfg["mu_max"])
        return AmConfig(cfg["algo"], cfg["lr"], cfg["code_lr"], cfg["code_iters"],
                        cfg["weight_iters"], mu)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def run_config(cfg, data=None):
    """Train as described by a resolved, grid-free config.

    Returns (model, rows). Evaluation splits are "val" and, when present,
    "test".
    """
    data = data or load_data(cfg)
    evals = {"val": data.val}
    if data.test is not None:
        evals["test"] = data.test
    tcfg = build_trainer_configs(cfg)
    args = (data.train, tcfg, cfg["epochs"], cfg["batch_size"], cfg["seed"], evals,
            cfg["eval_every"])
    m = data.train.num_classes
    if cfg["model"] == "rnn":
        T, p = data.train.features.shape[1:]
        st = init_elman(cfg["rnn_hidden"], T, p, m, cfg["seed"], cfg["activations"][0])
        if cfg["algo"] == "am-mem":
            raise ConfigError("am-mem is not available for model = rnn")
        return (rnn_fit if cfg["algo"] == "am-adam" else bptt_fit)(st, *args)
    hidden = cfg["hidden"]
    try:
        spec = NetworkSpec((data.train.features.shape[1], *hidden, m),
                           _hidden_acts(cfg, len(hidden)), cfg["seed"])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    net = init_network(spec)
    return (baseline_fit if cfg["algo"] in ("sgd", "adam") else fit)(net, *args)


def save_model(model, path: Path):
    if hasattr(model, "weights"):
        save_checkpoint(model, path)
    else:
        with open(path, "wb") as fh:
            np.savez(fh, **model.params())


def cmd_train(cfg, out: Path) -> int:
    if grid_axes(cfg):
        raise ConfigError(f"list values for {', '.join(grid_axes(cfg))}; use gridsearch")
    model, rows = run_config(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.csv", rows, serialize(cfg))
    save_model(model, out / ("model.ckpt" if cfg["model"] == "mlp" else "model.npz"))
    last = final_eval(rows, "val")
    print(f"final val loss={last.loss:.6f} accuracy={last.accuracy:.4f}")
    return EXIT_OK


def grid_points(cfg):
    axes = grid_axes(cfg)
    keys = [k for k in SCHEMA if k in axes]
    for values in itertools.product(*(axes[k] for k in keys)):
        point = dict(cfg)
        point.update(zip(keys, values))
        yield dict(zip(keys, values)), point


def rank_points(results):
    """results: list of (index, params, [(loss, acc), ...]). Highest mean
    accuracy first, then lower mean loss, then config order."""
    scored = []
    for idx, params, finals in results:
        loss = float(np.mean([f[0] for f in finals]))
        acc = float(np.mean([f[1] for f in finals]))
        scored.append((-acc, loss, idx, params))
    scored.sort(key=lambda s: (s[0], s[1], s[2]))
    return [(idx, params, -na, loss) for na, loss, idx, params in scored]


def cmd_gridsearch(cfg, out: Path) -> int:
    axes = grid_axes(cfg)
    if not axes:
        raise ConfigError("empty grid: give at least one key a list value")
    seeds = cfg["seeds"] or [cfg["seed"]]
    keys = [k for k in SCHEMA if k in axes]
    data = load_data(cfg) if not any(k in axes for k in ("dataset", "model", "pool", "train_limit",
                                                          "val_size", "split_seed")) else None
    results, per_run = [], []
    for idx, (params, point) in enumerate(grid_points(cfg)):
        finals = []
        for seed in seeds:
            run = dict(point, seed=seed, seeds=None)
            try:
                _, rows = run_config(run, data)
                last = final_eval(rows, "val")
                final = (last.loss, last.accuracy)
            except FloatingPointError:
                final = (float("inf"), 0.0)
            finals.append(final)
            per_run.append((idx, seed, params, final))
            print(f"point {idx} seed {seed}: val accuracy={final[1]:.4f}")
        results.append((idx, params, finals))
    ranking = rank_points(results)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "gridsearch.csv", "w", newline="") as fh:
        for line in serialize(cfg).splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", "seed", *keys, "final_val_loss", "final_val_accuracy"])
        for idx, seed, params, (loss, acc) in per_run:
            w.writerow([idx, seed, *(format_value(k, params[k]) for k in keys),
                        format_float(loss), format_float(acc)])
        fh.write("# ranking\n")
        w.writerow(["rank", "point", *keys, "mean_val_loss", "mean_val_accuracy"])
        for rank, (idx, params, acc, loss) in enumerate(ranking, start=1):
            w.writerow([rank, idx, *(format_value(k, params[k]) for k in keys),
                        format_float(loss), format_float(acc)])
    best = ranking[0]
    print("best: " + ", ".join(f"{k}={format_value(k, v)}" for k, v in best[1].items())
          + f" (mean val accuracy {best[2]:.4f})")
    return EXIT_OK


def cmd_theory(cfg, out: Path) -> int:
    from .theory import AdmissibilityError, check_bounds, make_quadratic_problem, run_ensemble

    dims = cfg["dims"] if len(cfg["dims"]) > 1 else cfg["dims"] * cfg["K"]
    try:
        p = make_quadratic_problem(cfg["K"], dims, cfg["lam"], cfg["coupling"], cfg["seed"],
                                   cfg["noise"], cfg["radius"])
    except (AdmissibilityError, ValueError) as e:
        raise ConfigError(str(e)) from None
    trace = run_ensemble(p, cfg["iterations"], cfg["traces"], cfg["seed"] + 1,
                         cfg["init_fraction"])
    rep = check_bounds(trace, p, cfg["n_se"])
    slope_checked = cfg["noise"] > 0 and cfg["iterations"] >= 100
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "theory.csv", "w", newline="") as fh:
        for line in serialize(cfg).splitlines():
            fh.write(f"# {line}\n")
        fh.write(f"# sigma2 = {p.sigma2()!r}\n# slope = {rep.slope!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mean_error", "recursion_rhs", "final_rhs", "pass"])
        for t, e, r, f, ok in rep.rows():
            w.writerow([t, format_float(e), format_float(r), format_float(f), int(ok)])
    bad = rep.failures()
    print(f"{len(rep.t) - len(bad)}/{len(rep.t)} iterations within both bounds; "
          f"terminal slope {rep.slope:.3f}")
    if bad:
        print(f"violations at t = {bad[:20]}{' ...' if len(bad) > 20 else ''}")
    if slope_checked and not rep.slope_ok:
        print(f"slope {rep.slope:.3f} outside {rep.slope_range}")
        return EXIT_CHECK
    return EXIT_CHECK if bad else EXIT_OK


def cmd_gradcheck(cfg, out: Path | None, fault: str | None = None) -> int:
    from .gradcheck import corrupt_derivative, run_all, summarize

    if fault:
        with corrupt_derivative(fault):
            results = run_all(cfg["seed"])
    else:
        results = run_all(cfg["seed"])
    for r in results:
        if not r.passed:
            print(r.line())
    fams = summarize(results)
    for fam, ok in fams.items():
        print(f"{'PASS' if ok else 'FAIL'} {fam}")
    return EXIT_OK if all(fams.values()) else EXIT_CHECK


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="amnet", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("train", "gridsearch", "theory", "gradcheck"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--preset", choices=sorted(PRESETS), metavar="NAME",
                        help="named hyperparameter preset")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", default=".", help="output directory")
        if name == "gradcheck":
            sp.add_argument("--inject-fault", metavar="ACTIVATION",
                            help="scale one activation derivative (self-test)")
    sub.add_parser("presets")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.command == "presets":
        for name in sorted(PRESETS):
            print(name)
        return EXIT_OK
    try:
        raw = load_config(args.config) if args.config else {}
        if args.preset:
            raw["preset"] = args.preset
        cfg = resolve(raw, args.seed)
        out = Path(args.out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "gridsearch":
            return cmd_gridsearch(cfg, out)
        if args.command == "theory":
            return cmd_theory(cfg, out)
        return cmd_gradcheck(cfg, out, args.inject_fault)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
