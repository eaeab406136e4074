import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from amnet.cli import main, rank_points
from amnet.config import (PRESETS, SCHEMA, ConfigError, grid_axes, load_data, parse_config,
                          resolve, serialize)
from amnet.loop import METRICS_FIELDS, read_metrics

BLOBS = """# tiny synthetic run
dataset = blobs
blobs_n = 120
blobs_separation = 6.0
hidden = [8]
activations = [tanh]
batch_size = 20
epochs = 3
lr = 0.01
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def data_lines(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


def test_parse_and_round_trip():
    cfg = parse_config("lr = 0.01  # weight lr\nhidden = [100, 50]\nalgo = adam\n\n")
    assert cfg == {"lr": 0.01, "hidden": [100, 50], "algo": "adam"}
    canon = serialize(resolve(cfg))
    assert serialize(resolve(parse_config(canon))) == canon


@given(st.sampled_from(sorted(PRESETS)))
def test_presets_round_trip(name):
    canon = serialize(resolve({"preset": name, "data_path": "x.csv"}))
    again = resolve(parse_config(canon))
    assert serialize(again) == canon


def test_float_repr_survives():
    cfg = resolve({"lr": 0.1 + 0.2})
    assert resolve(parse_config(serialize(cfg)))["lr"] == 0.1 + 0.2


@pytest.mark.parametrize("text,msg", [
    ("bogus = 1", "unknown key"),
    ("lr = 1\nlr = 2", "duplicate"),
    ("lr", "key = value"),
    ("epochs = 1.5", "expected int"),
    ("lr = abc", "expected float"),
    ("hidden = []", "empty list"),
])
def test_parse_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


@pytest.mark.parametrize("cfg", [{"algo": "rmsprop"}, {"lr": 0.0}, {"batch_size": 0},
                                 {"epochs": -1}, {"dataset": "csv"}, {"preset": "nope"}])
def test_validation_errors(cfg):
    with pytest.raises(ConfigError):
        resolve(cfg)


def test_layering_and_seed_override():
    cfg = resolve({"preset": "mnist-mlp-100-adam", "lr": 0.5}, seed=7)
    assert cfg["lr"] == 0.5 and cfg["seed"] == 7 and cfg["hidden"] == [100, 100]


def test_preset_table_values():
    mnist = resolve({"preset": "mnist-mlp-100-am-adam"})
    assert mnist["lr"] == 0.1973 and mnist["hidden"] == [100, 100]
    higgs = resolve({"preset": "higgs-am-adam", "data_path": "higgs.csv"})
    assert higgs["dataset"] == "csv"
    assert higgs["lr"] == 0.001 and higgs["hidden"] == [300]
    assert PRESETS["mnist-mlp-500-am-mem"]["lr"] == 0.1376
    assert PRESETS["cnn-grid"]["mu_multiplier"] == [1.0, 1.1]


def test_grid_axes_skip_list_typed_keys():
    cfg = resolve({"lr": [0.1, 0.01], "hidden": [5, 5]})
    assert grid_axes(cfg) == {"lr": [0.1, 0.01]}


def test_train_writes_metrics_and_checkpoint(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", write_cfg(tmp_path, BLOBS), "--out", str(out)]) == 0
    text = (out / "metrics.csv").read_text()
    comments = [ln for ln in text.splitlines() if ln.startswith("#")]
    assert "# dataset = blobs" in comments and "# hidden = [8]" in comments
    assert data_lines(out / "metrics.csv")[0] == ",".join(METRICS_FIELDS)
    rows = read_metrics(out / "metrics.csv")
    assert rows[-1].split == "val" and rows[-1].accuracy > 0.8
    assert (out / "model.ckpt").stat().st_size > 0
    assert "final val" in capsys.readouterr().out


def test_train_zero_epochs_single_row(tmp_path):
    out = tmp_path / "run"
    cfg = write_cfg(tmp_path, BLOBS.replace("epochs = 3", "epochs = 0"), "zero.cfg")
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    rows = read_metrics(out / "metrics.csv")
    assert len(rows) == 1 and rows[0].epoch == 0 and rows[0].split == "val"


def test_train_rejects_grid_and_bad_config(tmp_path, capsys):
    cfg = write_cfg(tmp_path, BLOBS + "code_lr = [0.1, 0.2]\n")
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert main(["train", "--config", write_cfg(tmp_path, "bogus = 1", "b.cfg")]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert "config error" in capsys.readouterr().err


def test_train_is_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, BLOBS + "algo = am-mem\n")
    for d in ("a", "b"):
        assert main(["train", "--config", cfg, "--out", str(tmp_path / d), "--seed", "3"]) == 0
    assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()


def test_rnn_train(tmp_path):
    cfg = """dataset = blobs
blobs_n = 60
blobs_p = 16
model = rnn
activations = [tanh]
rnn_hidden = 3
pool = 2
epochs = 1
batch_size = 20
"""
    out = tmp_path / "rnn"
    assert main(["train", "--config", write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    assert set(np.load(out / "model.npz").files) == {"U", "W", "b", "V", "C"}


def test_one_point_grid_equals_train(tmp_path):
    assert main(["train", "--config", write_cfg(tmp_path, BLOBS), "--out", str(tmp_path / "t")]) == 0
    grid = write_cfg(tmp_path, BLOBS.replace("lr = 0.01", "lr = [0.01]"), "g.cfg")
    assert main(["gridsearch", "--config", grid, "--out", str(tmp_path / "g")]) == 0
    last = [r for r in read_metrics(tmp_path / "t/metrics.csv") if r.split == "val"][-1]
    row = list(csv.DictReader(data_lines(tmp_path / "g/gridsearch.csv")[:2]))[0]
    assert float(row["final_val_loss"]) == last.loss
    assert float(row["final_val_accuracy"]) == last.accuracy


def test_two_by_two_grid_rows(tmp_path):
    grid = write_cfg(tmp_path, BLOBS.replace("epochs = 3", "epochs = 1")
                     .replace("lr = 0.01", "lr = [0.001, 0.01]") + "code_lr = [0.1, 0.3]\nseeds = [0, 1]\n")
    assert main(["gridsearch", "--config", grid, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "gridsearch.csv").read_text().splitlines()
    cut = lines.index("# ranking")
    body = [ln for ln in lines[:cut] if not ln.startswith("#")]
    ranking = lines[cut + 1:]
    assert len(body) == 1 + 4 * 2
    assert len(ranking) == 1 + 4
    assert ranking[0].startswith("rank,point,lr,code_lr")


def test_grid_ranking_beats_divergent_lr(tmp_path):
    # overlapping 3-class blobs: relu + sgd at lr 10 blows up
    grid = write_cfg(tmp_path, BLOBS.replace("blobs_n = 120", "blobs_n = 600\nblobs_m = 3")
                     .replace("6.0", "3.0").replace("tanh", "relu")
                     .replace("lr = 0.01", "lr = [10.0, 0.1]") + "algo = sgd\n")
    assert main(["gridsearch", "--config", grid, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "gridsearch.csv").read_text().splitlines()
    top = lines[lines.index("# ranking") + 2].split(",")
    assert top[2] == "0.1"


def test_empty_grid_rejected(tmp_path):
    assert main(["gridsearch", "--config", write_cfg(tmp_path, BLOBS), "--out", str(tmp_path)]) == 1


def test_rank_tie_breaks():
    results = [(0, {"lr": 1}, [(0.5, 0.9)]), (1, {"lr": 2}, [(0.4, 0.9)]),
               (2, {"lr": 3}, [(0.4, 0.9)]), (3, {"lr": 4}, [(0.1, 0.8)])]
    assert [r[0] for r in rank_points(results)] == [1, 2, 0, 3]


def test_theory_default_passes(tmp_path):
    assert main(["theory", "--out", str(tmp_path)]) == 0
    lines = data_lines(tmp_path / "theory.csv")
    assert lines[0] == "t,mean_error,recursion_rhs,final_rhs,pass"
    assert len(lines) == 2001 and all(ln.endswith(",1") for ln in lines[1:])


def test_theory_inadmissible(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "coupling = 0.7\n")
    assert main(["theory", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "2*xi/(3(K-1))" in capsys.readouterr().err


def test_theory_single_noiseless_trace(tmp_path):
    cfg = write_cfg(tmp_path, "traces = 1\nnoise = 0.0\niterations = 300\n")
    assert main(["theory", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert all(ln.endswith(",1") for ln in data_lines(tmp_path / "theory.csv")[1:])


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--seed", "0"]) == 0
    fams = [ln.split()[1] for ln in capsys.readouterr().out.splitlines() if ln.startswith("PASS")]
    assert len(set(fams)) >= 6


def test_gradcheck_fault_injection(capsys):
    assert main(["gradcheck", "--inject-fault", "tanh"]) == 2
    out = capsys.readouterr().out
    assert "FAIL mlp-backprop" in out and "FAIL am-codes" in out
    assert "PASS multinomial" in out


def test_presets_command(capsys):
    assert main(["presets"]) == 0
    assert "mnist-mlp-100-am-adam" in capsys.readouterr().out.split()


@pytest.mark.parametrize("name", ["mnist-mlp-100-am-adam", "rnn15-am-adam"])
def test_mnist_presets_load(name):
    from conftest import have_mnist
    if not have_mnist():
        pytest.skip("MNIST not available")
    cfg = resolve({"preset": name, "train_limit": 50, "val_size": 20, "test_limit": 10})
    data = load_data(cfg)
    assert len(data.train) == 50 and len(data.val) == 20 and len(data.test) == 10
    if cfg["model"] == "rnn":
        assert data.train.features.shape[1:] == (49, 1)


def test_schema_keys_have_known_types():
    assert {t for t, _ in SCHEMA.values()} <= {"int", "float", "str", "ints", "strs"}
