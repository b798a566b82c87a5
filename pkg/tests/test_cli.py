import csv
import json

import numpy as np
import pytest

from freqflow.cli import EXIT_NO_DATA, EXIT_OK, EXIT_USAGE, main, spectrum_rows
from freqflow.config import from_ini
from freqflow.data import RawDataset, load_csv, write_csv

SMALL = """\
[train]
max_epochs = 2
batch_size = 16
stride = 4
[model]
lookback = 32
horizon = 16
n_heads = 2
[flow]
flow_hidden = 8
time_embed_dim = 8
[lpf]
explicit_cutoff = 8
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.csv"
    assert main(["synth", "--out", str(data), "--n-vars", "3", "--length", "600", "--periods", "8,16",
                 "--seed", "2"]) == EXIT_OK
    cfg = root / "small.ini"
    cfg.write_text(SMALL)
    out = root / "run"
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == EXIT_OK
    return root, data, cfg, out


def test_synth_writes_requested_shape(workspace):
    _, data, _, _ = workspace
    ds = load_csv(data)
    assert ds.values.shape == (600, 3) and ds.interval_minutes == 5


def test_synth_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        main(["synth", "--out", str(p), "--n-vars", "2", "--length", "50", "--seed", "4",
              "--modulation", "0.5", "--lag-periods", "1", "--latent-period", "10"])
    assert a.read_bytes() == b.read_bytes()


def test_train_outputs(workspace, capsys):
    _, _, _, out = workspace
    lines = (out / "epochs.jsonl").read_text().splitlines()
    assert len(lines) == 2 and "val_mse" in json.loads(lines[0])
    report = json.loads((out / "report.json").read_text())
    assert report["epochs_run"] == 2 and report["n_parameters"] > 0
    assert (out / "model.ckpt").exists()


def test_train_prints_parameter_count(workspace, tmp_path, capsys):
    _, data, cfg, _ = workspace
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path),
                 "--no-flow"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("parameters: ")


def test_forecast_is_byte_deterministic(workspace, tmp_path):
    _, data, _, out = workspace
    outs = [tmp_path / "f1.csv", tmp_path / "f2.csv"]
    for p in outs:
        assert main(["forecast", "--checkpoint", str(out / "model.ckpt"), "--input", str(data),
                     "--out", str(p)]) == EXIT_OK
    assert outs[0].read_bytes() == outs[1].read_bytes()
    fc = load_csv(outs[0])
    src = load_csv(data)
    assert fc.values.shape == (16, 3) and fc.node_ids == src.node_ids
    assert fc.timestamps[0] > src.timestamps[-1]


def test_forecast_horizon_prefix(workspace, tmp_path):
    _, data, _, out = workspace
    p = tmp_path / "f.csv"
    assert main(["forecast", "--checkpoint", str(out / "model.ckpt"), "--input", str(data),
                 "--horizon", "5", "--out", str(p)]) == EXIT_OK
    assert load_csv(p).values.shape == (5, 3)


def test_forecast_insufficient_history(workspace, tmp_path):
    _, data, _, out = workspace
    short = tmp_path / "short.csv"
    short.write_text("".join(data.read_text().splitlines(keepends=True)[:10]))
    assert main(["forecast", "--checkpoint", str(out / "model.ckpt"), "--input", str(short)]) == EXIT_NO_DATA


def test_evaluate_rows(workspace, tmp_path):
    _, data, _, out = workspace
    assert main(["evaluate", "--checkpoint", str(out / "model.ckpt"), "--data", str(data),
                 "--horizons", "4,8,16", "--out", str(tmp_path)]) == EXIT_OK
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    models = {r["model"] for r in rows}
    assert models == {"freqflow", "persistence", "seasonal_naive"}
    for m in models:
        assert [r["horizon"] for r in rows if r["model"] == m] == ["4", "8", "16", "mean"]
    assert all(float(r["rmse"]) >= float(r["mae"]) for r in rows)


def test_evaluate_empty_horizons(workspace):
    _, data, _, out = workspace
    assert main(["evaluate", "--checkpoint", str(out / "model.ckpt"), "--data", str(data),
                 "--horizons", ""]) == EXIT_USAGE


def test_train_missing_data(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["train", "--out", str(tmp_path)]) == EXIT_USAGE


def test_train_bad_config(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[train]\nlr = quick\n")
    assert main(["train", "--config", str(cfg)]) == EXIT_USAGE


def test_train_too_short_for_windows(workspace, tmp_path):
    _, data, cfg, _ = workspace
    short = tmp_path / "short.csv"
    short.write_text("".join(data.read_text().splitlines(keepends=True)[:60]))
    assert main(["train", "--config", str(cfg), "--data", str(short), "--out", str(tmp_path)]) == EXIT_NO_DATA


def test_unknown_verb_is_usage_error():
    assert main(["dance"]) == EXIT_USAGE


def test_spectrum_of_pure_sine(tmp_path):
    n = np.arange(64)
    path = tmp_path / "s.csv"
    write_csv(RawDataset((3 * np.cos(2 * np.pi * 4 * n / 64 + 0.5))[:, None], ["a"], 5), path)
    out = tmp_path / "spec.csv"
    assert main(["spectrum", "--input", str(path), "--node", "a", "--out", str(out)]) == EXIT_OK
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["bin", "freq_cycles_per_window", "amplitude", "phase"]
    assert len(rows) == 33
    amps = np.array([float(r["amplitude"]) for r in rows])
    assert int(np.argmax(amps)) == 4
    assert amps[4] == pytest.approx(3.0) and float(rows[4]["phase"]) == pytest.approx(0.5)
    assert amps.sum() - amps[4] < 1e-9


def test_spectrum_unknown_node(workspace):
    _, data, _, _ = workspace
    assert main(["spectrum", "--input", str(data), "--node", "zz"]) == EXIT_USAGE


def test_spectrum_rows_dc_scaling():
    rows = spectrum_rows(np.full(8, 2.0))
    assert rows[0][2] == pytest.approx(2.0) and all(r[2] < 1e-12 for r in rows[1:])


def test_print_config_round_trips(capsys):
    assert main(["print-config", "--preset", "deep", "--seed", "9", "--no-mha"]) == EXIT_OK
    run = from_ini(capsys.readouterr().out)
    assert run.train.flow_depth == 16 and run.train.seed == 9 and not run.train.use_mha
