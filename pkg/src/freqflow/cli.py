"""Command-line entry point: ``freqflow <verb> [options]``.

Exit codes: 0 success, 2 config/usage error, 3 numeric divergence,
4 not enough data.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from datetime import timedelta

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import PRESETS, RunConfig, load_config, to_ini
from .data import (NodeStats, RawDataset, SynthSpec, destandardize, impute, load_csv,
                   split_and_window, standardize, synth_generate, write_csv)
from .errors import (CheckpointError, ConfigError, DataError, EmptySplitError,
                     InsufficientHistoryError, NumericError, SchemaError)
from .evaluation import (evaluate_forecasts, persistence_baseline, seasonal_naive_baseline,
                         write_metrics_csv)
from .model import FreqFlow, build_model
from .spectral import rfft
from .training import train

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_NO_DATA = 0, 2, 3, 4

_ABLATIONS = {"no_mha": "use_mha", "no_lpf": "use_lpf", "no_rin": "use_rin",
              "no_backcast": "use_backcast", "no_flow": "use_flow"}


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def resolve_run(args) -> RunConfig:
    """Config file (or defaults) with command-line overrides applied."""
    run = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    cfg = run.train
    if getattr(args, "preset", None):
        cfg = cfg.with_preset(args.preset)
        run = dataclasses.replace(run, preset=args.preset)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    off = {field: False for flag, field in _ABLATIONS.items() if getattr(args, flag, False)}
    cfg = dataclasses.replace(cfg, **off).validate()
    run = dataclasses.replace(run, train=cfg)
    if getattr(args, "data", None):
        run = dataclasses.replace(run, data=args.data)
    if getattr(args, "horizons", None) is not None:
        run = dataclasses.replace(run, horizons=args.horizons)
    if getattr(args, "out", None):
        run = dataclasses.replace(run, out=args.out)
    return run


def _prepare(path) -> RawDataset:
    if not path:
        raise ConfigError("no data path given (use --data or [run] data)")
    if not os.path.exists(path):
        raise ConfigError(f"data file not found: {path}")
    return impute(load_csv(path))


def forecast_raw(model: FreqFlow, stats: NodeStats, lookback_raw: np.ndarray) -> np.ndarray:
    """Data-unit windows (N, V, L_i) in, data-unit predictions (N, V, L_o) out."""
    z = (np.asarray(lookback_raw, dtype=np.float64) - stats.mean[:, None]) / stats.std[:, None]
    return destandardize(model.predict(z), stats, node_axis=-2)


# ------------------------------------------------------------------ verbs
def cmd_train(args) -> int:
    run = resolve_run(args)
    cfg = run.train
    raw = _prepare(run.data)
    ds, stats = standardize(raw)
    splits = split_and_window(ds, cfg.lookback, cfg.horizon if cfg.task == "forecast" else 0,
                              stride=cfg.stride)
    model = build_model(cfg, ds.n_nodes, splits["train"].lookback)
    print(f"parameters: {model.n_parameters()}")
    os.makedirs(run.out, exist_ok=True)
    log_path = os.path.join(run.out, "epochs.jsonl")
    with open(log_path, "w", encoding="utf-8") as log:
        report = train(model, splits, cfg, on_epoch=lambda r: log.write(r.to_json() + "\n"))
    meta = {"node_stats": stats.to_dict(), "node_ids": ds.node_ids,
            "interval_minutes": ds.interval_minutes, "preset": run.preset}
    ckpt = run.checkpoint or os.path.join(run.out, "model.ckpt")
    save_checkpoint(model, ckpt, meta)
    summary = {"n_parameters": report.n_parameters, "best_epoch": report.best_epoch,
               "best_val_mse": report.best_val, "epochs_run": len(report.history),
               "flow_correction": report.flow_enabled, "checkpoint": ckpt}
    with open(os.path.join(run.out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps(summary))
    return EXIT_OK


def _load(path) -> tuple[FreqFlow, NodeStats, dict]:
    if not path:
        raise ConfigError("--checkpoint is required")
    model = load_checkpoint(path)
    return model, NodeStats.from_dict(model.metadata["node_stats"]), model.metadata


def cmd_forecast(args) -> int:
    model, stats, meta = _load(args.checkpoint)
    raw = _prepare(args.input)
    if raw.node_ids != meta["node_ids"]:
        raise SchemaError(f"input nodes {raw.node_ids} differ from training nodes {meta['node_ids']}")
    cfg = model.cfg
    need = cfg.lookback
    if raw.n_steps < need:
        raise InsufficientHistoryError(f"need {need} rows per node, input has {raw.n_steps}")
    window = raw.values[-need:].T[None]
    pred = forecast_raw(model, stats, window)[0]  # (V, L_o)
    if cfg.task == "forecast":
        steps = args.horizon or cfg.horizon
        if not 1 <= steps <= cfg.horizon:
            raise ConfigError(f"horizon must be in 1..{cfg.horizon}")
        pred = pred[:, :steps]
        step = timedelta(minutes=raw.interval_minutes or meta.get("interval_minutes") or 1)
        stamps = [raw.timestamps[-1] + (i + 1) * step for i in range(steps)]
    else:
        stamps = raw.timestamps[-need:]
    out = RawDataset(pred.T, raw.node_ids, raw.interval_minutes, stamps)
    write_csv(out, args.out or sys.stdout)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run = resolve_run(args)
    if not run.horizons:
        raise ConfigError("--horizons must list at least one horizon")
    model, stats, meta = _load(args.checkpoint)
    cfg = model.cfg
    if cfg.task != "forecast":
        raise ConfigError("evaluate supports forecasting checkpoints only")
    raw = _prepare(run.data)
    test = split_and_window(raw, cfg.lookback, cfg.horizon, stride=cfg.stride,
                            eval_stride=cfg.eval_step)["test"]
    period = args.period or cfg.lookback
    preds = {
        "freqflow": forecast_raw(model, stats, test.lookback),
        "persistence": persistence_baseline(test.lookback, cfg.horizon),
        "seasonal_naive": seasonal_naive_baseline(test.lookback, cfg.horizon, period),
    }
    rows = evaluate_forecasts(preds, test, run.horizons)
    os.makedirs(run.out, exist_ok=True)
    path = os.path.join(run.out, "metrics.csv")
    write_metrics_csv(rows, path)
    for r in rows:
        print(json.dumps(dataclasses.asdict(r)))
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec(n_vars=args.n_vars, length=args.length, periods=args.periods,
                     harmonics=args.harmonics, trend_slope=args.trend, noise_std=args.noise,
                     seed=args.seed if args.seed is not None else 0, coupling=args.coupling,
                     interval_minutes=args.interval, latent_period=args.latent_period,
                     modulation=args.modulation, lag_periods=args.lag_periods)
    try:
        ds = synth_generate(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_csv(ds, args.out)
    return EXIT_OK


def spectrum_rows(x: np.ndarray) -> list[tuple]:
    """One-sided amplitude and phase per bin of an even-length window."""
    L = len(x)
    X = rfft(x)
    amp = np.abs(X) * 2.0 / L
    amp[0] /= 2.0
    amp[-1] /= 2.0
    return [(k, float(k), float(amp[k]), float(np.angle(X[k]))) for k in range(len(X))]


def cmd_spectrum(args) -> int:
    raw = _prepare(args.input)
    if args.node not in raw.node_ids:
        raise ConfigError(f"unknown node {args.node!r}; have {raw.node_ids}")
    L = args.window or raw.n_steps - raw.n_steps % 2
    if L % 2 or L < 4:
        raise ConfigError("window must be even and >= 4")
    if raw.n_steps < args.start + L:
        raise InsufficientHistoryError(f"need {args.start + L} rows, input has {raw.n_steps}")
    x = raw.values[args.start: args.start + L, raw.node_ids.index(args.node)]
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            _write_spectrum(fh, x)
    else:
        _write_spectrum(sys.stdout, x)
    return EXIT_OK


def _write_spectrum(fh, x: np.ndarray):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["bin", "freq_cycles_per_window", "amplitude", "phase"])
    for k, f, a, ph in spectrum_rows(x):
        w.writerow([k, repr(f), repr(a), repr(ph)])


def cmd_print_config(args) -> int:
    sys.stdout.write(to_ini(resolve_run(args)))
    return EXIT_OK


# ------------------------------------------------------------------ parser
def _common(p: argparse.ArgumentParser, ablations: bool = True):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    if ablations:
        for flag in _ABLATIONS:
            p.add_argument("--" + flag.replace("_", "-"), dest=flag, action="store_true")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freqflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _common(p)
    p.add_argument("--data", help="training CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="forecast from the end of a CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--horizon", type=int)
    p.add_argument("--out", help="forecast CSV (stdout if omitted)")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="score a checkpoint and baselines on the test split")
    _common(p, ablations=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--horizons", type=_int_list)
    p.add_argument("--period", type=int, help="seasonal-naive period (default: look-back)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-vars", type=int, default=8)
    p.add_argument("--length", type=int, default=8000)
    p.add_argument("--periods", type=_float_list, default=(24.0, 32.0))
    p.add_argument("--harmonics", type=int, default=1)
    p.add_argument("--trend", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--coupling", type=float, default=1.0)
    p.add_argument("--interval", type=int, default=5, help="minutes between rows")
    p.add_argument("--latent-period", type=float, help="period of the shared latent (default: first period)")
    p.add_argument("--modulation", type=float, default=0.0, help="slow amplitude modulation of the latent")
    p.add_argument("--lag-periods", type=int, default=0, help="latent delay across nodes, in periods")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("spectrum", help="dump one node's spectrum as CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--node", required=True)
    p.add_argument("--window", type=int)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("print-config", help="print the effective configuration")
    _common(p)
    p.set_defaults(func=cmd_print_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (EmptySplitError, InsufficientHistoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, DataError, CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
