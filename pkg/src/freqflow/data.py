"""CSV ingestion, gap filling, standardization, splitting and windowing."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import (DataError, DimensionError, EmptySplitError, OrderingError, SchemaError,
                     UnimputableError)

STD_FLOOR = 1e-5
# exact rationals: float floor(0.8 * 90) gives 71
TRAIN_FRACTION = Fraction(7, 10)
VAL_FRACTION = Fraction(8, 10)  # cumulative boundary of the validation range
SPLITS = ("train", "val", "test")


@dataclass
class RawDataset:
    values: np.ndarray  # (T, V), NaN marks a missing reading
    node_ids: list
    interval_minutes: int
    timestamps: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise DimensionError(f"values must be (T, V) with T, V >= 1, got {self.values.shape}")
        if len(self.node_ids) != self.values.shape[1]:
            raise DimensionError(f"{len(self.node_ids)} node ids for {self.values.shape[1]} columns")
        if len(set(self.node_ids)) != len(self.node_ids):
            raise SchemaError("node ids must be unique")
        if self.timestamps and len(self.timestamps) != self.values.shape[0]:
            raise DimensionError("one timestamp per row required")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]


# ------------------------------------------------------------------ CSV IO
def _parse_time(text: str, line: int) -> datetime:
    try:
        return datetime.fromisoformat(text.strip())
    except ValueError as exc:
        raise DataError(f"line {line}: bad timestamp {text!r}") from exc


def _modal_interval(stamps: Sequence[datetime]) -> int:
    if len(stamps) < 2:
        return 0
    deltas = Counter(round((b - a).total_seconds() / 60) for a, b in zip(stamps, stamps[1:]))
    return max(deltas.items(), key=lambda kv: (kv[1], -kv[0]))[0]


def load_csv(path) -> RawDataset:
    """Read ``timestamp,<node>,...`` rows; empty cells become NaN.

    Timestamps must increase strictly down the file.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if len(header) < 2:
            raise SchemaError("header needs a timestamp column and at least one node")
        node_ids = [h.strip() for h in header[1:]]
        stamps, rows = [], []
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise SchemaError(f"line {line}: expected {len(header)} columns, got {len(row)}")
            stamp = _parse_time(row[0], line)
            if stamps and stamp <= stamps[-1]:
                kind = "duplicate" if stamp == stamps[-1] else "out-of-order"
                raise OrderingError(f"line {line}: {kind} timestamp {row[0].strip()}")
            try:
                rows.append([float(c) if c.strip() else math.nan for c in row[1:]])
            except ValueError as exc:
                raise DataError(f"line {line}: {exc}") from exc
            stamps.append(stamp)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return RawDataset(np.array(rows), node_ids, _modal_interval(stamps), stamps)


def write_csv(ds: RawDataset, path, start: Optional[datetime] = None):
    """Write ``ds`` to a path or an open text file."""
    stamps = ds.timestamps
    if not stamps:
        start = start or datetime(2024, 1, 1)
        step = timedelta(minutes=ds.interval_minutes or 1)
        stamps = [start + i * step for i in range(ds.n_steps)]
    if hasattr(path, "write"):
        _write_rows(path, ds, stamps)
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            _write_rows(fh, ds, stamps)


def _write_rows(fh, ds: RawDataset, stamps):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["timestamp", *ds.node_ids])
    for stamp, row in zip(stamps, ds.values):
        w.writerow([stamp.isoformat(), *("" if math.isnan(v) else repr(float(v)) for v in row)])


# ------------------------------------------------------------- imputation
def impute(ds: RawDataset) -> RawDataset:
    """Forward fill along time, then backward fill what is left at the head."""
    values = ds.values.copy()
    for j, node in enumerate(ds.node_ids):
        col = values[:, j]
        observed = ~np.isnan(col)
        if not observed.any():
            raise UnimputableError(f"node {node!r} has no observed values")
        idx = np.where(observed, np.arange(len(col)), -1)
        np.maximum.accumulate(idx, out=idx)
        first = np.argmax(observed)
        idx[idx < 0] = first
        values[:, j] = col[idx]
    return replace(ds, values=values)


# -------------------------------------------------------- standardization
@dataclass
class NodeStats:
    mean: np.ndarray  # (V,)
    std: np.ndarray  # (V,)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NodeStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def split_bounds(T: int) -> tuple[int, int]:
    return math.floor(TRAIN_FRACTION * T), math.floor(VAL_FRACTION * T)


def fit_stats(values: np.ndarray) -> NodeStats:
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 1:
        raise EmptySplitError("no rows to fit statistics on")
    return NodeStats(values.mean(axis=0), np.maximum(values.std(axis=0), STD_FLOOR))


def standardize(ds: RawDataset, stats="fit") -> tuple[RawDataset, NodeStats]:
    """Per-node z-scores.  ``stats="fit"`` fits on the training range only."""
    if np.isnan(ds.values).any():
        raise DataError("standardize needs NaN-free values; run impute first")
    if isinstance(stats, str):
        if stats != "fit":
            raise ValueError(f"stats must be NodeStats or 'fit', got {stats!r}")
        stats = fit_stats(ds.values[: split_bounds(ds.n_steps)[0]])
    if stats.mean.shape != (ds.n_nodes,) or stats.std.shape != (ds.n_nodes,):
        raise DimensionError(f"stats cover {stats.mean.shape[0]} nodes, dataset has {ds.n_nodes}")
    return replace(ds, values=(ds.values - stats.mean) / stats.std), stats


def destandardize(values: np.ndarray, stats: NodeStats, node_axis: int = -1) -> np.ndarray:
    """Undo :func:`standardize`; ``node_axis`` says where the nodes live."""
    values = np.asarray(values, dtype=np.float64)
    shape = [1] * values.ndim
    shape[node_axis] = -1
    return values * stats.std.reshape(shape) + stats.mean.reshape(shape)


# -------------------------------------------------------------- windowing
@dataclass
class WindowedDataset:
    lookback: np.ndarray  # (N, V, L_i)
    horizon: np.ndarray  # (N, V, L_o)
    t0: np.ndarray  # (N,) absolute row index of each window's first sample
    split: str

    def __len__(self) -> int:
        return len(self.t0)


def count_windows(n: int, lookback: int, horizon: int, stride: int) -> int:
    need = lookback + horizon
    return 0 if n < need else (n - need) // stride + 1


def make_windows(values: np.ndarray, start: int, end: int, lookback: int, horizon: int,
                 stride: int, split: str) -> WindowedDataset:
    """Windows fully inside rows ``[start, end)`` of a (T, V) array."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = count_windows(end - start, lookback, horizon, stride)
    if n == 0:
        raise EmptySplitError(f"{split} split has {end - start} rows, one window needs "
                              f"{lookback + horizon}")
    t0 = start + stride * np.arange(n)
    series = np.ascontiguousarray(np.asarray(values, dtype=np.float64).T)  # (V, T)
    idx = t0[:, None] + np.arange(lookback + horizon)[None, :]
    full = series[:, idx].transpose(1, 0, 2)  # (N, V, L)
    return WindowedDataset(full[..., :lookback].copy(), full[..., lookback:].copy(), t0, split)


def split_and_window(ds: RawDataset, lookback: int, horizon: int, stride: int = 1,
                     eval_stride: Optional[int] = None) -> dict:
    """Contiguous train/val/test time ranges, each windowed independently.

    Training windows use ``stride``; validation and test use ``eval_stride``
    (defaults to ``stride``).
    """
    T = ds.n_steps
    if T < lookback + horizon:
        raise EmptySplitError(f"series of {T} rows is shorter than one window")
    a, b = split_bounds(T)
    ranges = {"train": (0, a), "val": (a, b), "test": (b, T)}
    strides = {"train": stride, "val": eval_stride or stride, "test": eval_stride or stride}
    return {name: make_windows(ds.values, lo, hi, lookback, horizon, strides[name], name)
            for name, (lo, hi) in ranges.items()}


# ---------------------------------------------------------------- synthetic
@dataclass
class SynthSpec:
    n_vars: int = 8
    length: int = 8000
    periods: tuple = (24.0, 32.0)
    harmonics: int = 1
    trend_slope: float = 0.0
    noise_std: float = 0.1
    seed: int = 0
    latent_period: Optional[float] = None  # defaults to the first period
    coupling: float = 1.0  # amplitude of the shared latent sinusoid
    modulation: float = 0.0  # depth of the latent's slow random amplitude envelope
    modulation_width: float = 40.0  # envelope smoothing, in samples
    lag_periods: int = 0  # largest per-node delay of the latent, in latent periods
    interval_minutes: int = 5


def _envelope(rng: np.random.Generator, n: int, width: float) -> np.ndarray:
    half = int(math.ceil(4 * width))
    kernel = np.exp(-0.5 * (np.arange(-half, half + 1) / width) ** 2)
    s = np.convolve(rng.standard_normal(n + 2 * half), kernel, mode="valid")
    return s / s.std()


def synth_generate(spec: SynthSpec) -> RawDataset:
    """Seeded multi-node test signal.

    Each node sums sines over ``periods`` and their harmonics, a shared
    latent sinusoid with a per-node gain, a linear trend and Gaussian noise.
    With ``modulation > 0`` the latent's amplitude drifts slowly; with
    ``lag_periods > 0`` node ``v`` sees the latent delayed by a whole number
    of latent periods growing with ``v``, so leading nodes carry information
    about the near future of lagging ones.
    """
    from .config import stream

    if any(p < 2 for p in spec.periods):
        raise ValueError("periods must be at least 2 samples")
    T, V = spec.length, spec.n_vars
    shape_rng = stream(spec.seed, "synth.shape")
    latent_rng = stream(spec.seed, "synth.latent")
    noise_rng = stream(spec.seed, "synth.noise")
    P = spec.latent_period or spec.periods[0]
    lags = [int(round(P * round(v * spec.lag_periods / max(V - 1, 1)))) for v in range(V)]
    pad = max(lags)
    tl = np.arange(-pad, T, dtype=np.float64)
    latent = np.sin(2 * np.pi * tl / P + latent_rng.uniform(0, 2 * np.pi))
    if spec.modulation:
        latent *= 1.0 + spec.modulation * _envelope(latent_rng, len(tl), spec.modulation_width)
    t = tl[pad:]
    values = np.empty((T, V))
    for v in range(V):
        x = np.zeros(T)
        for p in spec.periods:
            for h in range(1, spec.harmonics + 1):
                amp = shape_rng.uniform(0.5, 1.0) / h
                phase = shape_rng.uniform(0, 2 * np.pi)
                x += amp * np.sin(2 * np.pi * h * t / p + phase)
        weight = spec.coupling * shape_rng.uniform(0.75, 1.25)
        x += weight * latent[pad - lags[v]: pad - lags[v] + T] + spec.trend_slope * t
        x += spec.noise_std * noise_rng.standard_normal(T)
        values[:, v] = x
    start = datetime(2024, 1, 1)
    stamps = [start + timedelta(minutes=spec.interval_minutes * i) for i in range(T)]
    return RawDataset(values, [f"node{v}" for v in range(V)], spec.interval_minutes, stamps)
