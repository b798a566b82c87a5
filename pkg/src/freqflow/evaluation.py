"""Error metrics, copy-forward baselines and per-horizon reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import NodeStats, WindowedDataset, destandardize
from .errors import ContractError, DimensionError


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} vs truth {truth.shape}")
    if pred.size == 0:
        raise ContractError("metrics need at least one value")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


@dataclass
class MetricReport:
    rmse: float
    mae: float
    horizon: int
    n_windows: int
    per_node: list = field(default_factory=list)  # (node_id, rmse, mae)


def metric_report(pred: np.ndarray, truth: np.ndarray, node_ids: Optional[Sequence[str]] = None) -> MetricReport:
    """``pred``/``truth`` are (N, V, h); every (window, node, step) weighs the same."""
    pred, truth = _pair(pred, truth)
    if pred.ndim != 3:
        raise DimensionError(f"expected (N, V, h) arrays, got {pred.shape}")
    N, V, h = pred.shape
    node_ids = list(node_ids) if node_ids is not None else [str(v) for v in range(V)]
    per_node = [(node_ids[v], rmse(pred[:, v], truth[:, v]), mae(pred[:, v], truth[:, v]))
                for v in range(V)]
    return MetricReport(rmse(pred, truth), mae(pred, truth), h, N, per_node)


# ---------------------------------------------------------------- baselines
def persistence_baseline(lookback, horizon: int) -> np.ndarray:
    """Repeat the last observed value over the horizon."""
    lookback = np.asarray(lookback, dtype=np.float64)
    return np.repeat(lookback[..., -1:], horizon, axis=-1)


def seasonal_naive_baseline(lookback, horizon: int, period: int) -> np.ndarray:
    """Step ``h`` copies look-back index ``L_i - P + (h mod P)``."""
    lookback = np.asarray(lookback, dtype=np.float64)
    L = lookback.shape[-1]
    if period < 1 or period > L:
        raise ContractError(f"period {period} needs 1 <= P <= look-back length {L}")
    idx = L - period + np.arange(horizon) % period
    return lookback[..., idx]


# -------------------------------------------------------------- reporting
@dataclass
class EvalRow:
    horizon: object  # int, or "mean"
    model: str
    rmse: float
    mae: float


def evaluate_forecasts(predictions: dict, windows: WindowedDataset, horizons: Sequence[int],
                       stats: Optional[NodeStats] = None) -> list[EvalRow]:
    """Score full-length forecasts at each horizon plus a mean row per model.

    ``predictions`` maps a model name to an (N, V, L_o) array in standardized
    units; both sides are mapped back to data units when ``stats`` is given.
    """
    if not horizons:
        raise ContractError("at least one horizon is required")
    L_o = windows.horizon.shape[-1]
    truth = windows.horizon
    if stats is not None:
        truth = destandardize(truth, stats, node_axis=-2)
    rows = []
    for name, pred in predictions.items():
        if stats is not None:
            pred = destandardize(pred, stats, node_axis=-2)
        scores = []
        for h in horizons:
            if not 1 <= h <= L_o:
                raise ContractError(f"horizon {h} outside 1..{L_o}")
            scores.append((h, rmse(pred[..., :h], truth[..., :h]), mae(pred[..., :h], truth[..., :h])))
        rows += [EvalRow(h, name, r, a) for h, r, a in scores]
        rows.append(EvalRow("mean", name, float(np.mean([s[1] for s in scores])),
                            float(np.mean([s[2] for s in scores]))))
    return rows


def write_metrics_csv(rows: Sequence[EvalRow], path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["horizon", "model", "rmse", "mae"])
        for r in rows:
            w.writerow([r.horizon, r.model, repr(r.rmse), repr(r.mae)])
