"""Adam with decoupled weight decay, the training loop, and early stopping."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .autograd import Parameter, backward
from .config import TrainConfig, stream
from .data import WindowedDataset
from .errors import DivergenceError, EmptySplitError, NumericError
from .losses import LossBreakdown
from .model import FreqFlow

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class AdamState:
    """Per-parameter moments and a shared step counter."""

    def __init__(self, params: list[tuple[str, Parameter]], no_decay=("rin.",)):
        self.params = list(params)
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros(p.data.shape) for _, p in self.params]
        self.decay = [not name.startswith(tuple(no_decay)) for name, _ in self.params]
        self.step = 0

    def state_arrays(self) -> dict:
        return {"step": self.step, "m": self.m, "v": self.v}


def adam_step(state: AdamState, lr: float, weight_decay: float = 0.0):
    """One bias-corrected Adam update; decay shrinks values before the delta."""
    for name, p in state.params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    bc1 = 1.0 - BETA1 ** state.step
    bc2 = 1.0 - BETA2 ** state.step
    for i, (name, p) in enumerate(state.params):
        if not p.trainable:
            continue
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g
        # |g|^2 keeps v real for complex parameters (real and imaginary parts share it)
        v = state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * (g.real ** 2 + g.imag ** 2 if p.is_complex else g * g)
        if weight_decay and state.decay[i]:
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + EPS)
        p.zero_grad()


@dataclass
class EpochRecord:
    epoch: int
    recon: float
    flow: float
    reg: float
    total: float
    val_mse: float
    wall_time_ms: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


@dataclass
class TrainReport:
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = float("inf")
    stopped_early: bool = False
    n_parameters: int = 0
    flow_val_mse: Optional[float] = None  # validation MSE with the flow correction applied
    flow_enabled: bool = False

    def epoch_log(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.history)


def validation_mse(model: FreqFlow, val: WindowedDataset, correct: bool = False,
                   batch_size: int = 512) -> float:
    """MSE of the supervised segment (forecast, or full reconstruction)."""
    total, count = 0.0, 0
    for lo in range(0, len(val), batch_size):
        lb = val.lookback[lo: lo + batch_size]
        if model.cfg.task == "forecast":
            pred, truth = model.predict(lb, correct=correct), val.horizon[lo: lo + batch_size]
        else:
            pred, truth = model.predict(lb, correct=correct), lb
        total += float(np.sum((pred - truth) ** 2))
        count += pred.size
    return total / count


def _snapshot(model: FreqFlow) -> list[np.ndarray]:
    return [p.data.copy() for p in model.parameters()]


def _restore(model: FreqFlow, snap: list[np.ndarray]):
    for p, arr in zip(model.parameters(), snap):
        p.data[...] = arr


def train(model: FreqFlow, splits: dict, cfg: Optional[TrainConfig] = None,
          val_fn: Optional[Callable[[FreqFlow, int], float]] = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainReport:
    """Mini-batch training with early stopping on validation MSE.

    ``val_fn(model, epoch)`` replaces the default validation score.  The
    best-scoring parameters are restored before returning.  When the flow
    correction is enabled it is kept only if it lowers validation MSE.
    """
    cfg = cfg or model.cfg
    tr, val = splits.get("train"), splits.get("val")
    if tr is None or len(tr) == 0 or val is None or len(val) == 0:
        raise EmptySplitError("training needs non-empty train and val splits")
    val_fn = val_fn or (lambda m, _epoch: validation_mse(m, val))
    shuffle_rng = stream(cfg.seed, "shuffle")
    flow_rng = stream(cfg.seed, "flow.draws")
    opt = AdamState(list(model.named_parameters()))
    report = TrainReport(n_parameters=model.n_parameters())
    best = _snapshot(model)
    bad = 0
    n = len(tr)
    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        order = shuffle_rng.permutation(n)
        sums = np.zeros(4)
        steps = 0
        for step, lo in enumerate(range(0, n, cfg.batch_size), start=1):
            idx = order[lo: lo + cfg.batch_size]
            try:
                loss, parts = model.loss(tr.lookback[idx], tr.horizon[idx], rng=flow_rng)
                backward(loss)
                adam_step(opt, cfg.lr, cfg.weight_decay)
            except NumericError as exc:
                raise DivergenceError(f"diverged at epoch {epoch}, step {step}: {exc}",
                                      epoch=epoch, step=step) from exc
            sums += (parts.recon, parts.flow, parts.reg, parts.total)
            steps += 1
        score = float(val_fn(model, epoch))
        if not np.isfinite(score):
            raise DivergenceError(f"validation loss is not finite at epoch {epoch}",
                                  epoch=epoch, step=steps)
        means = sums / steps
        rec = EpochRecord(epoch, *map(float, means), score,
                          (time.perf_counter() - start) * 1000.0)
        report.history.append(rec)
        if on_epoch:
            on_epoch(rec)
        if score < report.best_val:
            report.best_val, report.best_epoch = score, epoch
            best = _snapshot(model)
            bad = 0
        else:
            bad += 1
            if bad >= cfg.patience:
                report.stopped_early = True
                break
    _restore(model, best)
    if model.has_flow and cfg.flow_correction:
        report.flow_val_mse = validation_mse(model, val, correct=True)
        model.flow_enabled = report.flow_val_mse < validation_mse(model, val, correct=False)
    report.flow_enabled = model.flow_enabled
    return report
