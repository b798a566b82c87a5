from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor, as_tensor
from .errors import DimensionError, NumericError


@dataclass
class LossBreakdown:
    recon: float
    flow: float
    reg: float
    total: float
    lambda_rec: float
    lambda_flow: float
    lambda_reg: float

    def as_dict(self) -> dict:
        return asdict(self)


def reconstruction_loss(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    return ag.square(pred - target).mean()


def l2_penalty(params: Iterable[Parameter]) -> Tensor:
    terms = [ag.square(p).sum() for p in params]
    if not terms:
        return Tensor(0.0)
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def total_loss(recon, flow, params: Iterable[Parameter], cfg) -> tuple[Tensor, LossBreakdown]:
    """``lambda_rec * recon + lambda_flow * flow + lambda_reg * sum ||p||^2``.

    ``params`` are the flow-network parameters only; pass an empty list when
    the flow head is disabled.
    """
    recon, flow = as_tensor(recon), as_tensor(flow)
    reg = l2_penalty(params)
    total = recon * cfg.lambda_rec + flow * cfg.lambda_flow + reg * cfg.lambda_reg
    parts = [float(np.real(v.data)) for v in (recon, flow, reg, total)]
    if not all(np.isfinite(parts)):
        raise NumericError(f"non-finite loss component: {parts}")
    return total, LossBreakdown(*parts, cfg.lambda_rec, cfg.lambda_flow, cfg.lambda_reg)
