"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd import Parameter, Tensor, backward, no_grad, real_view
from .errors import ContractError, NumericError


def _scalar(value) -> float:
    out = float(np.real(value.data if isinstance(value, Tensor) else value))
    if not np.isfinite(out):
        raise NumericError(f"objective returned non-finite value {out}")
    return out


def numeric_gradient(f: Callable[[], Tensor], p: Parameter, step: float = 1e-5) -> np.ndarray:
    """Central differences over every real coordinate of ``p`` (split-real for complex)."""
    if step <= 0:
        raise ContractError("step must be positive")
    flat = real_view(p.data).reshape(-1)
    out = np.empty(flat.size)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = _scalar(f())
            flat[i] = orig - step
            fm = _scalar(f())
            flat[i] = orig
            out[i] = (fp - fm) / (2 * step)
    return out


def analytic_gradient(f: Callable[[], Tensor], p: Parameter) -> np.ndarray:
    p.zero_grad()
    loss = f()
    _scalar(loss)
    backward(loss)
    return real_view(p.grad).reshape(-1).copy()


def finite_diff_check(f: Callable[[], Tensor], p: Parameter, step: float = 1e-5) -> float:
    """Max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)."""
    analytic = analytic_gradient(f, p)
    numeric = numeric_gradient(f, p, step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
