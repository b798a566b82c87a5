"""Conditional flow matching on split-real residual spectra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor, as_tensor, no_grad
from .errors import ContractError, DimensionError, NumericError
from .layers import FlowHead
from .spectral import Spectrum


@dataclass
class FlowSample:
    x_t: np.ndarray
    t: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    cond: np.ndarray


def _same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")


def _check_t(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1):
        raise ContractError("t must lie in [0, 1]")
    return t


def _broadcast_t(t: np.ndarray, x: np.ndarray) -> np.ndarray:
    # one t per leading row
    return t.reshape(t.shape + (1,) * (x.ndim - t.ndim)) if t.ndim else t


def sample_path(x0, x1, t, cond=None) -> FlowSample:
    """Point on the straight path ``(1 - t) x0 + t x1``."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    _same_shape(x0, x1)
    t = _check_t(t)
    tb = _broadcast_t(t, x0)
    x_t = (1.0 - tb) * x0 + tb * x1
    if cond is None:
        cond = np.zeros_like(x0)
    return FlowSample(x_t, t, x0, x1, np.asarray(cond, dtype=np.float64))


def target_velocity(x0, x1) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    _same_shape(x0, x1)
    return x1 - x0


def flow_loss(head: FlowHead, x0, x1, cond, t) -> Tensor:
    """Mean squared error between the predicted and straight-path velocity."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    single = x0.ndim == 1
    if single:
        x0, x1 = x0[None], x1[None]
        cond = np.atleast_2d(cond)
    s = sample_path(x0, x1, t, cond)
    u = head(s.x_t, np.broadcast_to(s.t, (x0.shape[0],)) if s.t.ndim == 0 else s.t, as_tensor(cond))
    return ag.square(u - target_velocity(x0, x1)).mean()


def ode_sample(head: FlowHead, x0, cond, n_steps: int = 1) -> np.ndarray:
    """Explicit Euler from t=0 to t=1 along the learned field."""
    if n_steps < 1:
        raise ContractError("n_steps must be >= 1")
    x = np.array(x0, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None]
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    dt = 1.0 / n_steps
    with no_grad():
        for k in range(n_steps):
            u = head(x, np.full(x.shape[0], k * dt), cond).data
            x = x + dt * u
            if not np.all(np.isfinite(x)):
                raise NumericError(f"ODE state diverged at step {k + 1} of {n_steps}")
    return x[0] if single else x


def make_residual_target(S_true: Spectrum, S_interp: Spectrum) -> np.ndarray:
    """Split-real (interleaved re/im) of ``S_true - S_interp``, detached."""
    if S_true.n_bins != S_interp.n_bins:
        raise DimensionError(f"bin counts differ: {S_true.n_bins} vs {S_interp.n_bins}")
    diff = np.ascontiguousarray(np.asarray(S_true.coeffs) - np.asarray(S_interp.coeffs), dtype=np.complex128)
    return diff.view(np.float64).copy()
