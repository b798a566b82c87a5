"""The assembled forecaster: attention, instance norm, spectral interpolation, flow head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor, no_grad
from .config import TrainConfig, stream
from .errors import ConfigError, DimensionError
from .flow import flow_loss, ode_sample
from .layers import ComplexLinear, FlowHead, Module, MultiHeadAttention, RevIN, RinState
from .losses import LossBreakdown, reconstruction_loss, total_loss
from .spectral import Spectrum, irfft, irfft_t, resolve_cutoff, rfft, rfft_t


@dataclass
class ForwardPass:
    y_norm: Tensor  # interpolated series before denormalization, (B, V, out_len)
    state: Optional[RinState]
    output: Tensor  # denormalized, (B, V, out_len)


def _split(z: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(z, dtype=np.complex128).view(np.float64).copy()


def _merge(x: np.ndarray) -> np.ndarray:
    return x[..., 0::2] + 1j * x[..., 1::2]


class FreqFlow(Module):
    """Forecast task: the joint head emits ``lookback + horizon`` samples
    (backcast then forecast).  Reconstruct task: the input is the window
    decimated by ``downsample`` and the head restores the full length.
    """

    def __init__(self, cfg: TrainConfig, n_vars: int, cutoff: Optional[int] = None):
        cfg.validate()
        self.cfg = cfg
        self.n_vars = n_vars
        if cfg.task == "forecast":
            self.in_len = cfg.lookback
            self.out_len = cfg.lookback + cfg.horizon
            self.flow_len = cfg.horizon
        else:
            self.in_len = cfg.lookback // cfg.downsample
            self.out_len = cfg.lookback
            self.flow_len = cfg.lookback
        for name, n in (("input", self.in_len), ("output", self.out_len), ("flow", self.flow_len)):
            if n % 2 or n < 4:
                raise ConfigError(f"{name} length {n} must be even and >= 4")
        self.eta = cfg.eta if cfg.eta is not None else self.out_len / self.in_len
        full_bins = self.in_len // 2
        if not cfg.use_lpf:
            cutoff = full_bins
        elif cutoff is None:
            cutoff = resolve_cutoff(full_bins, self.in_len, cfg.lpf)
        if not 1 <= cutoff <= full_bins:
            raise ConfigError(f"cutoff {cutoff} outside [1, {full_bins}]")
        self.cutoff = int(cutoff)

        seed = cfg.seed
        if cfg.use_mha:
            self.mha = MultiHeadAttention(self.in_len, cfg.n_heads, stream(seed, "init.mha"))
        self.rin = RevIN(n_vars, enabled=cfg.use_rin)
        self.spectral = ComplexLinear(self.cutoff, self.eta)
        if self.spectral.n_out > self.out_len // 2:
            raise ConfigError(f"interpolation yields {self.spectral.n_out} bins, more than "
                              f"{self.out_len // 2} available")
        if cfg.use_flow:
            dim = self.flow_len  # 2 * (flow_len / 2) split-real coordinates
            self.flow = FlowHead(dim, dim, hidden=cfg.flow_hidden, depth=cfg.flow_depth,
                                 time_embed_dim=cfg.time_embed_dim,
                                 rng=stream(seed, "init.flow"))
        self.flow_enabled = bool(cfg.use_flow and cfg.flow_correction)

    # ---------------------------------------------------------------- parts
    @property
    def has_mha(self) -> bool:
        return hasattr(self, "mha")

    @property
    def has_flow(self) -> bool:
        return hasattr(self, "flow")

    def flow_parameters(self):
        return self.flow.parameters() if self.has_flow else []

    def model_input(self, window: np.ndarray) -> np.ndarray:
        window = np.asarray(window, dtype=np.float64)
        if self.cfg.task == "reconstruct":
            if window.shape[-1] != self.cfg.lookback:
                raise DimensionError(f"expected windows of {self.cfg.lookback} samples")
            return window[..., :: self.cfg.downsample]
        if window.shape[-1] != self.in_len:
            raise DimensionError(f"expected look-back of {self.in_len} samples, got {window.shape[-1]}")
        return window

    # -------------------------------------------------------------- forward
    def forward(self, x) -> ForwardPass:
        """``x`` is the model input (already decimated for reconstruction)."""
        h = Tensor(x)
        if h.ndim != 3 or h.shape[1] != self.n_vars:
            raise DimensionError(f"expected (B, {self.n_vars}, L), got {h.shape}")
        if self.has_mha:
            h = self.mha(h)
        hn, state = self.rin.normalize(h)
        X = rfft_t(hn)[..., 1: self.cutoff + 1]
        Y = self.spectral.interpolate(X, self.out_len // 2)
        dc = Tensor(np.zeros(Y.shape[:-1] + (1,), dtype=np.complex128))
        y_norm = irfft_t(ag.concat([dc, Y], axis=-1), self.out_len)
        return ForwardPass(y_norm, state, self.rin.denormalize(y_norm, state))

    def _segment_spectrum(self, y: np.ndarray) -> np.ndarray:
        return rfft(y[..., -self.flow_len:])[..., 1:]

    def flow_condition(self, fwd: ForwardPass) -> np.ndarray:
        B, V = fwd.y_norm.shape[:2]
        return _split(self._segment_spectrum(fwd.y_norm.data)).reshape(B * V, self.flow_len)

    def flow_target(self, fwd: ForwardPass, truth: np.ndarray) -> np.ndarray:
        """Split-real residual spectrum of the supervised segment (detached)."""
        B, V = truth.shape[:2]
        true_norm = self.rin.normalize_like(truth, fwd.state)
        diff = self._segment_spectrum(true_norm) - self._segment_spectrum(fwd.y_norm.data)
        return _split(diff).reshape(B * V, self.flow_len)

    def correction(self, fwd: ForwardPass, n_steps: Optional[int] = None,
                   x0: Optional[np.ndarray] = None) -> np.ndarray:
        """Time-domain residual added to the supervised segment, (B, V, flow_len)."""
        B, V = fwd.y_norm.shape[:2]
        cond = self.flow_condition(fwd)
        if x0 is None:
            x0 = np.zeros_like(cond)
        r = ode_sample(self.flow, x0, cond, n_steps or self.cfg.ode_steps)
        spec = _merge(r).reshape(B, V, self.flow_len // 2)
        full = np.concatenate([np.zeros((B, V, 1), dtype=np.complex128), spec], axis=-1)
        full[..., -1] = full[..., -1].real
        return irfft(full, self.flow_len)

    # ------------------------------------------------------------ inference
    def predict_full(self, window, correct: Optional[bool] = None) -> np.ndarray:
        """Full head output in data units: backcast+forecast, or the reconstruction."""
        if correct is None:
            correct = self.flow_enabled
        x = self.model_input(window)
        with no_grad():
            fwd = self.forward(x)
            y = fwd.y_norm.data.copy()
            if correct and self.has_flow:
                y[..., -self.flow_len:] += self.correction(fwd)
            return self.rin.denormalize(y, fwd.state).data

    def predict(self, window, correct: Optional[bool] = None) -> np.ndarray:
        out = self.predict_full(window, correct)
        if self.cfg.task == "forecast":
            return out[..., -self.cfg.horizon:]
        return out

    # --------------------------------------------------------------- losses
    def loss(self, lookback: np.ndarray, horizon: Optional[np.ndarray] = None,
             t: Optional[np.ndarray] = None, x0: Optional[np.ndarray] = None,
             rng: Optional[np.random.Generator] = None) -> tuple[Tensor, LossBreakdown]:
        """Total training loss for a batch.

        ``t`` has one entry per (example, variate) and ``x0`` one base draw per
        (example, variate); they are sampled from ``rng`` when omitted.
        """
        cfg = self.cfg
        lookback = np.asarray(lookback, dtype=np.float64)
        fwd = self.forward(self.model_input(lookback))
        if cfg.task == "forecast":
            horizon = np.asarray(horizon, dtype=np.float64)
            if cfg.use_backcast:
                pred, target = fwd.output, np.concatenate([lookback, horizon], axis=-1)
            else:
                pred, target = fwd.output[..., -cfg.horizon:], horizon
            truth = horizon
        else:
            pred, target, truth = fwd.output, lookback, lookback
        recon = reconstruction_loss(pred, target)

        if self.has_flow and cfg.use_flow:
            x1 = self.flow_target(fwd, truth)
            cond = self.flow_condition(fwd)
            if cfg.flow_draws > 1:
                x1, cond = np.tile(x1, (cfg.flow_draws, 1)), np.tile(cond, (cfg.flow_draws, 1))
            if t is None or x0 is None:
                rng = rng or np.random.default_rng()
                t = rng.uniform(0.0, 1.0, size=x1.shape[0]) if t is None else t
                x0 = rng.standard_normal(x1.shape) if x0 is None else x0
            flow = flow_loss(self.flow, x0, x1, cond, t)
            params = self.flow_parameters()
        else:
            flow, params = Tensor(0.0), []
        return total_loss(recon, flow, params, cfg)

    # ------------------------------------------------------------ utilities
    def spectrum(self, window) -> Spectrum:
        """Normalized, DC-free, low-passed input spectrum of a batch of windows."""
        x = self.model_input(window)
        with no_grad():
            h = self.mha(Tensor(x)) if self.has_mha else Tensor(x)
            hn, _ = self.rin.normalize(h)
        return Spectrum(rfft(hn.data)[..., 1: self.cutoff + 1], self.in_len,
                        self.cutoff == self.in_len // 2)


def input_spectrum(windows: np.ndarray, cfg: TrainConfig) -> Spectrum:
    """Mean-free spectrum of raw training inputs, used to detect the base period."""
    x = np.asarray(windows, dtype=np.float64)
    if cfg.task == "reconstruct":
        x = x[..., :: cfg.downsample]
    x = x - x.mean(axis=-1, keepdims=True)
    return Spectrum(rfft(x)[..., 1:], x.shape[-1], True)


def build_model(cfg: TrainConfig, n_vars: int, train_lookbacks: Optional[np.ndarray] = None) -> FreqFlow:
    """Construct a model, resolving an automatic LPF cutoff from training data."""
    cutoff = None
    if cfg.use_lpf:
        in_len = cfg.lookback if cfg.task == "forecast" else cfg.lookback // cfg.downsample
        ref = input_spectrum(train_lookbacks, cfg) if train_lookbacks is not None else None
        if cfg.lpf.explicit_cutoff is None and cfg.lpf.base_period == "auto" and ref is None:
            raise ConfigError("automatic LPF cutoff needs training windows")
        cutoff = resolve_cutoff(in_len // 2, in_len, cfg.lpf, ref)
    return FreqFlow(cfg, n_vars, cutoff)
