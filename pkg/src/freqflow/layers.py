"""Learnable and normalizing blocks of the forecaster."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor, as_tensor, no_grad
from .errors import ContractError, DimensionError
from .spectral import Spectrum

SCALE_FLOOR = 1e-5
TIME_FREQUENCIES = (1.0, 2.0, 4.0, 8.0)
HE_GAIN = math.sqrt(6.0)


class Module:
    """Parameter container; attributes are registered in assignment order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, m in enumerate(value):
                    yield from m.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def n_parameters(self) -> int:
        return sum(p.n_real() for p in self.parameters() if p.trainable)


class Linear(Module):
    """``x @ weight + bias``.  ``gain`` scales the uniform init bound
    ``gain / sqrt(n_in)``; use ``sqrt(6)`` (He scaling) ahead of GELU stacks."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False,
                 gain: float = 1.0):
        bound = gain / math.sqrt(n_in)
        if zero:
            self.weight = Parameter(np.zeros((n_in, n_out)))
            self.bias = Parameter(np.zeros(n_out))
        else:
            self.weight = Parameter(rng.uniform(-bound, bound, size=(n_in, n_out)))
            self.bias = Parameter(rng.uniform(-bound, bound, size=n_out))

    def __call__(self, x) -> Tensor:
        return as_tensor(x) @ self.weight + self.bias


# ---------------------------------------------------------------------- RIN
@dataclass
class RinState:
    mean: Tensor  # (B, V, 1)
    scale: Tensor  # (B, V, 1)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mean.data[..., 0], self.scale.data[..., 0]


def _stats(x: Tensor) -> RinState:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = ag.square(centered).mean(axis=-1, keepdims=True)
    # floor the std, not the variance, so constant slices get exactly SCALE_FLOOR
    scale = ag.maximum(ag.sqrt(ag.maximum(var, SCALE_FLOOR ** 2 * 1e-6)), SCALE_FLOOR)
    return RinState(mu, scale)


def rin_normalize(x) -> tuple[np.ndarray, RinState]:
    """Per-(batch, variate) standardization over the last axis (population std)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ContractError("instance normalization needs at least 2 samples")
    with no_grad():
        state = _stats(Tensor(x))
        out = (x - state.mean.data) / state.scale.data
    return out, state


def rin_denormalize(y, state: RinState) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[:-1] != state.mean.shape[:-1]:
        raise DimensionError(f"output batch/variate shape {y.shape[:-1]} != state {state.mean.shape[:-1]}")
    return y * state.scale.data + state.mean.data


class RevIN(Module):
    """Reversible instance normalization with a per-variate affine map.

    ``enabled=False`` turns both directions into the identity (the
    no-normalization ablation) and drops the affine terms.
    """

    def __init__(self, n_vars: int, enabled: bool = True, affine: bool = True):
        self.n_vars = n_vars
        self.enabled = enabled
        self.affine = enabled and affine
        if self.affine:
            self.gamma = Parameter(np.ones(n_vars))
            self.beta = Parameter(np.zeros(n_vars))

    def normalize(self, x) -> tuple[Tensor, Optional[RinState]]:
        x = as_tensor(x)
        if not self.enabled:
            return x, None
        if x.shape[-2] != self.n_vars:
            raise DimensionError(f"expected {self.n_vars} variates, got {x.shape[-2]}")
        state = _stats(x)
        y = (x - state.mean) / state.scale
        if self.affine:
            y = y * self.gamma[:, None] + self.beta[:, None]
        return y, state

    def denormalize(self, y, state: Optional[RinState]) -> Tensor:
        y = as_tensor(y)
        if not self.enabled:
            return y
        if y.shape[:-1] != state.mean.shape[:-1]:
            raise DimensionError(f"output batch/variate shape {y.shape[:-1]} != state {state.mean.shape[:-1]}")
        if self.affine:
            y = (y - self.beta[:, None]) / self.gamma[:, None]
        return y * state.scale + state.mean

    def normalize_like(self, x: np.ndarray, state: Optional[RinState]) -> np.ndarray:
        """Apply an existing state to new data (e.g. the horizon), no gradient."""
        if not self.enabled:
            return np.asarray(x, dtype=np.float64)
        y = (x - state.mean.data) / state.scale.data
        if self.affine:
            y = y * self.gamma.data[:, None] + self.beta.data[:, None]
        return y


# ---------------------------------------------------------- complex linear
def interpolated_bins(n_in: int, eta: float) -> int:
    return max(1, int(round(eta * n_in)))


class ComplexLinear(Module):
    """Single complex-valued linear map between spectra, shared across variates.

    Initialized to carry input bin ``k`` (frequency k+1) to the output bin of
    the same physical frequency on the ``eta``-times longer grid, with gain
    ``eta`` so the time-domain amplitude is preserved.
    """

    def __init__(self, n_in: int, eta: float, n_out: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None, init: str = "identity"):
        self.eta = float(eta)
        self.n_in = n_in
        self.n_out = n_out if n_out is not None else interpolated_bins(n_in, eta)
        W = np.zeros((self.n_out, n_in), dtype=np.complex128)
        if init == "identity":
            for k in range(n_in):
                j = int(round(self.eta * (k + 1))) - 1
                if 0 <= j < self.n_out:
                    W[j, k] = self.eta
        elif init == "random":
            rng = rng or np.random.default_rng()
            bound = 1.0 / math.sqrt(n_in)
            W = rng.uniform(-bound, bound, W.shape) + 1j * rng.uniform(-bound, bound, W.shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.W = Parameter(W)
        self.b = Parameter(np.zeros(self.n_out, dtype=np.complex128))

    def __call__(self, X) -> Tensor:
        X = as_tensor(X)
        if X.shape[-1] != self.n_in:
            raise DimensionError(f"layer expects {self.n_in} bins, got {X.shape[-1]}")
        if X.ndim == 1:
            return self(X.reshape(1, self.n_in)).reshape(self.n_out)
        return X @ ag.transpose(self.W) + self.b

    def interpolate(self, X, target_bins: int) -> Tensor:
        """Map then zero-pad to ``target_bins`` (DC still excluded)."""
        Y = self(X)
        if target_bins < self.n_out:
            raise DimensionError(f"cannot fit {self.n_out} bins into {target_bins}")
        return ag.pad_last(Y, target_bins - self.n_out)


def complex_interpolate(layer: ComplexLinear, S: Spectrum, L_o: int) -> Spectrum:
    if S.n_bins != layer.n_in:
        raise DimensionError(f"spectrum has {S.n_bins} bins, layer expects {layer.n_in}")
    with no_grad():
        Y = layer.interpolate(Tensor(S.coeffs), L_o // 2)
    return Spectrum(Y.data, L_o, True)


# ----------------------------------------------------------------- attention
class MultiHeadAttention(Module):
    """Self-attention across variates; each token is a variate's raw window.

    The output projection starts at zero, so a fresh block is the identity.
    """

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator,
                 zero_output: bool = True):
        if d_model % n_heads:
            raise ContractError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.o = Linear(d_model, d_model, rng, zero=zero_output)

    def _heads(self, t: Tensor) -> Tensor:
        B, V, _ = t.shape
        return t.reshape(B, V, self.n_heads, self.d_head).transpose(0, 2, 1, 3)

    def attention(self, x) -> Tensor:
        x = as_tensor(x)
        q, k = self._heads(self.q(x)), self._heads(self.k(x))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(self.d_head))
        return ag.softmax(scores, axis=-1)

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 3 or x.shape[-1] != self.d_model:
            raise DimensionError(f"expected (B, V, {self.d_model}), got {x.shape}")
        B, V, _ = x.shape
        a = self.attention(x)
        ctx = (a @ self._heads(self.v(x))).transpose(0, 2, 1, 3).reshape(B, V, self.d_model)
        return x + self.o(ctx)


def mha_forward(block: MultiHeadAttention, x) -> np.ndarray:
    with no_grad():
        return block(x).data


# ----------------------------------------------------------------- flow head
def time_features(t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    ang = 2 * np.pi * t[:, None] * np.asarray(TIME_FREQUENCIES)[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


class FlowHead(Module):
    """Velocity-field MLP ``u(x_t, t | cond)``.

    Sinusoidal time features go through a small learned embedding
    (``8 -> time_embed_dim -> time_embed_dim``) and are concatenated with the
    state and condition; ``depth`` hidden GELU layers of width ``hidden``
    follow, then a linear output of the state dimension.
    """

    def __init__(self, state_dim: int, cond_dim: int, hidden: int = 64, depth: int = 2,
                 time_embed_dim: int = 128, rng: Optional[np.random.Generator] = None,
                 zero_output: bool = False):
        if depth < 1:
            raise ContractError("flow head depth must be >= 1")
        rng = rng or np.random.default_rng()
        self.state_dim = state_dim
        self.cond_dim = cond_dim
        self.hidden = hidden
        self.depth = depth
        self.time_embed_dim = time_embed_dim
        n_feat = 2 * len(TIME_FREQUENCIES)
        self.time_in = Linear(n_feat, time_embed_dim, rng)
        self.time_out = Linear(time_embed_dim, time_embed_dim, rng)
        # He-scaled hidden layers keep activations from vanishing at depth 16
        self.layers = [Linear(state_dim + cond_dim + time_embed_dim, hidden, rng, gain=HE_GAIN)]
        self.layers += [Linear(hidden, hidden, rng, gain=HE_GAIN) for _ in range(depth - 1)]
        self.out = Linear(hidden, state_dim, rng, zero=zero_output)

    @property
    def input_dim(self) -> int:
        return self.state_dim + self.cond_dim + self.time_embed_dim

    def __call__(self, x_t, t, cond) -> Tensor:
        x_t, cond = as_tensor(x_t), as_tensor(cond)
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if np.any(t < 0) or np.any(t > 1):
            raise ContractError("flow time must lie in [0, 1]")
        if x_t.shape[-1] != self.state_dim or cond.shape[-1] != self.cond_dim:
            raise DimensionError(
                f"flow head expects state {self.state_dim} / cond {self.cond_dim}, "
                f"got {x_t.shape[-1]} / {cond.shape[-1]}")
        n = x_t.shape[0]
        if t.size == 1 and n != 1:
            t = np.full(n, t[0])
        emb = self.time_out(ag.gelu(self.time_in(time_features(t))))
        h = ag.concat([x_t, cond, emb], axis=-1)
        for layer in self.layers:
            h = ag.gelu(layer(h))
        return self.out(h)


def flow_head_forward(head: FlowHead, x_t, t: float, cond) -> np.ndarray:
    """Single-vector convenience wrapper returning a plain array."""
    x_t = np.asarray(x_t, dtype=np.float64)
    single = x_t.ndim == 1
    cond = np.asarray(cond, dtype=np.float64)
    with no_grad():
        out = head(np.atleast_2d(x_t), t, np.atleast_2d(cond)).data
    return out[0] if single else out
