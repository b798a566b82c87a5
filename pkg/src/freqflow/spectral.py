"""Real FFT, DC handling, low-pass filtering and spectral resizing.

Conventions: the forward transform is unnormalized, the inverse divides by
the length.  A :class:`Spectrum` never stores the DC bin; its coefficient
``k`` is frequency ``k + 1`` cycles per ``source_length`` samples, and the
Nyquist bin (when present) is the last coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Union

import numpy as np

from .autograd import Tensor, as_tensor, make_node
from .errors import ConfigError, ContractError, DCLeakError

# ----------------------------------------------------------------- FFT kernels


_KERNEL_MAX = 64


@lru_cache(maxsize=None)
def _kernel(n: int) -> np.ndarray:
    k = np.arange(n)
    # reduce k*m mod n before the exponential; the matrix is symmetric
    return np.exp(-2j * np.pi * (np.outer(k, k) % n) / n)


@lru_cache(maxsize=None)
def _factor(n: int) -> int:
    """Largest divisor of n not above sqrt(n); 1 when n is prime."""
    for d in range(math.isqrt(n), 1, -1):
        if n % d == 0:
            return d
    return 1


@lru_cache(maxsize=None)
def _twiddle(n2: int, n1: int) -> np.ndarray:
    n = n1 * n2
    return np.exp(-2j * np.pi * (np.outer(np.arange(n2), np.arange(n1)) % n) / n)


def _fft_last(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    if n <= _KERNEL_MAX:
        return x @ _kernel(n)
    n1 = _factor(n)
    if n1 == 1:
        return _bluestein(x)
    n2 = n // n1
    lead = x.shape[:-1]
    # x[n1*m2 + m1] laid out as A[m2, m1]
    a = x.reshape(lead + (n2, n1))
    y = _fft_second_last(a) * _twiddle(n2, n1)
    z = _fft_last(y)  # z[k1, k2] = X[k1 + n2*k2]
    return np.swapaxes(z, -1, -2).reshape(lead + (n,))


def _fft_second_last(a: np.ndarray) -> np.ndarray:
    n = a.shape[-2]
    if n <= _KERNEL_MAX:
        return _kernel(n) @ a
    return np.swapaxes(_fft_last(np.swapaxes(a, -1, -2)), -1, -2)


@lru_cache(maxsize=None)
def _bluestein_plan(n: int):
    m = 1 << (2 * n - 2).bit_length()
    k = np.arange(n)
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:])[::-1]
    return m, chirp, _fft_last(b)


def _bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    m, chirp, fb = _bluestein_plan(n)
    a = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    a[..., :n] = x * chirp
    prod = _fft_last(a) * fb
    conv = np.conj(_fft_last(np.conj(prod))) / m
    return conv[..., :n] * chirp


def fft(x) -> np.ndarray:
    """Complex DFT along the last axis.

    Mixed-radix Cooley-Tukey over the factorization of the length (small
    factors use a cached kernel), Bluestein's chirp-z for large primes.
    """
    x = np.asarray(x, dtype=np.complex128)
    return _fft_last(x)


def ifft(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.complex128)
    return np.conj(fft(np.conj(X))) / X.shape[-1]


def _check_even(L: int):
    if L % 2 or L < 4:
        raise ContractError(f"length must be even and >= 4, got {L}")


def rfft(x) -> np.ndarray:
    """``X[k] = sum_n x[n] exp(-2 pi i k n / L)`` for k = 0..L/2, along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    L = x.shape[-1]
    _check_even(L)
    return fft(x)[..., : L // 2 + 1]


def _hermitian_full(X: np.ndarray, L: int) -> np.ndarray:
    full = np.zeros(X.shape[:-1] + (L,), dtype=np.complex128)
    full[..., : L // 2 + 1] = X
    full[..., L // 2 + 1:] = np.conj(X[..., 1: L // 2][..., ::-1])
    return full


def irfft(X, L: int, tol: float = 1e-9) -> np.ndarray:
    """Inverse of :func:`rfft`.

    DC and Nyquist must be real up to ``tol`` (relative to the largest
    coefficient); their residual imaginary parts are zeroed.
    """
    _check_even(L)
    X = np.array(X, dtype=np.complex128)
    if X.shape[-1] != L // 2 + 1:
        raise ContractError(f"expected {L // 2 + 1} bins for L={L}, got {X.shape[-1]}")
    scale = max(1.0, float(np.max(np.abs(X)))) if X.size else 1.0
    edge = X[..., [0, L // 2]].imag
    if np.any(np.abs(edge) > tol * scale):
        raise ContractError("DC/Nyquist bins must be real for a real inverse transform")
    X[..., 0] = X[..., 0].real
    X[..., L // 2] = X[..., L // 2].real
    return ifft(_hermitian_full(X, L)).real


def naive_dft(x) -> np.ndarray:
    """Direct O(L^2) evaluation of the DFT sum for k = 0..L//2 (reference only)."""
    x = np.asarray(x, dtype=np.float64)
    L = x.shape[-1]
    n = np.arange(L)
    k = np.arange(L // 2 + 1)
    # reduce k*n mod L before the exponential so large L stays accurate
    basis = np.exp(-2j * np.pi * ((k[:, None] * n[None, :]) % L) / L)
    return x @ basis.T


# ------------------------------------------------------------------- Spectrum
@dataclass(frozen=True)
class Spectrum:
    coeffs: np.ndarray  # complex (..., K), DC excluded
    source_length: int
    nyquist_included: bool = True

    @property
    def n_bins(self) -> int:
        return self.coeffs.shape[-1]

    def amplitude(self) -> np.ndarray:
        return np.abs(self.coeffs)

    def phase(self) -> np.ndarray:
        return np.angle(self.coeffs)


def drop_dc(X, rtol: float = 1e-8) -> Spectrum:
    """Strip the DC bin of a full rFFT; the source must already be zero-mean."""
    X = np.asarray(X, dtype=np.complex128)
    L = 2 * (X.shape[-1] - 1)
    if np.any(np.abs(X[..., 0]) >= rtol * L):
        raise DCLeakError("spectrum has a DC component; normalize the input to zero mean first")
    return Spectrum(X[..., 1:].copy(), L, True)


def with_dc(S: Spectrum, dc=0.0) -> np.ndarray:
    """Prepend a DC bin (zero by default), giving a full rFFT layout."""
    dc = np.broadcast_to(np.asarray(dc, dtype=np.complex128), S.coeffs.shape[:-1])
    return np.concatenate([dc[..., None], S.coeffs], axis=-1)


def to_time(S: Spectrum) -> np.ndarray:
    L = 2 * S.n_bins
    return irfft(with_dc(S), L)


def spectrum_of(x) -> Spectrum:
    """rFFT of a zero-mean signal with DC removed."""
    return drop_dc(rfft(x))


# ----------------------------------------------------------------- filtering
@dataclass(frozen=True)
class LpfConfig:
    n_harmonics: int = 6
    base_period: Union[int, str] = "auto"
    explicit_cutoff: Optional[int] = None


def detect_base_period(S: Spectrum) -> float:
    """Fundamental period in samples from the argmax of the mean amplitude spectrum."""
    amp = np.abs(S.coeffs).reshape(-1, S.n_bins).mean(axis=0)
    return S.source_length / (int(np.argmax(amp)) + 1)


def resolve_cutoff(n_bins: int, source_length: int, cfg: LpfConfig,
                   reference: Optional[Spectrum] = None) -> int:
    if cfg.explicit_cutoff is not None:
        c = int(cfg.explicit_cutoff)
        if not 1 <= c <= n_bins:
            raise ConfigError(f"cutoff {c} outside [1, {n_bins}]")
        return c
    if cfg.n_harmonics < 1:
        raise ConfigError("n_harmonics must be >= 1")
    if cfg.base_period == "auto":
        if reference is None:
            raise ConfigError("automatic base period needs a reference spectrum")
        period = detect_base_period(reference)
    else:
        period = float(cfg.base_period)
        if period <= 0:
            raise ConfigError("base_period must be positive")
    c = math.ceil(cfg.n_harmonics * source_length / period - 1e-9)
    return min(max(c, 1), n_bins)


def low_pass(S: Spectrum, cfg: LpfConfig, reference: Optional[Spectrum] = None) -> Spectrum:
    """Keep the first ``c`` bins; ``reference`` (default ``S``) drives "auto" periods."""
    c = resolve_cutoff(S.n_bins, S.source_length, cfg, reference if reference is not None else S)
    return replace(S, coeffs=S.coeffs[..., :c].copy(),
                   nyquist_included=S.nyquist_included and c == S.n_bins)


def zero_pad_to(S: Spectrum, target_bins: int) -> Spectrum:
    if target_bins < S.n_bins:
        raise ContractError(f"cannot pad {S.n_bins} bins down to {target_bins}")
    pad = np.zeros(S.coeffs.shape[:-1] + (target_bins - S.n_bins,), dtype=np.complex128)
    return Spectrum(np.concatenate([S.coeffs, pad], axis=-1), 2 * target_bins, True)


def time_shift(S: Spectrum, tau: float) -> Spectrum:
    """Delay by ``tau`` samples: bin k rotates by exp(-2 pi i (k+1) tau / L)."""
    f = np.arange(1, S.n_bins + 1)
    rot = np.exp(-2j * np.pi * ((f * tau) % S.source_length) / S.source_length)
    return replace(S, coeffs=S.coeffs * rot)


# ------------------------------------------------------ differentiable variants
def rfft_t(x) -> Tensor:
    """Differentiable :func:`rfft` over the last axis of a real tensor."""
    x = as_tensor(x)
    L = x.shape[-1]
    X = rfft(x.data)

    def _bw(g):
        # dL/dx[n] = Re(sum_k g_k exp(+2 pi i k n / L))
        full = np.zeros(g.shape[:-1] + (L,), dtype=np.complex128)
        full[..., : L // 2 + 1] = g
        return (fft(np.conj(full)).real,)

    return make_node(X, (x,), _bw)


def irfft_t(X, L: int) -> Tensor:
    """Differentiable inverse; imaginary parts of DC and Nyquist are discarded."""
    X = as_tensor(X)
    _check_even(L)
    if X.shape[-1] != L // 2 + 1:
        raise ContractError(f"expected {L // 2 + 1} bins for L={L}, got {X.shape[-1]}")
    data = np.array(X.data, dtype=np.complex128)
    data[..., 0] = data[..., 0].real
    data[..., L // 2] = data[..., L // 2].real
    out = ifft(_hermitian_full(data, L)).real
    weights = np.full(L // 2 + 1, 2.0 / L)
    weights[[0, L // 2]] = 1.0 / L

    def _bw(g):
        G = rfft(g) * weights
        G[..., 0] = G[..., 0].real
        G[..., L // 2] = G[..., L // 2].real
        return (G,)

    return make_node(out, (X,), _bw)
