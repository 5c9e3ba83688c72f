"""Spectral primitives and the cepstral feature chain.

The chain turns one analysis window of audio into one coefficient vector:
Hamming window -> zero-padded radix-2 FFT -> magnitude spectrum ->
triangular mel-filterbank energies -> natural log -> orthonormal DCT-II.

Everything here is pure and reentrant; filterbanks and transform matrices
are cached read-only, so they can be shared across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "DegenerateFilterError",
    "MfccConfig",
    "MelFilterbank",
    "hamming_window",
    "fft",
    "magnitude_spectrum",
    "mel_scale",
    "mel_inverse",
    "build_filterbank",
    "dct2",
    "mfcc",
    "next_pow2",
]


class DegenerateFilterError(ValueError):
    """Two adjacent mel breakpoints map to the same FFT bin (fft_size too small)."""


def next_pow2(n: int) -> int:
    """Smallest power of two >= n."""
    if n < 1:
        raise ValueError("n must be positive")
    return 1 << (n - 1).bit_length()


@dataclass(frozen=True)
class MfccConfig:
    """Parameters of the cepstral feature chain.

    fft_size of None means "next power of two >= window length", resolved
    per window. fmax is capped at the Nyquist frequency of the signal the
    config is applied to.
    """

    n_coeffs: int = 13
    n_filters: int = 26
    fft_size: int | None = None
    fmin: float = 50.0
    fmax: float = 2000.0
    log_floor: float = 1e-10

    def __post_init__(self) -> None:
        if self.n_coeffs < 1 or self.n_coeffs > self.n_filters:
            raise ValueError("need 1 <= n_coeffs <= n_filters")
        if not (0.0 <= self.fmin < self.fmax):
            raise ValueError("need 0 <= fmin < fmax")
        if self.fft_size is not None and (
            self.fft_size < 1 or self.fft_size & (self.fft_size - 1)
        ):
            raise ValueError("fft_size must be a power of two")
        if self.log_floor <= 0.0:
            raise ValueError("log_floor must be positive")

    def resolve_fft_size(self, window_len: int) -> int:
        if self.fft_size is None:
            return next_pow2(window_len)
        if self.fft_size < window_len:
            raise ValueError(
                f"fft_size {self.fft_size} is smaller than the window ({window_len} samples)"
            )
        return self.fft_size

    def effective_fmax(self, sample_rate: float) -> float:
        return min(self.fmax, sample_rate / 2.0)


@dataclass
class MelFilterbank:
    """Triangular filters on the mel scale, as rows over the one-sided spectrum.

    breakpoints holds the n_filters + 2 mel-equispaced frequencies (Hz) that
    define the triangle corners; filter i rises over [b[i], b[i+1]] and falls
    over [b[i+1], b[i+2]].
    """

    weights: np.ndarray  # (n_filters, fft_size // 2 + 1)
    breakpoints: np.ndarray  # (n_filters + 2,) Hz
    fft_size: int
    sample_rate: float

    @property
    def n_filters(self) -> int:
        return self.weights.shape[0]


def hamming_window(n: int) -> np.ndarray:
    """Hamming weights w[i] = 0.54 - 0.46 cos(2 pi i / (n - 1)); w[0] == w[n-1].

    n == 1 returns the defined limit {1.0}.
    """
    if n < 1:
        raise ValueError("window length must be >= 1")
    return _hamming_cached(n)


@lru_cache(maxsize=64)
def _hamming_cached(n: int) -> np.ndarray:
    if n == 1:
        w = np.ones(1)
    else:
        i = np.arange(n, dtype=np.float64)
        w = 0.54 - 0.46 * np.cos(2.0 * np.pi * i / (n - 1))
    w.setflags(write=False)
    return w


@lru_cache(maxsize=32)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev = (rev << 1) | ((idx >> b) & 1)
    rev.setflags(write=False)
    return rev


def fft(x: np.ndarray) -> np.ndarray:
    """Radix-2 decimation-in-time FFT; the input length must be a power of two."""
    x = np.asarray(x)
    n = x.shape[0]
    if n < 1 or n & (n - 1):
        raise ValueError("fft length must be a power of two")
    a = x[_bit_reversal(n)].astype(np.complex128)
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / m)
        a = a.reshape(-1, m)
        even = a[:, :half]
        odd = a[:, half:] * tw
        a = np.concatenate((even + odd, even - odd), axis=1).reshape(-1)
        m *= 2
    return a


def magnitude_spectrum(window: np.ndarray, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """One-sided magnitude spectrum |X[k]|, k = 0..fft_size/2, of a Hamming-windowed,
    zero-padded window. Phase is discarded."""
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("window must be a non-empty 1-D array")
    nfft = cfg.resolve_fft_size(w.size)
    buf = np.zeros(nfft)
    buf[: w.size] = w * hamming_window(w.size)
    return np.abs(fft(buf)[: nfft // 2 + 1])


def mel_scale(f):
    """Hz -> mel: 2595 log10(1 + f / 700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_inverse(m):
    """mel -> Hz, exact inverse of mel_scale."""
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_filterbank(
    cfg: MfccConfig, sample_rate: float, fft_size: int | None = None
) -> MelFilterbank:
    """n_filters triangular filters with apexes at mel-equispaced points between
    fmin and min(fmax, rate/2), evaluated at the FFT bin-center frequencies."""
    nfft = fft_size if fft_size is not None else cfg.fft_size
    if nfft is None:
        raise ValueError("fft_size must be given (config leaves it window-dependent)")
    return _filterbank_cached(
        cfg.n_filters, nfft, cfg.fmin, cfg.effective_fmax(sample_rate), float(sample_rate)
    )


@lru_cache(maxsize=32)
def _filterbank_cached(
    n_filters: int, nfft: int, fmin: float, fmax: float, rate: float
) -> MelFilterbank:
    mlo, mhi = mel_scale(fmin), mel_scale(fmax)
    breakpoints = mel_inverse(np.linspace(mlo, mhi, n_filters + 2))
    bin_freqs = np.arange(nfft // 2 + 1) * (rate / nfft)

    bin_of = np.floor(breakpoints / (rate / nfft) + 0.5).astype(int)
    if np.any(np.diff(bin_of) == 0):
        raise DegenerateFilterError(
            f"adjacent mel breakpoints collapse onto one FFT bin "
            f"(fft_size {nfft} too small for {n_filters} filters in [{fmin}, {fmax}] Hz)"
        )

    weights = np.zeros((n_filters, bin_freqs.size))
    for i in range(n_filters):
        left, center, right = breakpoints[i : i + 3]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        weights[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    weights.setflags(write=False)
    breakpoints.setflags(write=False)
    return MelFilterbank(weights=weights, breakpoints=breakpoints, fft_size=nfft, sample_rate=rate)


@lru_cache(maxsize=64)
def _dct2_matrix(n: int, n_out: int) -> np.ndarray:
    k = np.arange(n_out)[:, None]
    i = np.arange(n)[None, :]
    mat = np.cos(np.pi * k * (2 * i + 1) / (2 * n))
    mat[0] *= np.sqrt(1.0 / n)
    if n_out > 1:
        mat[1:] *= np.sqrt(2.0 / n)
    mat.setflags(write=False)
    return mat


def dct2(v: np.ndarray, n_out: int | None = None) -> np.ndarray:
    """Orthonormal DCT-II: y[k] = s(k) sum_i v[i] cos(pi k (2i+1) / 2N),
    s(0) = sqrt(1/N), s(k>0) = sqrt(2/N). Returns the first n_out entries."""
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[0]
    if n_out is None:
        n_out = n
    if not 1 <= n_out <= n:
        raise ValueError("need 1 <= n_out <= len(v)")
    return _dct2_matrix(n, n_out) @ v


def mfcc(
    window: np.ndarray, sample_rate: float, cfg: MfccConfig = MfccConfig()
) -> np.ndarray:
    """Cepstral coefficients of one analysis window (the window is a single
    analysis frame; no sub-framing). Natural log with floor log_floor guards
    silent windows. Output length is cfg.n_coeffs."""
    w = np.asarray(window, dtype=np.float64)
    nfft = cfg.resolve_fft_size(w.size)
    fb = build_filterbank(cfg, sample_rate, fft_size=nfft)
    energies = fb.weights @ magnitude_spectrum(w, cfg)
    return dct2(np.log(np.maximum(energies, cfg.log_floor)), cfg.n_coeffs)
