"""Independent reference implementations the tests check the package against.

Everything here is deliberately written from the defining formulas (naive
DFT, explicit triangle sums, direct DCT summation, straight-line cell
equations) and shares no code with the package internals.
"""

import math
import struct

import numpy as np


def naive_dft(x: np.ndarray, nfft: int | None = None) -> np.ndarray:
    """O(n^2) DFT straight from the definition X[k] = sum_t x[t] e^{-2pi i k t / N}."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size if nfft is None else nfft
    buf = np.zeros(n)
    buf[: x.size] = x
    k = np.arange(n)[:, None]
    t = np.arange(n)[None, :]
    return (np.exp(-2j * np.pi * k * t / n) @ buf).astype(np.complex128)


def hamming_ref(n: int) -> np.ndarray:
    if n == 1:
        return np.ones(1)
    return np.array([0.54 - 0.46 * math.cos(2.0 * math.pi * i / (n - 1)) for i in range(n)])


def mel_ref(f: float) -> float:
    return 2595.0 * math.log10(1.0 + f / 700.0)


def mel_inv_ref(m: float) -> float:
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def straightline_mfcc(
    window,
    rate,
    n_coeffs=13,
    n_filters=26,
    fmin=50.0,
    fmax=2000.0,
    log_floor=1e-10,
):
    """Full chain recomputed naively: own Hamming, naive DFT magnitude,
    per-filter triangle sums over bins, natural log, direct DCT-II summation."""
    w = np.asarray(window, dtype=np.float64)
    n = w.size
    nfft = 1
    while nfft < n:
        nfft *= 2
    spec = np.abs(naive_dft(w * hamming_ref(n), nfft))[: nfft // 2 + 1]

    fmax = min(fmax, rate / 2.0)
    mlo, mhi = mel_ref(fmin), mel_ref(fmax)
    corners = [mel_inv_ref(mlo + j * (mhi - mlo) / (n_filters + 1)) for j in range(n_filters + 2)]
    bin_freqs = [k * rate / nfft for k in range(nfft // 2 + 1)]

    energies = []
    for i in range(n_filters):
        left, center, right = corners[i], corners[i + 1], corners[i + 2]
        total = 0.0
        for k, f in enumerate(bin_freqs):
            if left <= f <= center:
                weight = (f - left) / (center - left)
            elif center < f <= right:
                weight = (right - f) / (right - center)
            else:
                weight = 0.0
            total += weight * spec[k]
        energies.append(math.log(max(total, log_floor)))

    coeffs = []
    big_n = n_filters
    for k in range(n_coeffs):
        s = math.sqrt(1.0 / big_n) if k == 0 else math.sqrt(2.0 / big_n)
        coeffs.append(
            s * sum(energies[t] * math.cos(math.pi * k * (2 * t + 1) / (2 * big_n)) for t in range(big_n))
        )
    return np.array(coeffs)


def dct2_ref(v, n_out):
    v = np.asarray(v, dtype=np.float64)
    n = v.size
    out = []
    for k in range(n_out):
        s = math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n)
        out.append(s * sum(v[t] * math.cos(math.pi * k * (2 * t + 1) / (2 * n)) for t in range(n)))
    return np.array(out)


# --- cells ------------------------------------------------------------------


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_step_ref(x, h_prev, c_prev, W, U, b):
    """Straight-line LSTM step for 1-D vectors, gate order [i, f, g, o]."""
    H = h_prev.size
    a = x @ W + h_prev @ U + b
    i = _sig(a[:H])
    f = _sig(a[H : 2 * H])
    g = np.tanh(a[2 * H : 3 * H])
    o = _sig(a[3 * H :])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def gru_step_ref(x, h_prev, W, U, b):
    """Straight-line GRU step for 1-D vectors, gate order [z, r, n]."""
    H = h_prev.size
    ax = x @ W + b
    z = _sig(ax[:H] + h_prev @ U[:, :H])
    r = _sig(ax[H : 2 * H] + h_prev @ U[:, H : 2 * H])
    n = np.tanh(ax[2 * H :] + (r * h_prev) @ U[:, 2 * H :])
    return (1.0 - z) * n + z * h_prev


def central_difference_grads(loss_fn, params: dict, eps: float = 1e-5) -> dict:
    """Per-element central differences of loss_fn() over a dict of arrays,
    perturbing in place."""
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat, gflat = p.ravel(), g.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lp = loss_fn()
            flat[j] = orig - eps
            lm = loss_fn()
            flat[j] = orig
            gflat[j] = (lp - lm) / (2.0 * eps)
        grads[name] = g
    return grads


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


# --- WAV construction (independent of the package's writer) -----------------


def build_wav(raw: bytes, rate: int, channels: int, bits: int, audio_format: int = 1) -> bytes:
    block = channels * bits // 8
    return (
        struct.pack(
            "<4sI4s4sIHHIIHH4sI",
            b"RIFF",
            36 + len(raw),
            b"WAVE",
            b"fmt ",
            16,
            audio_format,
            channels,
            rate,
            rate * block,
            block,
            bits,
            b"data",
            len(raw),
        )
        + raw
    )


def pcm16_wav(values, rate=8000, channels=1) -> bytes:
    return build_wav(np.asarray(values, dtype="<i2").tobytes(), rate, channels, 16)


def pcm8_wav(values, rate=8000) -> bytes:
    return build_wav(np.asarray(values, dtype=np.uint8).tobytes(), rate, 1, 8)


def pcm32_wav(values, rate=8000) -> bytes:
    return build_wav(np.asarray(values, dtype="<i4").tobytes(), rate, 1, 32)


def float32_wav(values, rate=8000) -> bytes:
    return build_wav(np.asarray(values, dtype="<f4").tobytes(), rate, 1, 32, audio_format=3)


def brute_force_window_count(n_samples: int, win: int, step: int) -> int:
    count = 0
    start = 0
    while start + win <= n_samples:
        count += 1
        start += step
    return count
