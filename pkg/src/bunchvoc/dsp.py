"""Scalar signal-processing primitives: mu-law companding and linear prediction."""
from __future__ import annotations

import math

import numpy as np

from .config import BAND_HZ
from .errors import DegenerateAutocorrelation
from .features import FeatureFrame, idct_bands
from .kernels import lpc_dot

MU = 255.0
_LOG_256 = math.log(256.0)

LPC_ORDER = 16
NOISE_FLOOR = 1e-4
# Gaussian lag-window width in cycles/sample (32 Hz at 16 kHz, 48 Hz at 24 kHz).
LAG_WINDOW = 0.002


def mulaw_encode(x: float) -> int:
    """Normalised sample in [-1, 1] -> 8-bit mu-law code (128 is silence)."""
    x = float(x)
    if math.isnan(x):
        return 128
    x = min(1.0, max(-1.0, x))
    v = 128.0 + 128.0 * math.copysign(math.log1p(MU * abs(x)), x) / _LOG_256
    return min(255, max(0, math.floor(v + 0.5)))


def mulaw_decode(q: int) -> float:
    d = int(q) - 128
    mag = (256.0 ** (abs(d) / 128.0) - 1.0) / MU
    return mag if d >= 0 else -mag


def mulaw_encode_array(x) -> np.ndarray:
    x = np.nan_to_num(np.asarray(x, dtype=np.float64), nan=0.0)
    x = np.clip(x, -1.0, 1.0)
    v = 128.0 + 128.0 * np.sign(x) * np.log1p(MU * np.abs(x)) / _LOG_256
    return np.clip(np.floor(v + 0.5), 0, 255).astype(np.int64)


def mulaw_decode_array(q) -> np.ndarray:
    d = np.asarray(q, dtype=np.int64) - 128
    return np.sign(d) * (256.0 ** (np.abs(d) / 128.0) - 1.0) / MU


def levinson_recursion(autocorr) -> tuple[np.ndarray, np.ndarray, float]:
    """Plain Levinson-Durbin on ``autocorr`` (no conditioning).

    Returns predictor coefficients ``a`` (``x[t] ~ sum a[k-1] x[t-k]``), the
    reflection coefficients and the final prediction-error power.
    """
    r = np.asarray(autocorr, dtype=np.float64)
    order = r.shape[0] - 1
    if not (np.isfinite(r).all() and r[0] > 0):
        raise DegenerateAutocorrelation(f"autocorr[0] must be positive and finite, got {r[0]}")
    a = np.zeros(order)
    k = np.zeros(order)
    err = r[0]
    floor = r[0] * 1e-12
    for i in range(order):
        acc = r[i + 1] - np.dot(a[:i], r[i:0:-1])
        ki = acc / err
        prev = a[:i].copy()
        a[:i] = prev - ki * prev[::-1]
        a[i] = ki
        k[i] = ki
        err *= 1.0 - ki * ki
        if not err > floor:
            raise DegenerateAutocorrelation(f"prediction error underflow at order {i + 1}")
    return a, k, err


def levinson_durbin(autocorr, noise_floor: float = NOISE_FLOOR) -> np.ndarray:
    """Predictor coefficients of order ``len(autocorr) - 1`` as float32.

    ``autocorr[0]`` is scaled by ``1 + noise_floor`` first, which keeps the
    solved filter stable when the autocorrelation comes from coarse features.
    """
    r = np.array(autocorr, dtype=np.float64)
    if r.ndim != 1 or r.shape[0] < 2:
        raise DegenerateAutocorrelation("need at least two autocorrelation lags")
    r[0] *= 1.0 + noise_floor
    a, _, _ = levinson_recursion(r)
    return a.astype(np.float32)


def lpc_predict(history, a) -> float:
    """Linear prediction from ``history = [x[t-1], x[t-2], ...]`` (most recent first)."""
    a = np.ascontiguousarray(a, dtype=np.float32)
    h = np.ascontiguousarray(np.asarray(history, dtype=np.float32)[: a.shape[0]][::-1])
    if h.shape[0] < a.shape[0]:
        h = np.concatenate([np.zeros(a.shape[0] - h.shape[0], np.float32), h])
    return float(lpc_dot(a, h))


def _spectrum_grid(sample_rate: int) -> tuple[np.ndarray, int]:
    n_fft = sample_rate // 50
    freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    return freqs, n_fft


def features_to_autocorr(frame: FeatureFrame, order: int = LPC_ORDER,
                         lag_window: float = LAG_WINDOW) -> np.ndarray:
    """Autocorrelation lags 0..order implied by a frame's cepstra (lag-windowed)."""
    rate = frame.sample_rate
    band_energy = 10.0 ** idct_bands(frame.cepstra)
    freqs, n_fft = _spectrum_grid(rate)
    power = np.interp(freqs, BAND_HZ[rate], band_energy)
    r = np.fft.irfft(power, n_fft)[: order + 1]
    lags = np.arange(order + 1)
    return r * np.exp(-0.5 * (2.0 * math.pi * lag_window * lags) ** 2)


def features_to_lpc(frame: FeatureFrame, order: int = LPC_ORDER,
                    lag_window: float = LAG_WINDOW, noise_floor: float = NOISE_FLOOR) -> np.ndarray:
    return levinson_durbin(features_to_autocorr(frame, order, lag_window), noise_floor)
