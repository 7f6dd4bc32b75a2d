"""Acoustic feature frames, 24 kHz -> 16 kHz conversion and the MCD metric."""
from __future__ import annotations

import dataclasses
import math
import os

import numpy as np
import scipy.fft

from .config import N_CEPS, rate_for_ceps
from .errors import BadLength, RateMismatch, ShapeMismatch

RATE_RATIO = 2.0 / 3.0  # 16 kHz / 24 kHz
_MCD_SCALE = 10.0 / math.log(10.0)


@dataclasses.dataclass
class FeatureFrame:
    """Cepstra plus pitch period (samples at the frame's rate) and pitch correlation."""

    cepstra: np.ndarray
    pitch_period: float
    pitch_corr: float

    def __post_init__(self):
        self.cepstra = np.asarray(self.cepstra, dtype=np.float64).ravel()
        if self.cepstra.shape[0] not in N_CEPS.values():
            raise BadLength(f"cepstra must have 20 or 18 entries, got {self.cepstra.shape[0]}")
        self.pitch_period = float(self.pitch_period)
        self.pitch_corr = float(self.pitch_corr)
        if not self.pitch_period > 0:
            raise ValueError(f"pitch_period must be positive, got {self.pitch_period}")
        if not 0.0 <= self.pitch_corr <= 1.0:
            raise ValueError(f"pitch_corr must lie in [0, 1], got {self.pitch_corr}")

    @property
    def sample_rate(self) -> int:
        return rate_for_ceps(self.cepstra.shape[0])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.cepstra, [self.pitch_period, self.pitch_corr]])

    @classmethod
    def from_vector(cls, v) -> "FeatureFrame":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:-2], v[-2], v[-1])


def _check_band_length(n: int):
    if n not in (18, 20):
        raise BadLength(f"band vectors must have 18 or 20 entries, got {n}")


def idct_bands(cepstra) -> np.ndarray:
    """Orthonormal inverse DCT-II: cepstra -> per-band log energies."""
    c = np.asarray(cepstra, dtype=np.float64)
    _check_band_length(c.shape[-1])
    return scipy.fft.idct(c, type=2, norm="ortho", axis=-1)


def dct_bands(log_e) -> np.ndarray:
    """Orthonormal DCT-II: per-band log energies -> cepstra."""
    e = np.asarray(log_e, dtype=np.float64)
    _check_band_length(e.shape[-1])
    return scipy.fft.dct(e, type=2, norm="ortho", axis=-1)


def convert_cepstra(c24) -> np.ndarray:
    """20 cepstra (24 kHz) -> 18 cepstra (16 kHz) by dropping the top two bands."""
    c24 = np.asarray(c24, dtype=np.float64)
    if c24.shape[-1] != 20:
        raise BadLength(f"24 kHz cepstra must have 20 entries, got {c24.shape[-1]}")
    return dct_bands(idct_bands(c24)[..., :18])


def convert_frame(f24: FeatureFrame) -> FeatureFrame:
    if f24.sample_rate != 24000:
        raise BadLength("convert_frame expects a 24 kHz (20-cepstra) frame")
    return FeatureFrame(convert_cepstra(f24.cepstra), f24.pitch_period * RATE_RATIO, f24.pitch_corr)


def convert_array(feats24: np.ndarray) -> np.ndarray:
    """Vectorised conversion of a [frames, 22] array into [frames, 20]."""
    feats24 = np.asarray(feats24, dtype=np.float64)
    if feats24.ndim != 2 or feats24.shape[1] != 22:
        raise BadLength(f"expected [frames, 22] features, got {feats24.shape}")
    out = np.empty((feats24.shape[0], 20))
    out[:, :18] = convert_cepstra(feats24[:, :20])
    out[:, 18] = feats24[:, 20] * RATE_RATIO
    out[:, 19] = feats24[:, 21]
    return out


def mcd(ref, test) -> float:
    """Mean mel-cepstral distance in dB, ignoring the 0th coefficient."""
    ref = np.atleast_2d(np.asarray(ref, dtype=np.float64))
    test = np.atleast_2d(np.asarray(test, dtype=np.float64))
    if ref.shape != test.shape:
        raise ShapeMismatch(f"mcd: {ref.shape} vs {test.shape}")
    if ref.shape[0] == 0:
        return 0.0
    diff = ref[:, 1:] - test[:, 1:]
    return float(np.mean(_MCD_SCALE * np.sqrt(2.0 * np.sum(diff * diff, axis=1))))


# -- feature files: headerless float32 little-endian, frame-major ------------

def feature_width(sample_rate: int) -> int:
    return N_CEPS[sample_rate] + 2


def read_features(path: str | os.PathLike, sample_rate: int) -> np.ndarray:
    width = feature_width(sample_rate)
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % width:
        raise RateMismatch(
            f"{path}: {raw.size} floats is not a whole number of {width}-value frames")
    return raw.reshape(-1, width).astype(np.float64)


def write_features(path: str | os.PathLike, feats: np.ndarray) -> None:
    np.ascontiguousarray(feats, dtype="<f4").tofile(path)


def frames_from_array(feats: np.ndarray) -> list[FeatureFrame]:
    return [FeatureFrame.from_vector(row) for row in np.asarray(feats)]


def frames_to_array(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        return np.atleast_2d(frames).astype(np.float64) if frames.size else frames.reshape(0, 0)
    rows = [f.to_vector() for f in frames]
    if not rows:
        return np.zeros((0, 0))
    return np.stack(rows)
