"""16-bit PCM output: headerless little-endian samples or a mono WAV file."""
from __future__ import annotations

import os
import wave

import numpy as np


def write_pcm(path: str | os.PathLike, pcm) -> None:
    np.ascontiguousarray(pcm, dtype="<i2").tofile(path)


def read_pcm(path: str | os.PathLike) -> np.ndarray:
    return np.fromfile(path, dtype="<i2").astype(np.int16)


def write_wav(path: str | os.PathLike, pcm, sample_rate: int) -> None:
    with wave.open(os.fspath(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(np.ascontiguousarray(pcm, dtype="<i2").tobytes())


def write_audio(path: str | os.PathLike, pcm, sample_rate: int) -> None:
    """WAV when the name ends in ``.wav``, raw PCM otherwise."""
    if os.fspath(path).lower().endswith(".wav"):
        write_wav(path, pcm, sample_rate)
    else:
        write_pcm(path, pcm)
