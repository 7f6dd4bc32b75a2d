"""Model hyperparameters, presets and the band layout."""
from __future__ import annotations

import dataclasses
import enum

# Triangular band centre frequencies (Hz) of the CELT-style layout used by the
# cepstral features.  Twenty points span 0-12 kHz for 24 kHz audio; the last
# two (9.6 kHz and 12 kHz) are what a 16 kHz model cannot represent, so its
# layout is the first eighteen points, ending at 8 kHz.
BAND_HZ_24K = (
    0, 200, 400, 600, 800, 1000, 1200, 1400, 1600, 2000,
    2400, 2800, 3200, 4000, 4800, 5600, 6800, 8000, 9600, 12000,
)
BAND_HZ_16K = BAND_HZ_24K[:18]

SAMPLE_RATES = (24000, 16000)
N_CEPS = {24000: 20, 16000: 18}
BAND_HZ = {24000: BAND_HZ_24K, 16000: BAND_HZ_16K}
DEFAULT_FRAME_SIZE = {24000: 240, 16000: 160}


def rate_for_ceps(n_ceps: int) -> int:
    for rate, n in N_CEPS.items():
        if n == n_ceps:
            return rate
    raise ValueError(f"no feature layout has {n_ceps} cepstra")


class HeadKind(enum.IntEnum):
    SINGLE_LOGISTIC = 0
    SOFTMAX = 1


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    Only the first nine fields are written to the model-file header; the
    remaining size fields are recovered from tensor shapes on load.
    """

    S: int = 1
    n_a: int = 384
    n_b: int = 16
    n_e: int = 1
    sample_rate: int = 24000
    head: HeadKind = HeadKind.SINGLE_LOGISTIC
    frame_size: int = 0  # 0 -> 10 ms at sample_rate
    lpc_order: int = 16
    default_T: float = 0.75
    cond_size: int = 128
    pitch_embed_dim: int = 64
    pitch_bins: int = 256
    head_hidden: tuple = (16, 16)

    def __post_init__(self):
        if self.frame_size == 0:
            object.__setattr__(self, "frame_size", DEFAULT_FRAME_SIZE.get(self.sample_rate, 0))
        object.__setattr__(self, "head", HeadKind(self.head))
        object.__setattr__(self, "head_hidden", tuple(int(h) for h in self.head_hidden))
        if not 1 <= self.S <= 8:
            raise ValueError(f"bunch size S must be in 1..8, got {self.S}")
        if self.n_a < 8:
            raise ValueError(f"n_a must be >= 8, got {self.n_a}")
        if self.n_b < 1 or self.n_e < 1 or self.cond_size < 1:
            raise ValueError("n_b, n_e and cond_size must be positive")
        if self.sample_rate not in SAMPLE_RATES:
            raise ValueError(f"sample_rate must be one of {SAMPLE_RATES}")
        if self.frame_size <= 0 or self.frame_size % self.S:
            raise ValueError(f"frame_size {self.frame_size} must be a positive multiple of S={self.S}")
        if self.lpc_order < 1:
            raise ValueError("lpc_order must be positive")
        if self.default_T < 0:
            raise ValueError("default_T must be non-negative")

    @property
    def n_ceps(self) -> int:
        return N_CEPS[self.sample_rate]

    @property
    def feature_width(self) -> int:
        return self.n_ceps + 2

    @property
    def n_slots(self) -> int:
        """Feedback embedding tables: predictions, samples and excitations per bunch position."""
        return 3 * self.S

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


PRESETS = {
    "b-lpcnet2-l": ModelConfig(S=1, n_a=384, n_e=1, default_T=0.75, sample_rate=24000,
                               head=HeadKind.SOFTMAX),
    "b-lpcnet2-r": ModelConfig(S=2, n_a=224, n_e=1, default_T=0.75, sample_rate=24000),
    "b-lpcnet2-s": ModelConfig(S=5, n_a=176, n_e=1, default_T=0.65, sample_rate=24000),
    "b-lpcnet2-s16": ModelConfig(S=5, n_a=176, n_e=1, default_T=0.65, sample_rate=16000),
}
