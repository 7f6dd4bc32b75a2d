"""Dense layers, GRU cells and embedding tables (float32, fixed-order kernels)."""
from __future__ import annotations

import dataclasses
import enum
import math

import numpy as np

from . import kernels
from .errors import DimensionMismatch
from .kernels import KernelVariant

F32 = np.float32

# Output-head activation constants (location squashing and log-scale range).
ALPHA_U = 64.0
ALPHA_V = 16.0
ALPHA_W = 6.0


class Activation(enum.Enum):
    IDENTITY = 0
    TANH = 1
    SIGMOID = 2
    ALPHA1 = 3
    ALPHA2 = 4


def alpha1(h1: float) -> float:
    """Location activation: tanh(h / 64), in (-1, 1)."""
    return math.tanh(float(h1) / ALPHA_U)


def alpha2(h2: float) -> float:
    """Scale activation: exp(16 tanh(h) - 6), in [exp(-22), exp(10)]."""
    h2 = float(h2)
    if math.isnan(h2):
        h2 = 0.0
    return math.exp(math.tanh(h2) * ALPHA_V - ALPHA_W)


@dataclasses.dataclass
class DenseLayer:
    weight: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=F32)
        self.bias = np.ascontiguousarray(self.bias, dtype=F32)
        if self.weight.ndim != 2 or self.weight.shape[0] != self.bias.shape[0] or min(self.weight.shape) < 1:
            raise DimensionMismatch(f"dense layer W{self.weight.shape} b{self.bias.shape}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclasses.dataclass
class GruCell:
    """GRU weights with gates stacked as [update z; reset r; candidate h]."""

    input_weight: np.ndarray  # [3n, in]
    recurrent_weight: np.ndarray  # [3n, n]
    bias: np.ndarray  # [3n]

    def __post_init__(self):
        self.input_weight = np.ascontiguousarray(self.input_weight, dtype=F32)
        self.recurrent_weight = np.ascontiguousarray(self.recurrent_weight, dtype=F32)
        self.bias = np.ascontiguousarray(self.bias, dtype=F32)
        n3, n = self.recurrent_weight.shape
        if n3 != 3 * n or self.input_weight.shape[0] != n3 or self.bias.shape != (n3,):
            raise DimensionMismatch(
                f"GRU shapes W{self.input_weight.shape} R{self.recurrent_weight.shape} b{self.bias.shape}")

    @property
    def units(self) -> int:
        return self.recurrent_weight.shape[1]


@dataclasses.dataclass
class EmbeddingTable:
    rows: np.ndarray  # [256, n_e]

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=F32)
        if self.rows.ndim != 2 or self.rows.shape[0] != 256 or self.rows.shape[1] < 1:
            raise DimensionMismatch(f"embedding table must be [256, n_e], got {self.rows.shape}")


def _apply_activation(v: np.ndarray, act: Activation) -> np.ndarray:
    if act is Activation.ALPHA1:
        return np.array([alpha1(x) for x in v], dtype=F32)
    if act is Activation.ALPHA2:
        return np.array([alpha2(x) for x in v], dtype=F32)
    kernels.activate_into(v, act.value)
    return v


def dense_forward(layer: DenseLayer, x, variant: KernelVariant = KernelVariant.SCALAR) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=F32)
    if x.shape != (layer.in_dim,):
        raise DimensionMismatch(f"dense input has shape {x.shape}, layer expects ({layer.in_dim},)")
    if variant is KernelVariant.VECTORIZED:
        out = layer.bias + layer.weight @ x
    else:
        out = layer.bias.copy()
        kernels.matvec_acc_into(layer.weight, x, out)
    return _apply_activation(out, layer.activation)


def gru_step_preactivated(recurrent_weight: np.ndarray, gx: np.ndarray, h: np.ndarray,
                          variant: KernelVariant = KernelVariant.SCALAR) -> np.ndarray:
    """GRU update when the input contribution ``gx`` (bias included) is already known."""
    gh = np.zeros(recurrent_weight.shape[0], dtype=F32)
    if variant is KernelVariant.VECTORIZED:
        gh = recurrent_weight @ h
    else:
        kernels.matvec_acc_into(recurrent_weight, h, gh)
    out = np.empty_like(h)
    kernels.gru_update_into(gx, gh, h, out)
    return out


def gru_step(cell: GruCell, x, h, variant: KernelVariant = KernelVariant.SCALAR) -> np.ndarray:
    """h' = z*h + (1-z)*tanh(W_h x + r*(R_h h) + b_h)."""
    x = np.ascontiguousarray(x, dtype=F32)
    h = np.ascontiguousarray(h, dtype=F32)
    if x.shape != (cell.input_weight.shape[1],) or h.shape != (cell.units,):
        raise DimensionMismatch(
            f"gru_step: x{x.shape} h{h.shape} for cell in={cell.input_weight.shape[1]} units={cell.units}")
    if variant is KernelVariant.VECTORIZED:
        gx = cell.bias + cell.input_weight @ x
    else:
        gx = cell.bias.copy()
        kernels.matvec_acc_into(cell.input_weight, x, gx)
    return gru_step_preactivated(cell.recurrent_weight, gx, h, variant)


def embedding_lookup(table: EmbeddingTable, q: int) -> np.ndarray:
    """Row ``q`` of the table (read-only view)."""
    q = int(q)
    if not 0 <= q < table.rows.shape[0]:
        raise IndexError(f"code {q} outside 0..{table.rows.shape[0] - 1}")
    row = table.rows[q]
    row.flags.writeable = False
    return row
