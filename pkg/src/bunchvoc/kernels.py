"""Inner compute kernels.

Two variants are provided for the hot loops:

* ``KernelVariant.SCALAR`` -- numba-compiled loops that accumulate in
  float32 strictly in index order.  Results are bit-reproducible and are
  what the synthesis engine uses by default.
* ``KernelVariant.VECTORIZED`` -- numpy/BLAS backed.  Faster for large
  matrices but free to reassociate sums, so only equal to the scalar path
  within ~1e-5 relative.

Every public kernel returns a fresh array; the ``*_into`` helpers mutate
their accumulator and are meant for the engine's inner loop.
"""
from __future__ import annotations

import enum
import math

import numba
import numpy as np

from .errors import DimensionMismatch

F32 = np.float32
_ONE = np.float32(1.0)


class KernelVariant(enum.Enum):
    SCALAR = "scalar"
    VECTORIZED = "vectorized"


# ---------------------------------------------------------------------------
# numba kernels (fixed accumulation order)
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def matvec_acc_into(w, x, acc):
    rows, cols = w.shape
    for i in range(rows):
        s = acc[i]
        for k in range(cols):
            s += w[i, k] * x[k]
        acc[i] = s


@numba.njit(cache=True)
def embed_row_sum_into(tables, codes, acc):
    n = acc.shape[0]
    for t in range(codes.shape[0]):
        q = codes[t]
        for j in range(n):
            acc[j] += tables[t, q, j]


# Transcendentals are evaluated in float64 and rounded once to float32, so
# any implementation with a faithful double tanh/exp reproduces them.
@numba.njit(cache=True)
def sigmoid_f32(v):
    return np.float32(1.0 / (1.0 + math.exp(-np.float64(v))))


@numba.njit(cache=True)
def tanh_f32(v):
    return np.float32(math.tanh(np.float64(v)))


@numba.njit(cache=True)
def gru_update_into(gx, gh, h, out):
    """Gate arithmetic of one GRU step, given input and recurrent pre-activations.

    ``gx`` and ``gh`` are stacked [z, r, h] blocks of length ``3 * len(h)``;
    ``gx`` already contains the bias.
    """
    n = h.shape[0]
    for i in range(n):
        z = sigmoid_f32(gx[i] + gh[i])
        r = sigmoid_f32(gx[n + i] + gh[n + i])
        c = tanh_f32(gx[2 * n + i] + r * gh[2 * n + i])
        out[i] = z * h[i] + (_ONE - z) * c


@numba.njit(cache=True)
def activate_into(v, kind):
    # kind: 0 identity, 1 tanh, 2 sigmoid
    if kind == 1:
        for i in range(v.shape[0]):
            v[i] = tanh_f32(v[i])
    elif kind == 2:
        for i in range(v.shape[0]):
            v[i] = sigmoid_f32(v[i])


@numba.njit(cache=True)
def lpc_dot(a, hist):
    """sum_k a[k-1] * hist[-k]; ``hist`` is ordered oldest first."""
    n = hist.shape[0]
    s = np.float32(0.0)
    for k in range(a.shape[0]):
        s += a[k] * hist[n - 1 - k]
    return s


@numba.njit(cache=True)
def lpc_extrapolate_into(a, hist, out):
    """Predict ``len(out)`` future samples, feeding each prediction back in."""
    order = a.shape[0]
    n = hist.shape[0]
    m = out.shape[0]
    buf = np.empty(n + m, dtype=np.float32)
    buf[:n] = hist
    for j in range(m):
        s = np.float32(0.0)
        end = n + j
        for k in range(order):
            s += a[k] * buf[end - 1 - k]
        buf[end] = s
        out[j] = s


@numba.njit(cache=True)
def restore_merged_into(e_x, u_x, out):
    rows, inner = e_x.shape
    cols = u_x.shape[1]
    for q in range(rows):
        for j in range(cols):
            s = np.float32(0.0)
            for k in range(inner):
                s += e_x[q, k] * u_x[k, j]
            out[q, j] = s


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------

def _as_f32(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=F32)


def matvec_acc(w, x, acc, variant: KernelVariant = KernelVariant.SCALAR) -> np.ndarray:
    """Return ``acc + w @ x``."""
    w, x, acc = _as_f32(w), _as_f32(x), _as_f32(acc)
    if w.ndim != 2 or w.shape[1] != x.shape[0] or w.shape[0] != acc.shape[0]:
        raise DimensionMismatch(f"matvec_acc: W{w.shape} x{x.shape} acc{acc.shape}")
    if variant is KernelVariant.VECTORIZED:
        return acc + w @ x
    out = acc.copy()
    matvec_acc_into(w, x, out)
    return out


def embed_row_sum(tables, codes, acc, variant: KernelVariant = KernelVariant.SCALAR) -> np.ndarray:
    """Return ``acc + sum_i tables[i][codes[i]]``, summed in slot order."""
    tables = _as_f32(tables)
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    acc = _as_f32(acc)
    if tables.ndim != 3 or tables.shape[1] != 256:
        raise DimensionMismatch(f"embedding tables must be [K, 256, D], got {tables.shape}")
    if tables.shape[0] != codes.shape[0] or tables.shape[2] != acc.shape[0]:
        raise DimensionMismatch(
            f"embed_row_sum: tables{tables.shape} codes{codes.shape} acc{acc.shape}")
    if codes.size and (codes.min() < 0 or codes.max() > 255):
        raise DimensionMismatch("codes must lie in 0..255")
    out = acc.copy()
    if variant is KernelVariant.VECTORIZED:
        for t in range(codes.shape[0]):
            out += tables[t, codes[t]]
        return out
    embed_row_sum_into(tables, codes, out)
    return out
