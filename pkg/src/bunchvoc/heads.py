"""Output heads: single logistic (location/scale) and plain softmax over mu-law codes."""
from __future__ import annotations

import dataclasses
import math

import numpy as np
import scipy.special

from .errors import DimensionMismatch, InvalidEpsilon, MalformedDistribution, TargetOutOfRange
from .kernels import KernelVariant
from .nn import ALPHA_U, ALPHA_V, ALPHA_W, DenseLayer, alpha1, alpha2, dense_forward

# Targets live on the 16-bit grid -1 + k*BIN_WIDTH, k = 0..65535.
BIN_WIDTH = 2.0 / 65535.0
PROB_FLOOR = 1e-12
S_MIN = math.exp(-ALPHA_V - ALPHA_W)
S_MAX = math.exp(ALPHA_V - ALPHA_W)

__all__ = [
    "SlHeadParams", "LogisticParams", "SoftmaxHeadParams", "alpha1", "alpha2",
    "sl_forward", "sample_logistic", "discretized_logistic_nll", "logistic_nll_terms",
    "softmax_forward", "sample_categorical",
]


@dataclasses.dataclass
class SlHeadParams:
    fc_block: list  # DenseLayer, last one has out_dim 2
    u: float = ALPHA_U
    v: float = ALPHA_V
    w: float = ALPHA_W

    def __post_init__(self):
        if not self.fc_block or self.fc_block[-1].out_dim != 2:
            raise DimensionMismatch("single-logistic FC block must end in a 2-unit layer")
        if min(self.u, self.v, self.w) <= 0:
            raise ValueError("u, v, w must be positive")


@dataclasses.dataclass(frozen=True)
class LogisticParams:
    mu: float
    s: float


@dataclasses.dataclass
class SoftmaxHeadParams:
    fc: DenseLayer

    def __post_init__(self):
        if self.fc.out_dim != 256:
            raise DimensionMismatch("softmax head must produce 256 logits")


def _run_block(layers, x, variant):
    for layer in layers:
        x = dense_forward(layer, x, variant)
    return x


def sl_forward(params: SlHeadParams, gru_b_out, variant: KernelVariant = KernelVariant.SCALAR) -> LogisticParams:
    h = _run_block(params.fc_block, gru_b_out, variant)
    h1, h2 = float(h[0]), float(h[1])
    if params.u == ALPHA_U and params.v == ALPHA_V and params.w == ALPHA_W:
        return LogisticParams(alpha1(h1), alpha2(h2))
    if math.isnan(h2):
        h2 = 0.0
    return LogisticParams(math.tanh(h1 / params.u), math.exp(math.tanh(h2) * params.v - params.w))


def sample_logistic(p: LogisticParams, T: float, eps: float) -> float:
    """Inverse-CDF draw: mu + T * s * logit(eps)."""
    if not 0.0 < eps < 1.0:
        raise InvalidEpsilon(f"eps must lie strictly inside (0, 1), got {eps}")
    if T < 0:
        raise ValueError(f"temperature must be non-negative, got {T}")
    return p.mu + T * p.s * math.log(eps / (1.0 - eps))


_sigmoid = scipy.special.expit


def _dsigmoid(u):
    e = np.exp(-np.abs(u))
    return e / (1.0 + e) ** 2


def logistic_nll_terms(mu, s, y):
    """Vectorised discretised-logistic NLL and its partials w.r.t. ``mu`` and ``s``.

    Everything is computed in float64.  Returns ``(nll, d_mu, d_s)``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    half = 0.5 * BIN_WIDTH
    left = y < -1.0 + half
    right = y > 1.0 - half
    u_hi = (y + half - mu) / s
    u_lo = (y - half - mu) / s
    cdf_hi = np.where(right, 1.0, _sigmoid(u_hi))
    cdf_lo = np.where(left, 0.0, _sigmoid(u_lo))
    # upper tail: difference of survival functions keeps precision
    sf_hi = np.where(right, 0.0, _sigmoid(-u_hi))
    sf_lo = np.where(left, 1.0, _sigmoid(-u_lo))
    prob = np.where(u_lo > 0, sf_lo - sf_hi, cdf_hi - cdf_lo)
    floored = prob < PROB_FLOOR
    nll = -np.log(np.maximum(prob, PROB_FLOOR))

    g_hi = np.where(right, 0.0, _dsigmoid(u_hi))
    g_lo = np.where(left, 0.0, _dsigmoid(u_lo))
    dp_dmu = (g_lo - g_hi) / s
    dp_ds = (g_lo * np.where(left, 0.0, u_lo) - g_hi * np.where(right, 0.0, u_hi)) / s
    safe = np.where(floored, 1.0, prob)
    d_mu = -dp_dmu / safe
    d_s = -dp_ds / safe
    if np.any(floored):
        # the floor clamps the value only; gradients follow the unclamped
        # log-probability so a head stuck far in a tail can still recover
        a = np.where(left, -np.inf, u_lo)
        b = np.where(right, np.inf, u_hi)
        t_mu, t_s = _tail_grads(a[floored], b[floored], s[floored] if s.ndim else s)
        d_mu = np.where(floored, 0.0, d_mu)
        d_s = np.where(floored, 0.0, d_s)
        d_mu[floored] = t_mu
        d_s[floored] = t_s
    return nll, d_mu, d_s


def _softplus(v):
    return np.logaddexp(0.0, v)


def _log_tail(a, b):
    """Partials of log(sigmoid(b) - sigmoid(a)) w.r.t. a and b, for a > 0 (b may be +inf)."""
    gap = _softplus(a) - _softplus(b)
    r = np.exp(gap)
    g_a = _sigmoid(a)
    g_b = np.where(np.isinf(b), 0.0, _sigmoid(b))
    one_minus = -np.expm1(gap)
    return -g_a / one_minus, r * g_b / one_minus


def _tail_grads(a, b, s):
    """d(-log P)/d(mu, s) for bins deep in a tail, computed in log space."""
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), a.shape)
    d_a = np.zeros_like(a)
    d_b = np.zeros_like(a)
    upper = a > 0
    if np.any(upper):
        d_a[upper], d_b[upper] = _log_tail(a[upper], b[upper])
    lower = ~upper
    if np.any(lower):
        # mirror the lower tail onto the upper one: a' = -b, b' = -a
        m_a, m_b = _log_tail(-b[lower], -a[lower])
        d_a[lower], d_b[lower] = -m_b, -m_a
    a_f = np.where(np.isinf(a), 0.0, a)
    b_f = np.where(np.isinf(b), 0.0, b)
    return (d_a + d_b) / s, (d_a * a_f + d_b * b_f) / s


def discretized_logistic_nll(p: LogisticParams, target: float) -> float:
    """-log P(target) under a logistic discretised to the 16-bit grid."""
    if not -1.0 <= target <= 1.0:
        raise TargetOutOfRange(f"target {target} outside [-1, 1]")
    nll, _, _ = logistic_nll_terms(p.mu, p.s, target)
    return float(nll)


def softmax_forward(params: SoftmaxHeadParams, gru_b_out, T: float,
                    variant: KernelVariant = KernelVariant.SCALAR) -> np.ndarray:
    if not T > 0:
        raise ValueError(f"softmax temperature must be positive, got {T}")
    logits = dense_forward(params.fc, gru_b_out, variant).astype(np.float64) / T
    logits -= logits.max()
    e = np.exp(logits)
    return e / e.sum()


def sample_categorical(probs, u: float) -> int:
    """Inverse-CDF draw: first code whose cumulative probability exceeds ``u``."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (256,) or not np.isfinite(probs).all() or (probs < 0).any():
        raise MalformedDistribution("need 256 finite non-negative probabilities")
    if abs(probs.sum() - 1.0) > 1e-5:
        raise MalformedDistribution(f"probabilities sum to {probs.sum()}")
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must lie in [0, 1), got {u}")
    cdf = np.cumsum(probs)
    q = int(np.searchsorted(cdf, u, side="right"))
    if q > 255:  # rounding left the total just under u
        q = int(np.flatnonzero(probs)[-1])
    return q
