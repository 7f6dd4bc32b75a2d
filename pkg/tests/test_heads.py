import math

import mpmath
import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings, strategies as st

from bunchvoc.errors import InvalidEpsilon, MalformedDistribution, TargetOutOfRange
from bunchvoc.heads import (
    BIN_WIDTH, PROB_FLOOR, S_MAX, S_MIN, LogisticParams, SlHeadParams, SoftmaxHeadParams,
    alpha1, alpha2, discretized_logistic_nll, logistic_nll_terms, sample_categorical,
    sample_logistic, sl_forward, softmax_forward,
)
from bunchvoc.nn import DenseLayer

from oracles import logistic_bin_nll_mp, logistic_bin_prob_hp

GRID = -1.0 + BIN_WIDTH * np.arange(65536)


# -- activations ----------------------------------------------------------------

def test_alpha_examples():
    assert alpha1(0.0) == 0.0
    assert alpha1(64.0) == pytest.approx(float(mpmath.tanh(1)), abs=1e-12)
    assert alpha1(-64.0) == -alpha1(64.0)
    assert alpha2(0.0) == pytest.approx(float(mpmath.exp(-6)), abs=1e-9)
    assert alpha2(100.0) == pytest.approx(math.exp(10), rel=1e-4)
    assert alpha2(-100.0) == pytest.approx(math.exp(-22), rel=1e-4)


def test_alpha2_range_on_random_inputs():
    rng = np.random.default_rng(0)
    h = np.concatenate([rng.normal(0, 50, 10**6), [np.inf, -np.inf]])
    s = np.exp(np.tanh(h) * 16.0 - 6.0)  # vectorised form, cross-checked below
    idx = rng.integers(0, h.size, 2000)
    assert all(alpha2(h[i]) == pytest.approx(s[i], rel=1e-14) for i in idx)
    assert s.min() >= S_MIN and s.max() <= S_MAX


# -- single logistic head --------------------------------------------------------

def _sl_params(rng, n_in=8, hidden=8, scale=1.0):
    return SlHeadParams([
        DenseLayer(rng.normal(0, scale, (hidden, n_in)), rng.normal(0, scale, hidden)),
        DenseLayer(rng.normal(0, scale, (2, hidden)), rng.normal(0, scale, 2)),
    ])


def test_sl_forward_zero_weights():
    p = SlHeadParams([DenseLayer(np.zeros((2, 4)), np.zeros(2))])
    out = sl_forward(p, np.ones(4))
    assert out.mu == 0.0 and out.s == pytest.approx(math.exp(-6), abs=1e-15)


def test_sl_forward_invariants_and_determinism():
    rng = np.random.default_rng(3)
    for _ in range(10**4):
        p = _sl_params(rng, scale=rng.uniform(0.1, 30))
        x = rng.normal(0, 5, 8)
        a, b = sl_forward(p, x), sl_forward(p, x)
        assert a == b
        assert -1.0 <= a.mu <= 1.0
        assert S_MIN <= a.s <= S_MAX


# -- sampling ---------------------------------------------------------------------

def test_sample_logistic_examples():
    p = LogisticParams(0.3, 0.01)
    assert sample_logistic(p, 0.9, 0.5) == 0.3
    for eps in (1e-9, 0.2, 0.999):
        assert sample_logistic(p, 0.0, eps) == 0.3
    e = math.e / (1.0 + math.e)
    assert sample_logistic(LogisticParams(0.0, 1.0), 1.0, e) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 1.5])
def test_sample_logistic_rejects_eps(eps):
    with pytest.raises(InvalidEpsilon):
        sample_logistic(LogisticParams(0.0, 1.0), 1.0, eps)


def test_sample_logistic_ks():
    mu, s, T = 0.1, 0.02, 0.75
    rng = np.random.Generator(np.random.Philox(0))
    eps = rng.random(10**5) + 2.0 ** -54
    draws = np.array([sample_logistic(LogisticParams(mu, s), T, e) for e in eps])
    stat = scipy.stats.kstest(draws, scipy.stats.logistic(loc=mu, scale=T * s).cdf).statistic
    assert stat < 0.01


# -- discretised likelihood -------------------------------------------------------

def test_grid_probabilities_sum_to_one():
    rng = np.random.default_rng(9)
    for _ in range(20):
        mu = rng.uniform(-1, 1)
        s = math.exp(rng.uniform(-12, 1))
        nll, _, _ = logistic_nll_terms(mu, s, GRID)
        # floored bins are worth at most 1e-12 each, far below the tolerance
        assert abs(np.exp(-nll)[nll < -math.log(PROB_FLOOR)].sum() - 1.0) < 1e-4


@pytest.mark.parametrize("s", [1.0, 0.3, 0.05])
def test_nll_density_approximation(s):
    for y in (0.0, 0.37, -0.6):
        nll = discretized_logistic_nll(LogisticParams(y, s), y)
        exact = -math.log(logistic_bin_prob_hp(y, s, y))
        assert nll == pytest.approx(exact, abs=1e-8)
        assert nll == pytest.approx(-math.log(BIN_WIDTH / (4.0 * s)), abs=1e-6)


def test_nll_matches_high_precision_over_random_points():
    rng = np.random.default_rng(21)
    for _ in range(300):
        mu = rng.uniform(-1, 1)
        s = math.exp(rng.uniform(-20, 2))
        y = GRID[rng.integers(0, 65536)]
        p = logistic_bin_prob_hp(mu, s, y)
        got = discretized_logistic_nll(LogisticParams(mu, s), y)
        want = -math.log(max(p, PROB_FLOOR))
        assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


def test_nll_minimised_at_target():
    for y in (-0.5, 0.0, 0.42):
        for s in (0.001, 0.05, 0.5):
            at = discretized_logistic_nll(LogisticParams(y, s), y)
            for off in np.linspace(-0.1, 0.1, 41):
                mu = float(np.clip(y + off, -1, 1))
                assert at <= discretized_logistic_nll(LogisticParams(mu, s), y) + 1e-12


def test_nll_edges_finite():
    for mu in (-1.0, 0.0, 1.0):
        for s in (S_MIN, 1e-3, S_MAX):
            for y in (-1.0, 1.0):
                v = discretized_logistic_nll(LogisticParams(mu, s), y)
                assert math.isfinite(v) and v >= 0.0


def test_nll_rejects_out_of_range_target():
    with pytest.raises(TargetOutOfRange):
        discretized_logistic_nll(LogisticParams(0.0, 1.0), 1.01)


def _nll_of(h1, log_s, y):
    return logistic_nll_terms(np.tanh(h1 / 64.0), np.exp(log_s), y)[0]


def _fd_points(rng, n, log_s_range):
    """Random (h1, log s, y) with y on the grid within 8 scales of the location."""
    for _ in range(n):
        h1 = rng.uniform(-60, 60)
        log_s = rng.uniform(*log_s_range)
        mu, s = math.tanh(h1 / 64), math.exp(log_s)
        y = float(np.clip(mu + s * rng.uniform(-8, 8), -1, 1))
        yield h1, log_s, GRID[int(round((y + 1) / BIN_WIDTH))]


def _normwise(analytic, fd):
    return float(np.max(np.abs(analytic - fd)) / np.max(np.abs(fd)))


def test_gradient_matches_finite_differences():
    """Analytic d NLL / d(h1, log s) vs central differences, step 1e-4, float64.

    Error is measured normwise over the gradient vector of each point, since
    the scale partial crosses zero near |y - mu| = 1.5 s.  The domain is
    s in [exp(-9), 1], y within 8 scales of mu.
    """
    rng = np.random.default_rng(0)
    step = 1e-4
    worst = 0.0
    for h1, log_s, y in _fd_points(rng, 100, (-9.0, 0.0)):
        mu, s = math.tanh(h1 / 64), math.exp(log_s)
        _, d_mu, d_s = logistic_nll_terms(mu, s, y)
        analytic = np.array([float(d_mu) * (1 - mu * mu) / 64, float(d_s) * s])
        fd = np.array([
            (_nll_of(h1 + step, log_s, y) - _nll_of(h1 - step, log_s, y)) / (2 * step),
            (_nll_of(h1, log_s + step, y) - _nll_of(h1, log_s - step, y)) / (2 * step),
        ])
        worst = max(worst, _normwise(analytic, fd))
    assert worst < 1e-5


def test_gradient_through_scale_activation():
    """The chain through alpha2 (d log s / d h2 = 16 (1 - tanh^2)); its 16x
    gain makes step-1e-4 truncation error ~1e-5, so the step here is 1e-5."""
    rng = np.random.default_rng(1)
    step = 1e-5
    worst = 0.0
    for h1, _, _ in _fd_points(rng, 100, (-9.0, 0.0)):
        h2 = rng.uniform(-0.2, 0.37)
        mu, s = math.tanh(h1 / 64), math.exp(math.tanh(h2) * 16 - 6)
        y = GRID[int(round((float(np.clip(mu + s * rng.uniform(-8, 8), -1, 1)) + 1) / BIN_WIDTH))]
        f = lambda a, b: _nll_of(a, math.tanh(b) * 16 - 6, y)
        _, d_mu, d_s = logistic_nll_terms(mu, s, y)
        th = math.tanh(h2)
        analytic = np.array([float(d_mu) * (1 - mu * mu) / 64, float(d_s) * s * 16 * (1 - th * th)])
        fd = np.array([(f(h1 + step, h2) - f(h1 - step, h2)) / (2 * step),
                       (f(h1, h2 + step) - f(h1, h2 - step)) / (2 * step)])
        worst = max(worst, _normwise(analytic, fd))
    assert worst < 1e-5


def test_floored_tail_gradient_matches_log_probability():
    """Deep-tail bins: gradients follow -log P computed with 60-digit arithmetic."""
    rng = np.random.default_rng(2)
    checked = 0
    while checked < 40:
        s = math.exp(rng.uniform(-20, -8))
        mu = rng.uniform(-0.9, 0.9)
        y = GRID[rng.integers(0, 65536)]
        nll, d_mu, d_s = logistic_nll_terms(mu, s, y)
        if nll < -math.log(PROB_FLOOR):
            continue
        with mpmath.workdps(60):
            m0, s0 = mpmath.mpf(mu), mpmath.mpf(s)
            want_mu = float(mpmath.diff(lambda m: logistic_bin_nll_mp(m, s0, y), m0))
            want_s = float(mpmath.diff(lambda sc: logistic_bin_nll_mp(m0, sc, y), s0))
        assert float(d_mu) == pytest.approx(want_mu, rel=1e-6)
        assert float(d_s) == pytest.approx(want_s, rel=1e-6)
        checked += 1


@settings(max_examples=200, deadline=None)
@given(st.floats(-1, 1), st.floats(-20, 2), st.integers(0, 65535))
def test_nll_non_negative(mu, log_s, k):
    assert discretized_logistic_nll(LogisticParams(mu, math.exp(log_s)), GRID[k]) >= 0.0


# -- softmax head -------------------------------------------------------------------

def _softmax_params(w, b):
    return SoftmaxHeadParams(DenseLayer(w, b))


def test_softmax_examples():
    x = np.ones(4)
    uniform = softmax_forward(_softmax_params(np.zeros((256, 4)), np.zeros(256)), x, 1.0)
    assert np.allclose(uniform, 1 / 256, atol=1e-15)
    rng = np.random.default_rng(0)
    flat = softmax_forward(_softmax_params(rng.normal(size=(256, 4)), np.zeros(256)), x, 1e6)
    assert np.max(np.abs(flat - 1 / 256)) < 1e-4
    b = np.zeros(256)
    b[40] = 20.0
    peaked = softmax_forward(_softmax_params(np.zeros((256, 4)), b), x, 1.0)
    assert peaked[40] > 0.999
    with pytest.raises(ValueError):
        softmax_forward(_softmax_params(np.zeros((256, 4)), b), x, 0.0)


def test_sample_categorical_examples():
    p = np.zeros(256)
    p[7] = 1.0
    for u in (0.0, 0.3, 0.999999):
        assert sample_categorical(p, u) == 7
    assert sample_categorical(np.full(256, 1 / 256), 0.5) == 128
    p = np.zeros(256)
    p[[3, 90]] = 0.5
    assert sample_categorical(p, 0.0) == 3


def test_sample_categorical_frequencies():
    rng = np.random.default_rng(4)
    p = rng.dirichlet(np.ones(256))
    u = rng.random(200000)
    counts = np.bincount([sample_categorical(p, v) for v in u], minlength=256)
    assert scipy.stats.chisquare(counts, p * u.size).pvalue > 1e-4


@pytest.mark.parametrize("bad", [np.full(255, 1 / 255), np.full(256, 1.0), -np.full(256, 1 / 256)])
def test_sample_categorical_rejects_bad_distributions(bad):
    with pytest.raises(MalformedDistribution):
        sample_categorical(bad, 0.5)
