import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bunchvoc.errors import BadLength, RateMismatch, ShapeMismatch
from bunchvoc.features import (
    FeatureFrame, convert_array, convert_cepstra, convert_frame, dct_bands, idct_bands, mcd,
    read_features, write_features,
)

from oracles import dct_matrix


@pytest.mark.parametrize("n", [18, 20])
def test_dct_matches_basis_matrix(n, rng):
    m = dct_matrix(n)
    x = rng.normal(size=(50, n))
    assert np.allclose(dct_bands(x), x @ m.T, atol=1e-12)
    assert np.allclose(idct_bands(x), x @ m, atol=1e-12)


@pytest.mark.parametrize("n", [18, 20])
def test_dct_examples(n):
    assert np.all(idct_bands(np.zeros(n)) == 0.0)
    assert np.all(dct_bands(np.zeros(n)) == 0.0)
    c = np.zeros(n)
    c[0] = math.sqrt(n)
    assert np.allclose(idct_bands(c), 1.0, atol=1e-12)
    dc = dct_bands(np.ones(n))
    assert dc[0] == pytest.approx(math.sqrt(n), abs=1e-12)
    assert np.max(np.abs(dc[1:])) < 1e-12


@pytest.mark.parametrize("n", [18, 20])
def test_dct_round_trips(n):
    rng = np.random.default_rng(n)
    c = rng.normal(0, 5, (1000, n))
    assert np.max(np.abs(dct_bands(idct_bands(c)) - c)) < 1e-6
    assert np.max(np.abs(idct_bands(dct_bands(c)) - c)) < 1e-6


def test_dct_rejects_other_lengths():
    with pytest.raises(BadLength):
        dct_bands(np.zeros(19))
    with pytest.raises(BadLength):
        idct_bands(np.zeros(22))


def _compose_oracle(c24):
    """Invert with the explicit basis, keep 18 bands, re-transform."""
    log_e = dct_matrix(20).T @ c24
    return dct_matrix(18) @ log_e[:18]


def test_convert_frame_examples():
    f = FeatureFrame(np.zeros(20), 150.0, 0.83)
    g = convert_frame(f)
    assert g.pitch_period == 100.0
    assert g.pitch_corr == 0.83
    assert g.cepstra.shape == (18,)
    assert g.sample_rate == 16000


def test_convert_zero_top_bands():
    rng = np.random.default_rng(1)
    log_e = np.concatenate([rng.normal(size=18), [0.0, 0.0]])
    c24 = dct_matrix(20) @ log_e
    out = convert_cepstra(c24)
    assert np.allclose(out, dct_bands(idct_bands(c24)[:18]), atol=1e-12)
    assert np.allclose(out, dct_matrix(18) @ log_e[:18], atol=1e-9)


def test_convert_matches_oracle_on_random_frames():
    rng = np.random.default_rng(2)
    feats = np.column_stack([rng.normal(0, 3, (1000, 20)), rng.uniform(32, 256, 1000),
                             rng.uniform(0, 1, 1000)])
    out = convert_array(feats)
    for i in range(1000):
        assert np.max(np.abs(out[i, :18] - _compose_oracle(feats[i, :20]))) < 1e-6
        one = convert_frame(FeatureFrame.from_vector(feats[i]))
        assert np.array_equal(one.cepstra, out[i, :18])
    assert np.allclose(out[:, 18], feats[:, 20] * 2.0 / 3.0, rtol=0, atol=1e-12)
    assert np.array_equal(out[:, 19], feats[:, 21])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3))
def test_convert_cepstra_is_linear(seed, k):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 20))
    assert np.allclose(convert_cepstra(a + k * b), convert_cepstra(a) + k * convert_cepstra(b), atol=1e-9)


def test_convert_rejects_16k_input():
    with pytest.raises(BadLength):
        convert_frame(FeatureFrame(np.zeros(18), 100.0, 0.5))
    with pytest.raises(BadLength):
        convert_array(np.zeros((3, 20)))


def test_frame_validation():
    with pytest.raises(BadLength):
        FeatureFrame(np.zeros(19), 100.0, 0.5)
    with pytest.raises(ValueError):
        FeatureFrame(np.zeros(20), 0.0, 0.5)
    with pytest.raises(ValueError):
        FeatureFrame(np.zeros(20), 100.0, 1.5)


def test_mcd_examples(rng):
    a = rng.normal(size=(7, 20))
    assert mcd(a, a) == 0.0
    b = np.zeros((1, 20))
    c = b.copy()
    c[0, 3] = 1.0
    assert mcd(b, c) == pytest.approx(10.0 / math.log(10.0) * math.sqrt(2.0), abs=1e-6)
    d = rng.normal(size=(7, 20))
    assert mcd(a, d) == mcd(d, a)
    with pytest.raises(ShapeMismatch):
        mcd(a, d[:3])


def test_feature_files(tmp_path, rng):
    feats = rng.normal(size=(5, 22)).astype(np.float32)
    p = tmp_path / "f.bin"
    write_features(p, feats)
    assert np.array_equal(read_features(p, 24000), feats.astype(np.float64))
    with pytest.raises(RateMismatch):
        read_features(p, 16000)  # 110 floats is not a whole number of 20-value frames
    empty = tmp_path / "e.bin"
    empty.write_bytes(b"")
    assert read_features(empty, 24000).shape == (0, 22)
