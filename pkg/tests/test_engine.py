import numpy as np
import pytest

from bunchvoc.config import PRESETS, HeadKind
from bunchvoc.dsp import features_to_lpc
from bunchvoc.engine import (
    condition_frames, frame_condition, init_model, mac_count, synthesize, zero_model,
)
from bunchvoc.errors import DimensionMismatch, RateMismatch
from bunchvoc.features import FeatureFrame

from conftest import random_features, random_tiny_s1_case, tiny_config
from oracles import reference_frame_net, reference_synthesize_s1


def test_zero_model_outputs_silence(rng):
    for S in (1, 2, 4):
        m = zero_model(tiny_config(S=S))
        pcm = synthesize(m, random_features(rng, 3), T=0.0, seed=0)
        assert pcm.dtype == np.int16
        assert np.all(pcm == 0)


def test_output_lengths(rng):
    m = init_model(tiny_config(S=2), seed=1)
    assert synthesize(m, np.zeros((0, 22))).shape == (0,)
    assert synthesize(m, []).shape == (0,)
    assert synthesize(m, random_features(rng, 10)).shape == (2400,)
    m16 = init_model(tiny_config(sample_rate=16000), seed=1)
    assert synthesize(m16, random_features(rng, 4, 16000)).shape == (640,)


def test_synthesis_is_deterministic(rng):
    m = init_model(tiny_config(S=4, n_e=2), seed=3)
    f = random_features(rng, 4)
    a = synthesize(m, f, T=0.8, seed=11)
    assert np.array_equal(a, synthesize(m, f, T=0.8, seed=11))
    assert not np.array_equal(a, synthesize(m, f, T=0.8, seed=12))


def test_frame_objects_and_arrays_agree(rng):
    m = init_model(tiny_config(), seed=0)
    f = random_features(rng, 3)
    frames = [FeatureFrame.from_vector(v) for v in f]
    assert np.array_equal(synthesize(m, f, T=0.5, seed=2), synthesize(m, frames, T=0.5, seed=2))


def test_rate_mismatch(rng):
    m = init_model(tiny_config(), seed=0)
    with pytest.raises(RateMismatch):
        synthesize(m, random_features(rng, 2, 16000))


@pytest.mark.parametrize("seed", range(10))
def test_s1_engine_matches_scalar_reference(seed):
    model, feats, T = random_tiny_s1_case(seed)
    lpcs = [features_to_lpc(FeatureFrame.from_vector(f)) for f in feats]
    ref = reference_synthesize_s1(model, feats, lpcs, T, seed)
    out = synthesize(model, feats, T=T, seed=seed)
    assert np.array_equal(out, ref)
    assert np.any(out != 0)


def test_softmax_head_synthesizes(rng):
    m = init_model(tiny_config(S=2, head=HeadKind.SOFTMAX), seed=0)
    pcm = synthesize(m, random_features(rng, 2), T=1.0, seed=0)
    assert pcm.shape == (480,)
    with pytest.raises(ValueError):
        synthesize(m, random_features(rng, 1), T=0.0)


# -- frame-rate network ---------------------------------------------------------

def test_condition_matches_reference(rng):
    m = init_model(tiny_config(), seed=4)
    f = random_features(rng, 6)
    assert np.array_equal(condition_frames(m, f), reference_frame_net(m.tensors, m.config, f))


def test_frame_condition_examples(rng):
    z = zero_model(tiny_config())
    f = random_features(rng, 5)
    frames = [FeatureFrame.from_vector(v) for v in f]
    assert np.all(frame_condition(z, frames) == 0)
    m = init_model(tiny_config(), seed=2)
    same = [frames[0]] * 5
    assert np.array_equal(frame_condition(m, same), frame_condition(m, list(same)))
    with pytest.raises(DimensionMismatch):
        frame_condition(m, frames[:4])


def test_frame_condition_window_matches_stream(rng):
    """A sliding window over a stream equals the batched computation at every frame."""
    m = init_model(tiny_config(), seed=5)
    f = random_features(rng, 7)
    frames = [FeatureFrame.from_vector(v) for v in f]
    padded = [None, None] + frames + [None, None]
    stream = condition_frames(m, f)
    for t in range(7):
        assert np.array_equal(frame_condition(m, padded[t : t + 5]), stream[t])
    # changing a frame outside the window leaves the output alone
    g = f.copy()
    g[6] += 1.0
    assert np.array_equal(condition_frames(m, g)[:4], stream[:4])
    assert not np.array_equal(condition_frames(m, g)[4:], stream[4:])


# -- complexity ---------------------------------------------------------------

def test_mac_count_examples():
    base = tiny_config(n_a=64, S=1, frame_size=240)
    assert mac_count(base.replace(S=2)).gru_a == mac_count(base).gru_a / 2
    assert mac_count(base.replace(S=4)).gru_a == mac_count(base).gru_a / 4
    cfg = PRESETS["b-lpcnet2-l"].replace(head=HeadKind.SINGLE_LOGISTIC)
    s, r, l = (mac_count(cfg.replace(S=S, n_a=n)).per_sample for S, n in ((5, 176), (2, 224), (1, 384)))
    assert s < r < l
    counts = [mac_count(cfg.replace(n_a=n)).per_sample for n in range(8, 513, 8)]
    assert np.all(np.diff(counts) > 0)


def test_mac_count_preset_ordering():
    rate = {k: mac_count(c).per_second for k, c in PRESETS.items()}
    assert rate["b-lpcnet2-s16"] < rate["b-lpcnet2-s"] < rate["b-lpcnet2-r"] < rate["b-lpcnet2-l"]
