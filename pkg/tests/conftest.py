import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from bunchvoc.config import ModelConfig  # noqa: E402


def tiny_config(**kw) -> ModelConfig:
    """Smallest shapes the engine accepts, for fast randomized checks."""
    base = dict(S=1, n_a=16, n_b=8, n_e=1, cond_size=16, pitch_embed_dim=8,
                head_hidden=(8,), sample_rate=24000)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_features(rng, n_frames: int, sample_rate: int = 24000) -> np.ndarray:
    n_ceps = 20 if sample_rate == 24000 else 18
    ceps = rng.normal(0.0, 1.0, (n_frames, n_ceps))
    ceps[:, 0] += 4.0
    period = rng.uniform(40.0, 300.0, (n_frames, 1))
    corr = rng.uniform(0.0, 1.0, (n_frames, 1))
    return np.hstack([ceps, period, corr])


def random_tiny_s1_case(seed: int):
    """A random S=1 single-logistic model (some slots remapped) plus 10 frames."""
    from bunchvoc.engine import Model, init_model
    from bunchvoc.store import build_code_remap

    rng = np.random.default_rng(seed)
    model = init_model(tiny_config(), seed=seed)
    tensors = dict(model.tensors)
    for k in range(3):
        if rng.random() < 0.5:
            counts = rng.random(256) < rng.uniform(0.05, 0.6)
            counts[rng.integers(0, 256)] = True
            tensors[f"embed.{k}.remap"] = build_code_remap(counts).map.astype(np.float32)
    # louder output layer so the excitation is not negligible
    tensors["head.0.fc1.weight"] = tensors["head.0.fc1.weight"] * np.float32(rng.uniform(1, 30))
    T = float(rng.choice([0.0, 0.5, 1.0]))
    return Model(model.config, tensors), random_features(rng, 10), T


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
