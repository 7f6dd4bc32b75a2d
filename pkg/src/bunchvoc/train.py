"""Desk-scale teacher-forced training of the sample-rate network.

The frame-rate network is left at its initial weights; everything downstream
of the conditioning vector (feedback embedding factors, both GRUs, the GRU_A
conditioning matrix and the output heads) is trained with analytic gradients
and truncated back-propagation through time.

Teacher forcing fills every feedback slot from the target waveform, so the
3S embedding codes of every bunch depend only on the data and are computed
once in :func:`prepare_teacher_data`.
"""
from __future__ import annotations

import csv
import dataclasses
import math

import numpy as np
import scipy.optimize
import scipy.signal

from . import kernels
from .config import BAND_HZ, HeadKind, ModelConfig
from .dsp import features_to_lpc, mulaw_encode_array
from .engine import Model, condition_frames, init_model, tensor_shapes
from .errors import AlignmentError, DegenerateAutocorrelation, MissingForwardTape, ShapeMismatch
from .features import FeatureFrame, dct_bands, idct_bands
from .heads import logistic_nll_terms
from .nn import ALPHA_U, ALPHA_V, ALPHA_W
from .store import build_code_remap


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    window: int = 64  # BPTT truncation length, samples
    batch: int = 16
    clip_norm: float = 1.0
    steps: int = 500
    seed: int = 0
    burn_in: int = 120  # samples run forward (no gradient) before each window
    feedback_noise: float = 0.0  # std of Gaussian noise added to the fed-back signal

    def __post_init__(self):
        if min(self.lr, self.beta1, self.beta2, self.eps, self.clip_norm) < 0:
            raise ValueError("optimizer settings must be non-negative")
        if self.window < 1 or self.batch < 1 or self.steps < 0 or self.burn_in < 0:
            raise ValueError("window and batch must be positive, steps and burn_in non-negative")


def toy_config(S: int = 1, n_a: int = 32, head: HeadKind = HeadKind.SINGLE_LOGISTIC,
               sample_rate: int = 24000) -> ModelConfig:
    """Small model for desk-scale overfitting runs.

    ``default_T`` is 0: a model trained for a few hundred steps keeps the
    phase of a tone only under deterministic decoding, sampled excitation
    lets it drift.
    """
    return ModelConfig(S=S, n_a=n_a, n_b=16, cond_size=16, pitch_embed_dim=8,
                       head=head, sample_rate=sample_rate, default_T=0.0)


def trainable_names(config: ModelConfig) -> list[str]:
    return [n for n in tensor_shapes(config, separated=True) if not n.startswith("frame.")]


# ---------------------------------------------------------------------------
# teacher-forcing data
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class TeacherData:
    config: ModelConfig
    codes: np.ndarray  # [n_bunches, 3S] embedding codes
    targets: np.ndarray  # [n_samples] excitation targets, clamped to [-1, 1]
    cond: np.ndarray  # [n_frames, cond_size]
    bunch_frame: np.ndarray  # [n_bunches] frame index of each bunch

    @property
    def n_bunches(self) -> int:
        return self.codes.shape[0]


def prepare_teacher_data(model: Model, features, pcm, feedback_noise: float = 0.0,
                         seed: int = 0) -> TeacherData:
    """Feedback codes and excitation targets for teacher forcing.

    With ``feedback_noise > 0`` the history the network sees (and the linear
    prediction built from it) is perturbed by Gaussian noise while the
    excitation target still leads to the clean next sample, so the network
    learns to pull a drifting waveform back instead of only ever seeing
    perfect feedback.
    """
    cfg = model.config
    S, order = cfg.S, cfg.lpc_order
    conds = condition_frames(model, features)
    n_frames = conds.shape[0]
    pcm = np.asarray(pcm)
    if pcm.ndim != 1 or pcm.shape[0] != n_frames * cfg.frame_size:
        raise AlignmentError(
            f"{n_frames} frames need {n_frames * cfg.frame_size} samples, got {pcm.shape}")
    feats = np.atleast_2d(np.asarray(features if isinstance(features, np.ndarray)
                                     else [f.to_vector() for f in features], dtype=np.float64))
    lpcs = [features_to_lpc(FeatureFrame.from_vector(f), order=order) for f in feats]

    n = pcm.shape[0]
    pad = max(order, S)
    x = np.zeros(n + pad, np.float32)
    x[pad:] = pcm.astype(np.float32) / np.float32(32767.0)
    clean = x.copy()
    if feedback_noise > 0:
        rng = np.random.Generator(np.random.Philox(seed))
        x[pad:] = np.clip(x[pad:] + rng.normal(0.0, feedback_noise, n), -1.0, 1.0)
    pred = np.zeros(n, np.float32)
    for t in range(n):
        pred[t] = kernels.lpc_dot(lpcs[t // cfg.frame_size], x[t : t + pad][-order:])
    exc = np.zeros(n + pad, np.float32)
    exc[pad:] = clean[pad:] - pred

    n_bunches = n // S
    values = np.empty((n_bunches, 3 * S), np.float32)
    ext = np.empty(S, np.float32)
    for b in range(n_bunches):
        t0 = b * S
        hist = x[t0 : t0 + pad]
        kernels.lpc_extrapolate_into(lpcs[t0 // cfg.frame_size], hist, ext)
        values[b, :S] = ext
        values[b, S : 2 * S] = x[t0 + pad - S : t0 + pad]
        values[b, 2 * S :] = exc[t0 + pad - S : t0 + pad]
    codes = mulaw_encode_array(values)
    targets = np.clip(exc[pad:], -1.0, 1.0).astype(np.float64)
    bunch_frame = (np.arange(n_bunches) * S) // cfg.frame_size
    return TeacherData(cfg, codes, targets, conds, bunch_frame)


def code_histograms(data: TeacherData) -> np.ndarray:
    """[3S, 256] counts of the codes each feedback slot saw."""
    hist = np.zeros((data.codes.shape[1], 256), np.int64)
    for k in range(data.codes.shape[1]):
        hist[k] = np.bincount(data.codes[:, k], minlength=256)
    return hist


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def _gru_forward(gx, h, R):
    n = h.shape[1]
    gh = h @ R.T
    z = _sigmoid(gx[:, :n] + gh[:, :n])
    r = _sigmoid(gx[:, n : 2 * n] + gh[:, n : 2 * n])
    c = np.tanh(gx[:, 2 * n :] + r * gh[:, 2 * n :])
    return z * h + (1.0 - z) * c, (h, z, r, c, gh[:, 2 * n :])


def _gru_backward(dh_new, cache, R, dR):
    h, z, r, c, gh_c = cache
    dz = dh_new * (h - c)
    dc = dh_new * (1.0 - z)
    da_c = dc * (1.0 - c * c)
    da_z = dz * z * (1.0 - z)
    da_r = da_c * gh_c * r * (1.0 - r)
    dgx = np.concatenate([da_z, da_r, da_c], axis=1)
    dgh = np.concatenate([da_z, da_r, da_c * r], axis=1)
    dR += dgh.T @ h
    return dgx, dh_new * z + dgh @ R


@dataclasses.dataclass
class Tape:
    """Everything :func:`backward` needs from one teacher-forced forward pass."""

    params: dict
    data: TeacherData
    starts: np.ndarray  # first bunch of each batch window
    n_steps: int
    nll: float
    steps: list = dataclasses.field(default_factory=list)
    h_a0: np.ndarray | None = None
    h_b0: np.ndarray | None = None


def _head_layers(cfg: ModelConfig, j: int) -> int:
    return 1 if cfg.head is HeadKind.SOFTMAX else len(cfg.head_hidden) + 1


def forward(params: dict, data: TeacherData, starts, n_steps: int, burn_in: int = 0,
            dtype=np.float32) -> Tape:
    """Teacher-forced pass over ``n_steps`` bunches from each of ``starts``.

    ``burn_in`` extra bunches before each window are run without recording,
    so the window begins from a warmed-up recurrent state; gradients stop at
    the window boundary.
    """
    cfg = data.config
    S, n_a, n_b = cfg.S, cfg.n_a, cfg.n_b
    starts = np.asarray(starts, dtype=np.int64)
    if starts.size and (starts.min() < 0 or starts.max() + n_steps > data.n_bunches):
        raise AlignmentError("window runs outside the training signal")
    P = {k: np.asarray(v, dtype=dtype) for k, v in params.items()}
    B = starts.shape[0]
    h_a = np.zeros((B, n_a), dtype)
    h_b = np.zeros((B, n_b), dtype)
    cond = data.cond.astype(dtype)
    n_slots = 3 * S

    def cell_inputs(b):
        f = cond[data.bunch_frame[b]]
        codes = data.codes[b]
        gx = P["gru_a.bias"] + f @ P["gru_a.cond_weight"].T
        emb = []
        for k in range(n_slots):
            e = P[f"embed.{k}.e_x"][codes[:, k]]
            emb.append(e)
            gx = gx + e @ P[f"embed.{k}.u_x"]
        return f, codes, emb, gx

    for i in range(burn_in):
        b = np.maximum(starts - burn_in + i, 0)
        f, _, _, gx = cell_inputs(b)
        h_a, _ = _gru_forward(gx, h_a, P["gru_a.recurrent"])
        gb = P["gru_b.bias"] + np.concatenate([h_a, f], axis=1) @ P["gru_b.input"].T
        h_b, _ = _gru_forward(gb, h_b, P["gru_b.recurrent"])

    tape = Tape(P, data, starts, n_steps, 0.0, h_a0=h_a, h_b0=h_b)
    total = 0.0
    for i in range(n_steps):
        b = starts + i
        f, codes, emb, gx = cell_inputs(b)
        h_a, cache_a = _gru_forward(gx, h_a, P["gru_a.recurrent"])
        xb = np.concatenate([h_a, f], axis=1)
        gb = P["gru_b.bias"] + xb @ P["gru_b.input"].T
        h_b, cache_b = _gru_forward(gb, h_b, P["gru_b.recurrent"])
        heads = []
        for j in range(S):
            y = data.targets[b * S + j]
            acts = [h_b]
            a = h_b
            n_layers = _head_layers(cfg, j)
            for li in range(n_layers):
                a = a @ P[f"head.{j}.fc{li}.weight"].T + P[f"head.{j}.fc{li}.bias"]
                if li < n_layers - 1:
                    a = np.tanh(a)
                acts.append(a)
            if cfg.head is HeadKind.SOFTMAX:
                logits = a.astype(np.float64)
                logits = logits - logits.max(axis=1, keepdims=True)
                prob = np.exp(logits)
                prob /= prob.sum(axis=1, keepdims=True)
                target = mulaw_encode_array(y)
                nll = -np.log(np.maximum(prob[np.arange(B), target], 1e-300))
                d_out = prob
                d_out[np.arange(B), target] -= 1.0
            else:
                h1 = a[:, 0].astype(np.float64)
                h2 = a[:, 1].astype(np.float64)
                mu = np.tanh(h1 / ALPHA_U)
                th = np.tanh(h2)
                s = np.exp(th * ALPHA_V - ALPHA_W)
                nll, d_mu, d_s = logistic_nll_terms(mu, s, y)
                d_out = np.stack([d_mu * (1.0 - mu * mu) / ALPHA_U,
                                  d_s * s * ALPHA_V * (1.0 - th * th)], axis=1)
            total += float(nll.sum())
            heads.append((acts, d_out.astype(dtype)))
        tape.steps.append((b, f, codes, emb, cache_a, xb, cache_b, heads))
    tape.nll = total
    return tape


def backward(tape: Tape | None, clip_norm: float | None = None) -> dict[str, np.ndarray]:
    """Gradients of ``tape.nll`` (a sum over window samples) for every trainable tensor."""
    if tape is None or not isinstance(tape, Tape) or len(tape.steps) != tape.n_steps:
        raise MissingForwardTape("backward() needs the tape of a completed forward pass")
    P = tape.params
    cfg = tape.data.config
    S, n_a = cfg.S, cfg.n_a
    dtype = P["gru_a.bias"].dtype
    grads = {k: np.zeros_like(v) for k, v in P.items()}
    B = tape.starts.shape[0]
    dh_a = np.zeros((B, n_a), dtype)
    dh_b = np.zeros((B, cfg.n_b), dtype)
    for b, f, codes, emb, cache_a, xb, cache_b, heads in reversed(tape.steps):
        dh_b_total = dh_b.copy()
        for j, (acts, d_out) in enumerate(heads):
            d = d_out
            n_layers = len(acts) - 1
            for li in reversed(range(n_layers)):
                if li < n_layers - 1:
                    d = d * (1.0 - acts[li + 1] * acts[li + 1])
                W = P[f"head.{j}.fc{li}.weight"]
                grads[f"head.{j}.fc{li}.weight"] += d.T @ acts[li]
                grads[f"head.{j}.fc{li}.bias"] += d.sum(axis=0)
                d = d @ W
            dh_b_total += d
        dgb, dh_b = _gru_backward(dh_b_total, cache_b, P["gru_b.recurrent"], grads["gru_b.recurrent"])
        grads["gru_b.bias"] += dgb.sum(axis=0)
        grads["gru_b.input"] += dgb.T @ xb
        dxb = dgb @ P["gru_b.input"]
        dh_a_total = dh_a + dxb[:, :n_a]
        dgx, dh_a = _gru_backward(dh_a_total, cache_a, P["gru_a.recurrent"], grads["gru_a.recurrent"])
        grads["gru_a.bias"] += dgx.sum(axis=0)
        grads["gru_a.cond_weight"] += dgx.T @ f
        for k in range(3 * S):
            U = P[f"embed.{k}.u_x"]
            grads[f"embed.{k}.u_x"] += emb[k].T @ dgx
            np.add.at(grads[f"embed.{k}.e_x"], codes[:, k], dgx @ U.T)
    if clip_norm is not None and clip_norm > 0:
        clip_gradients(grads, clip_norm)
    return grads


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place to global L2 norm <= ``max_norm``; returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def _window_starts(window, S: int, n_bunches: int):
    start, length = window
    if start % S or length % S or start < 0 or length < 0 or (start + length) // S > n_bunches:
        raise AlignmentError(f"window {window} must be S-aligned and inside the signal")
    return np.array([start // S]), length // S


def teacher_forced_nll(model: Model, features, target_pcm, window, dtype=np.float32) -> float:
    """Summed NLL over ``window = (start_sample, n_samples)`` with ground-truth feedback."""
    data = prepare_teacher_data(model, features, target_pcm)
    starts, n_steps = _window_starts(window, model.config.S, data.n_bunches)
    params = {n: model.tensors[n] for n in trainable_names(model.config)}
    return forward(params, data, starts, n_steps, dtype=dtype).nll


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    if params.keys() != grads.keys():
        raise ShapeMismatch("gradient names do not match parameters")
    t = state.t + 1
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{k}: gradient {g.shape} vs parameter {p.shape}")
        m = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g
        step = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        new_p[k] = (p - step).astype(p.dtype)
        new_m[k] = m.astype(p.dtype)
        new_v[k] = v.astype(p.dtype)
    return new_p, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# toy data and the training loop
# ---------------------------------------------------------------------------

def analyze_frame(frame: np.ndarray, sample_rate: int, floor: float = 1e-4) -> np.ndarray:
    """Cepstra of one analysis window via triangular band energies (toy front end)."""
    n = frame.shape[0]
    spec = np.abs(np.fft.rfft(frame * np.hanning(n))) ** 2 / n
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    centres = np.asarray(BAND_HZ[sample_rate], dtype=np.float64)
    energy = np.zeros(centres.shape[0])
    for i in range(centres.shape[0] - 1):
        sel = (freqs >= centres[i]) & (freqs < centres[i + 1])
        w = (freqs[sel] - centres[i]) / (centres[i + 1] - centres[i])
        energy[i] += np.sum((1.0 - w) * spec[sel])
        energy[i + 1] += np.sum(w * spec[sel])
    return dct_bands(np.log10(energy + floor * max(energy.max(), 1e-12)))


def lpc_residual_power(x, a) -> float:
    """Mean squared error of predicting ``x`` with coefficients ``a`` (steady state only)."""
    a = np.asarray(a, dtype=np.float64)
    e = scipy.signal.lfilter(np.concatenate([[1.0], -a]), [1.0], np.asarray(x, dtype=np.float64))
    return float(np.mean(e[a.shape[0]:] ** 2))


def fit_sine_features(x, sample_rate: int, pitch_period: float, pitch_corr: float = 0.99,
                      n_free: int = 4, floor_log: float = -6.0) -> np.ndarray:
    """Constant feature vector whose LPC predicts ``x`` best.

    Band log-energies start from the analysed spectrum; the lowest ``n_free``
    are then tuned (Nelder-Mead on the log residual power) while the rest sit
    at ``floor_log``.  The analysed envelope alone is too coarse for a pure
    tone: the resulting filter resonates well away from the tone's frequency.
    """
    n_bands = len(BAND_HZ[sample_rate])
    start = idct_bands(analyze_frame(x[: 2 * (sample_rate // 100)], sample_rate))[:n_free]

    def ceps(v):
        log_e = np.full(n_bands, floor_log)
        log_e[:n_free] = v
        return dct_bands(log_e)

    def objective(v):
        try:
            a = features_to_lpc(FeatureFrame(ceps(v), pitch_period, pitch_corr))
        except DegenerateAutocorrelation:
            return np.inf
        return math.log10(lpc_residual_power(x, a) + 1e-30)

    best = scipy.optimize.minimize(objective, start, method="Nelder-Mead",
                                   options={"maxiter": 600, "xatol": 1e-4, "fatol": 1e-6})
    return np.concatenate([ceps(best.x), [pitch_period, pitch_corr]])


def sine_dataset(freq: float = 200.0, seconds: float = 0.5, sample_rate: int = 24000,
                 amplitude: float = 0.5, frame_size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """A stationary sine and constant features describing it: ``(features, pcm)``."""
    frame_size = frame_size or sample_rate // 100
    n_frames = max(1, int(round(seconds * sample_rate / frame_size)))
    t = np.arange(n_frames * frame_size) / sample_rate
    x = amplitude * np.sin(2.0 * np.pi * freq * t)
    pcm = np.clip(np.floor(x * 32767.0 + 0.5), -32768, 32767).astype(np.int16)
    feats = fit_sine_features(x[: 10 * frame_size], sample_rate, sample_rate / freq)
    return np.tile(feats, (n_frames, 1)), pcm


def smoothed_final(losses, frac: float = 0.1) -> float:
    """Mean of the last ``frac`` of a loss curve (at least one point)."""
    losses = np.asarray(losses, dtype=np.float64)
    k = max(1, int(round(frac * losses.shape[0])))
    return float(losses[-k:].mean())


def train_toy(config: ModelConfig, tcfg: TrainConfig, dataset, remap: bool = True,
              model: Model | None = None, progress=None) -> tuple[Model, list[float]]:
    """Teacher-forced Adam training on ``dataset = (features, pcm)``.

    The batch of windows is drawn once from the seed and reused every step,
    so the loss curve is a deterministic function of the seed and settings.
    Returns the trained model and the per-step mean per-sample NLL.
    """
    features, pcm = dataset
    if model is None:
        model = init_model(config, tcfg.seed)
    if not model.separated:
        raise ValueError("training needs the embedding factors (a separated model)")
    cfg = model.config
    if tcfg.window < cfg.S:
        raise ValueError("truncation window must cover at least one bunch")
    data = prepare_teacher_data(model, features, pcm, tcfg.feedback_noise, tcfg.seed)
    n_steps = tcfg.window // cfg.S
    burn = tcfg.burn_in // cfg.S
    if data.n_bunches < n_steps:
        raise AlignmentError("training signal is shorter than one window")
    rng = np.random.Generator(np.random.Philox(tcfg.seed))
    starts = rng.integers(burn if data.n_bunches - n_steps > burn else 0,
                          data.n_bunches - n_steps + 1, size=tcfg.batch)

    names = trainable_names(cfg)
    params = {n: model.tensors[n].astype(np.float32) for n in names}
    adam = AdamState.zeros(params)
    scale = 1.0 / (tcfg.batch * n_steps * cfg.S)
    losses = []
    for step in range(tcfg.steps):
        tape = forward(params, data, starts, n_steps, burn_in=burn)
        losses.append(tape.nll * scale)
        grads = backward(tape)
        for g in grads.values():
            g *= scale
        clip_gradients(grads, tcfg.clip_norm)
        params, adam = adam_step(params, grads, adam, tcfg)
        if progress is not None:
            progress(step, losses[-1])

    tensors = dict(model.tensors)
    tensors.update(params)
    if remap and tcfg.steps > 0:
        for k, counts in enumerate(code_histograms(data)):
            tensors[f"embed.{k}.remap"] = build_code_remap(counts).map.astype(np.float32)
    return Model(cfg, tensors), losses


def write_loss_csv(path, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "nll"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


def normalized_xcorr(a, b, max_lag: int) -> tuple[float, int]:
    """Best normalised cross-correlation of ``a`` against ``b`` over lags in [-max_lag, max_lag]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = min(a.shape[0], b.shape[0])
    a, b = a[:n], b[:n]
    best, best_lag = -np.inf, 0
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            x, y = a[lag:], b[: n - lag]
        else:
            x, y = a[: n + lag], b[-lag:]
        den = math.sqrt(float(x @ x) * float(y @ y))
        if den == 0:
            continue
        v = float(x @ y) / den
        if v > best:
            best, best_lag = v, lag
    return (best if np.isfinite(best) else 0.0), best_lag
