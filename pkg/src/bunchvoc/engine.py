"""Synthesis engine: frame-rate conditioning and the bunched sample-rate loop.

Per bunch of ``S`` samples the engine

1. extrapolates ``S`` linear predictions from the pre-bunch history,
2. mu-law codes those predictions plus the previous bunch's ``S`` samples and
   ``S`` excitations and sums the matching rows of the ``3S`` merged embedding
   tables onto the frame's GRU_A input (pure vector additions),
3. runs GRU_A and GRU_B once,
4. evaluates ``S`` output heads on the shared GRU_B state, drawing one
   excitation per position, and adds each to the sequential prediction.

Model tensors are float32 and every product goes through the fixed-order
kernels in :mod:`bunchvoc.kernels`, so a seed fully determines the PCM.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import kernels
from .config import HeadKind, ModelConfig
from .dsp import features_to_lpc, mulaw_decode, mulaw_decode_array, mulaw_encode
from .errors import DimensionMismatch, RateMismatch
from .features import FeatureFrame
from .heads import (LogisticParams, SlHeadParams, SoftmaxHeadParams, sample_categorical,
                    sample_logistic, sl_forward, softmax_forward)
from .kernels import KernelVariant
from .nn import Activation, DenseLayer, alpha1, alpha2, dense_forward, gru_step_preactivated
from .store import restore_merged

F32 = np.float32
EPS_OFFSET = 2.0 ** -54  # maps a [0, 1) double with 53-bit resolution into (0, 1)


# ---------------------------------------------------------------------------
# tensor naming
# ---------------------------------------------------------------------------

def frame_input_size(config: ModelConfig) -> int:
    return config.feature_width + config.pitch_embed_dim


def tensor_shapes(config: ModelConfig, separated: bool = True) -> dict[str, tuple]:
    """Every tensor a model of ``config`` carries, with its shape."""
    c = frame_input_size(config)
    cond, n_a, n_b = config.cond_size, config.n_a, config.n_b
    shapes = {
        "frame.pitch_embed": (config.pitch_bins, config.pitch_embed_dim),
        "frame.conv1.weight": (c, 3, c),
        "frame.conv1.bias": (c,),
        "frame.conv2.weight": (c, 3, c),
        "frame.conv2.bias": (c,),
        "frame.dense1.weight": (cond, c),
        "frame.dense1.bias": (cond,),
        "frame.dense2.weight": (cond, cond),
        "frame.dense2.bias": (cond,),
        "gru_a.cond_weight": (3 * n_a, cond),
        "gru_a.bias": (3 * n_a,),
        "gru_a.recurrent": (3 * n_a, n_a),
        "gru_b.input": (3 * n_b, n_a + cond),
        "gru_b.recurrent": (3 * n_b, n_b),
        "gru_b.bias": (3 * n_b,),
    }
    for k in range(config.n_slots):
        if separated:
            shapes[f"embed.{k}.e_x"] = (256, config.n_e)
            shapes[f"embed.{k}.u_x"] = (config.n_e, 3 * n_a)
        else:
            shapes[f"embed.{k}.table"] = (256, 3 * n_a)
    for j in range(config.S):
        if config.head is HeadKind.SOFTMAX:
            shapes[f"head.{j}.fc0.weight"] = (256, n_b)
            shapes[f"head.{j}.fc0.bias"] = (256,)
        else:
            dims = (n_b,) + config.head_hidden + (2,)
            for i in range(len(dims) - 1):
                shapes[f"head.{j}.fc{i}.weight"] = (dims[i + 1], dims[i])
                shapes[f"head.{j}.fc{i}.bias"] = (dims[i + 1],)
    return shapes


def slot_name(config: ModelConfig, k: int) -> str:
    """Human-readable role of feedback slot ``k``: predictions, then samples, then excitations."""
    kind = ("pred", "sample", "excitation")[k // config.S]
    return f"{kind}[{k % config.S}]"


# ---------------------------------------------------------------------------
# model container
# ---------------------------------------------------------------------------

class Model:
    """Immutable-after-construction weights plus the derived runtime view.

    ``tensors`` holds what gets serialised.  Embeddings are present either as
    factor pairs ``embed.k.e_x`` / ``embed.k.u_x`` (separated) or as merged
    ``embed.k.table`` tensors; in the former case the merged tables are
    restored here, once.  Optional ``embed.k.remap`` tensors hold a 256-entry
    code remap per slot.
    """

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        self.config = config
        self.tensors = {k: np.ascontiguousarray(v, dtype=F32) for k, v in tensors.items()}
        self.separated = "embed.0.e_x" in self.tensors
        expected = tensor_shapes(config, self.separated)
        for name, shape in expected.items():
            if name not in self.tensors:
                raise DimensionMismatch(f"model is missing tensor {name!r}")
            if self.tensors[name].shape != shape:
                raise DimensionMismatch(
                    f"tensor {name!r} has shape {self.tensors[name].shape}, expected {shape}")
        for name, t in self.tensors.items():
            if name not in expected and not (name.startswith("embed.") and name.endswith(".remap")):
                raise DimensionMismatch(f"unexpected tensor {name!r}")
        self._build_runtime()

    # runtime view -----------------------------------------------------------
    def _build_runtime(self):
        cfg, t = self.config, self.tensors
        n_slots, n3 = cfg.n_slots, 3 * cfg.n_a
        tables = np.empty((n_slots, 256, n3), dtype=F32)
        remap = np.tile(np.arange(256, dtype=np.int64), (n_slots, 1))
        for k in range(n_slots):
            if self.separated:
                tables[k] = restore_merged(t[f"embed.{k}.e_x"], t[f"embed.{k}.u_x"])
            else:
                tables[k] = t[f"embed.{k}.table"]
            if f"embed.{k}.remap" in t:
                remap[k] = t[f"embed.{k}.remap"].astype(np.int64)
        self.tables = tables
        self.remap = remap
        self.has_remap = any(f"embed.{k}.remap" in t for k in range(n_slots))

        c = frame_input_size(cfg)
        self.conv = [
            DenseLayer(t[f"frame.conv{i}.weight"].reshape(c, 3 * c), t[f"frame.conv{i}.bias"],
                       Activation.TANH)
            for i in (1, 2)
        ]
        self.frame_dense = [
            DenseLayer(t[f"frame.dense{i}.weight"], t[f"frame.dense{i}.bias"], Activation.TANH)
            for i in (1, 2)
        ]
        self.heads = []
        for j in range(cfg.S):
            if cfg.head is HeadKind.SOFTMAX:
                self.heads.append(SoftmaxHeadParams(
                    DenseLayer(t[f"head.{j}.fc0.weight"], t[f"head.{j}.fc0.bias"])))
            else:
                n_layers = len(cfg.head_hidden) + 1
                layers = [
                    DenseLayer(t[f"head.{j}.fc{i}.weight"], t[f"head.{j}.fc{i}.bias"],
                               Activation.TANH if i < n_layers - 1 else Activation.IDENTITY)
                    for i in range(n_layers)
                ]
                self.heads.append(SlHeadParams(layers))

    def merged_tables(self) -> np.ndarray:
        return self.tables

    def with_tensors(self, **updates) -> "Model":
        tensors = dict(self.tensors)
        tensors.update(updates)
        return Model(self.config, tensors)

    def param_count(self) -> int:
        return sum(int(v.size) for v in self.tensors.values())


def _glorot(rng, shape, fan_in, fan_out, gain=1.0):
    limit = gain * math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(F32)


def init_model(config: ModelConfig, seed: int = 0, separated: bool = True) -> Model:
    """Randomly initialised model (Glorot-uniform weights, zero biases).

    The first column of every embedding factor starts as the decoded mu-law
    value of its code, so a fresh network responds smoothly to the fed-back
    signal; any further columns are uniform noise.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    tensors = {}
    decoded = mulaw_decode_array(np.arange(256)).astype(F32)
    for name, shape in tensor_shapes(config, separated).items():
        if name.endswith("bias"):
            tensors[name] = np.zeros(shape, F32)
        elif name.endswith(".e_x"):
            e = rng.uniform(-1.0, 1.0, size=shape).astype(F32)
            e[:, 0] = decoded
            tensors[name] = e
        elif name == "frame.pitch_embed":
            tensors[name] = rng.uniform(-1.0, 1.0, size=shape).astype(F32)
        elif name.endswith(".table"):
            tensors[name] = rng.uniform(-0.1, 0.1, size=shape).astype(F32)
        elif len(shape) == 3:  # conv [out, taps, in]
            tensors[name] = _glorot(rng, shape, shape[1] * shape[2], shape[0])
        else:
            tensors[name] = _glorot(rng, shape, shape[1], shape[0])
    return Model(config, tensors)


def zero_model(config: ModelConfig, separated: bool = True) -> Model:
    return Model(config, {n: np.zeros(s, F32) for n, s in tensor_shapes(config, separated).items()})


# ---------------------------------------------------------------------------
# frame-rate network
# ---------------------------------------------------------------------------

def pitch_index(config: ModelConfig, period: float) -> int:
    """Pitch-embedding row: the period expressed in 16 kHz samples, clamped to the table."""
    return int(min(config.pitch_bins - 1, max(0, math.floor(period * 16000.0 / config.sample_rate + 0.5))))


def _frame_vectors(model: Model, feats: np.ndarray) -> np.ndarray:
    cfg = model.config
    n = feats.shape[0]
    out = np.zeros((n, frame_input_size(cfg)), dtype=F32)
    if n == 0:
        return out
    out[:, : cfg.n_ceps] = feats[:, : cfg.n_ceps]
    out[:, cfg.n_ceps] = 0.01 * (feats[:, cfg.n_ceps] - 200.0)
    out[:, cfg.n_ceps + 1] = feats[:, cfg.n_ceps + 1]
    emb = model.tensors["frame.pitch_embed"]
    for i in range(n):
        out[i, cfg.feature_width:] = emb[pitch_index(cfg, feats[i, cfg.n_ceps])]
    return out


def _as_feature_array(model: Model, frames) -> np.ndarray:
    width = model.config.feature_width
    if isinstance(frames, np.ndarray):
        feats = np.asarray(frames, dtype=np.float64)
        if feats.size == 0:
            return np.zeros((0, width))
        feats = np.atleast_2d(feats)
    else:
        frames = list(frames)
        if not frames:
            return np.zeros((0, width))
        feats = np.stack([f.to_vector() if isinstance(f, FeatureFrame) else np.asarray(f, float)
                          for f in frames])
    if feats.shape[1] != width:
        raise RateMismatch(
            f"{model.config.sample_rate} Hz model expects {width}-value frames, got {feats.shape[1]}")
    return feats


def condition_frames(model: Model, frames) -> np.ndarray:
    """Conditioning vectors for a whole feature stream, zero-padding two frames each side."""
    feats = _as_feature_array(model, frames)
    n = feats.shape[0]
    cfg = model.config
    if n == 0:
        return np.zeros((0, cfg.cond_size), dtype=F32)
    c = frame_input_size(cfg)
    x = np.zeros((n + 4, c), dtype=F32)
    x[2:-2] = _frame_vectors(model, feats)
    conv1, conv2 = model.conv
    y1 = np.zeros((n + 2, c), dtype=F32)  # conv1 at frames -1 .. n
    for m in range(n + 2):
        y1[m] = dense_forward(conv1, x[m : m + 3].ravel())
    out = np.empty((n, cfg.cond_size), dtype=F32)
    for t in range(n):
        y2 = dense_forward(conv2, y1[t : t + 3].ravel())
        h = y2 + x[t + 2]
        for layer in model.frame_dense:
            h = dense_forward(layer, h)
        out[t] = h
    return out


def frame_condition(model: Model, window) -> np.ndarray:
    """Conditioning vector for the centre of a 5-frame window (frames t-2 .. t+2).

    ``None`` entries stand for the zero padding used at stream edges.
    """
    window = list(window)
    if len(window) != 5:
        raise DimensionMismatch("frame_condition needs a window of 5 frames (t-2 .. t+2)")
    cfg = model.config
    c = frame_input_size(cfg)
    x = np.zeros((5, c), dtype=F32)
    for i, f in enumerate(window):
        if f is not None:
            x[i] = _frame_vectors(model, _as_feature_array(model, [f]))[0]
    conv1, conv2 = model.conv
    y1 = np.stack([dense_forward(conv1, x[m : m + 3].ravel()) for m in range(3)])
    h = dense_forward(conv2, y1.ravel()) + x[2]
    for layer in model.frame_dense:
        h = dense_forward(layer, h)
    return h


# ---------------------------------------------------------------------------
# sample-rate network
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class FrameInput:
    """Per-frame quantities held constant across the frame's bunches."""

    cond: np.ndarray  # conditioning vector [cond_size]
    lpc: np.ndarray  # predictor coefficients [lpc_order]
    gru_a_input: np.ndarray  # gru_a.bias + gru_a.cond_weight @ cond


def frame_input(model: Model, cond, lpc) -> FrameInput:
    cond = np.ascontiguousarray(cond, dtype=F32)
    lpc = np.ascontiguousarray(lpc, dtype=F32)
    if cond.shape != (model.config.cond_size,) or lpc.shape != (model.config.lpc_order,):
        raise DimensionMismatch(f"frame input cond{cond.shape} lpc{lpc.shape}")
    acc = model.tensors["gru_a.bias"].copy()
    kernels.matvec_acc_into(model.tensors["gru_a.cond_weight"], cond, acc)
    return FrameInput(cond, lpc, acc)


@dataclasses.dataclass
class SynthState:
    """Recurrent state of one synthesis stream (oldest history entries first)."""

    h_a: np.ndarray
    h_b: np.ndarray
    x_hist: np.ndarray  # last max(lpc_order, S) output samples
    e_hist: np.ndarray  # last S excitations
    p_hist: np.ndarray  # last S predictions used for the outputs
    rng: np.random.Generator

    @classmethod
    def initial(cls, config: ModelConfig, seed: int = 0) -> "SynthState":
        return cls(
            h_a=np.zeros(config.n_a, F32),
            h_b=np.zeros(config.n_b, F32),
            x_hist=np.zeros(max(config.lpc_order, config.S), F32),
            e_hist=np.zeros(config.S, F32),
            p_hist=np.zeros(config.S, F32),
            rng=np.random.Generator(np.random.Philox(seed)),
        )


def feedback_codes(model: Model, state: SynthState, lpc: np.ndarray) -> np.ndarray:
    """The 3S embedding codes for the next bunch, after any stored remap."""
    S = model.config.S
    preds = np.empty(S, F32)
    kernels.lpc_extrapolate_into(lpc, state.x_hist, preds)
    values = np.concatenate([preds, state.x_hist[-S:], state.e_hist])
    codes = np.array([mulaw_encode(v) for v in values], dtype=np.int64)
    if model.has_remap:
        codes = model.remap[np.arange(codes.shape[0]), codes]
    return codes


def bunch_step(model: Model, state: SynthState, frame: FrameInput, T: float) -> np.ndarray:
    """Generate the next ``S`` samples, advancing ``state`` in place."""
    cfg = model.config
    S = cfg.S
    t = model.tensors

    codes = feedback_codes(model, state, frame.lpc)
    gx = frame.gru_a_input.copy()
    kernels.embed_row_sum_into(model.tables, codes, gx)
    h_a = gru_step_preactivated(t["gru_a.recurrent"], gx, state.h_a)

    gb = t["gru_b.bias"].copy()
    kernels.matvec_acc_into(t["gru_b.input"], np.concatenate([h_a, frame.cond]), gb)
    h_b = gru_step_preactivated(t["gru_b.recurrent"], gb, state.h_b)

    raw = state.rng.random(S)
    hist = state.x_hist
    out = np.empty(S, F32)
    exc = np.empty(S, F32)
    preds = np.empty(S, F32)
    for j in range(S):
        p = kernels.lpc_dot(frame.lpc, hist)
        head = model.heads[j]
        if cfg.head is HeadKind.SOFTMAX:
            e = mulaw_decode(sample_categorical(softmax_forward(head, h_b, T), raw[j]))
        else:
            e = sample_logistic(sl_forward(head, h_b), T, raw[j] + EPS_OFFSET)
        e32 = F32(e)
        x = F32(min(1.0, max(-1.0, p + e32)))
        hist = np.concatenate([hist[1:], [x]]).astype(F32)
        out[j], exc[j], preds[j] = x, e32, p

    state.h_a, state.h_b = h_a, h_b
    state.x_hist = hist
    state.e_hist = exc
    state.p_hist = preds
    return out


def to_pcm16(x: np.ndarray) -> np.ndarray:
    v = np.floor(np.asarray(x, dtype=np.float64) * 32767.0 + 0.5)
    return np.clip(v, -32768, 32767).astype(np.int16)


def synthesize(model: Model, features, T: float | None = None, seed: int = 0,
               lag_window: float | None = None) -> np.ndarray:
    """Run the full vocoder over a feature stream; returns int16 PCM."""
    cfg = model.config
    if T is None:
        T = cfg.default_T
    feats = _as_feature_array(model, features)
    n = feats.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int16)
    conds = condition_frames(model, feats)
    state = SynthState.initial(cfg, seed)
    out = np.empty(n * cfg.frame_size, F32)
    steps = cfg.frame_size // cfg.S
    pos = 0
    lpc_kwargs = {} if lag_window is None else {"lag_window": lag_window}
    for i in range(n):
        frame = FeatureFrame.from_vector(feats[i])
        lpc = features_to_lpc(frame, order=cfg.lpc_order, **lpc_kwargs)
        fin = frame_input(model, conds[i], lpc)
        for _ in range(steps):
            out[pos : pos + cfg.S] = bunch_step(model, state, fin, T)
            pos += cfg.S
    return to_pcm16(out)


# ---------------------------------------------------------------------------
# complexity accounting
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class MacCount:
    """Per-sample multiply-accumulate estimate, split by network part."""

    gru_a: float
    gru_b: float
    heads: float
    lpc: float
    frame_net: float
    sample_rate: int

    @property
    def per_sample(self) -> float:
        return self.gru_a + self.gru_b + self.heads + self.lpc + self.frame_net

    @property
    def per_second(self) -> float:
        return self.per_sample * self.sample_rate


def mac_count(config: ModelConfig) -> MacCount:
    S, n_a, n_b, cond = config.S, config.n_a, config.n_b, config.cond_size
    # embedding rows are summed, not multiplied: GRU_A input costs no MACs per step
    gru_a = 3.0 * n_a * n_a / S
    gru_b = 3.0 * n_b * (n_a + cond + n_b) / S
    if config.head is HeadKind.SOFTMAX:
        heads = float(n_b * 256)
    else:
        dims = (n_b,) + config.head_hidden + (2,)
        heads = float(sum(dims[i] * dims[i + 1] for i in range(len(dims) - 1)))
    lpc = 2.0 * config.lpc_order  # output prediction + input extrapolation
    c = frame_input_size(config)
    frame = 2 * 3 * c * c + cond * c + cond * cond + 3 * n_a * cond
    return MacCount(gru_a, gru_b, heads, lpc, frame / config.frame_size, config.sample_rate)
