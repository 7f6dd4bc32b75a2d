"""Model files, embedding factor restoration and footprint accounting.

A feedback embedding ``E_x`` [256, n_e] followed by its slice ``U_x``
[n_e, 3 n_a] of the GRU_A input matrix collapses into one lookup table
``E'_x = E_x U_x`` [256, 3 n_a].  Storing the factors instead of the product
shrinks the file whenever ``256 n_e + 3 n_a n_e < 768 n_a``; the merged table
is rebuilt once at load time.

File layout (little-endian throughout)::

    "BLP2"  u32 version
    u32 S, n_a, n_b, n_e, sample_rate, head, frame_size, lpc_order; f32 default_T
    u8 storage (0 merged, 1 separated)
    u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 rank, u32 dims[rank], u64 offset
    payload: float32 tensors; offsets are relative to the payload start
"""
from __future__ import annotations

import dataclasses
import enum
import struct

import numpy as np

from . import kernels
from .config import HeadKind, ModelConfig
from .errors import (BadMagic, CorruptDirectory, DimensionMismatch, EmptyHistogram,
                     TruncatedPayload, UnsupportedVersion)

MAGIC = b"BLP2"
VERSION = 1
_HEADER = struct.Struct("<4sI8IfBI")
_F32 = np.float32


class StorageFlag(enum.IntEnum):
    MERGED = 0
    SEPARATED = 1


@dataclasses.dataclass
class SeparatedEmbedding:
    e_x: np.ndarray  # [256, n_e]
    u_x: np.ndarray  # [n_e, 3 n_a]


@dataclasses.dataclass
class MergedEmbedding:
    e_prime: np.ndarray  # [256, 3 n_a]


def restore_merged(e_x, u_x=None) -> np.ndarray:
    """``E_x @ U_x`` in float32, each entry summed over ``n_e`` in index order.

    Accepts either the two factors or a :class:`SeparatedEmbedding`.
    """
    if isinstance(e_x, SeparatedEmbedding):
        e_x, u_x = e_x.e_x, e_x.u_x
    e_x = np.ascontiguousarray(e_x, dtype=_F32)
    u_x = np.ascontiguousarray(u_x, dtype=_F32)
    if e_x.ndim != 2 or u_x.ndim != 2 or e_x.shape[1] != u_x.shape[0]:
        raise DimensionMismatch(f"cannot multiply E_x{e_x.shape} by U_x{u_x.shape}")
    out = np.empty((e_x.shape[0], u_x.shape[1]), dtype=_F32)
    kernels.restore_merged_into(e_x, u_x, out)
    return out


# -- parameter accounting ---------------------------------------------------

def params_merged(S: int, n_a: int) -> int:
    """Embedding parameters when all 3S merged tables are stored."""
    return 256 * 3 * n_a * 3 * S


def params_separated(S: int, n_a: int, n_e: int) -> int:
    return (256 * n_e + n_e * 3 * n_a) * 3 * S


def should_separate(n_e: int, n_a: int) -> bool:
    return 256 * n_e + 3 * n_a * n_e < 256 * 3 * n_a


# -- sparse code remap ------------------------------------------------------

@dataclasses.dataclass
class CodeRemap:
    map: np.ndarray  # [256] int

    def __call__(self, q: int) -> int:
        return int(self.map[q])


def build_code_remap(histogram) -> CodeRemap:
    """Send every unseen code to the nearest seen one, ties going toward code 128."""
    counts = np.asarray(histogram)
    if counts.shape != (256,):
        raise ValueError("histogram must have 256 bins")
    seen = np.flatnonzero(counts > 0)
    if seen.size == 0:
        raise EmptyHistogram("no code was observed")
    out = np.empty(256, dtype=np.int64)
    for q in range(256):
        dist = np.abs(seen - q)
        near = seen[dist == dist.min()]
        # lower code wins if both candidates sit equally far from the centre
        out[q] = min(near, key=lambda c: (abs(int(c) - 128), int(c)))
    return CodeRemap(out)


def apply_remap(remap: CodeRemap, q: int) -> int:
    return int(remap.map[int(q)])


# -- binary container -------------------------------------------------------

def encode_model_file(config: ModelConfig, storage: StorageFlag, tensors: dict[str, np.ndarray]) -> bytes:
    names = sorted(tensors)
    header = _HEADER.pack(
        MAGIC, VERSION, config.S, config.n_a, config.n_b, config.n_e, config.sample_rate,
        int(config.head), config.frame_size, config.lpc_order, config.default_T,
        int(storage), len(names))
    directory = bytearray()
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw_name = name.encode("utf-8")
        directory += struct.pack("<H", len(raw_name)) + raw_name
        directory += struct.pack("<B", arr.ndim)
        directory += struct.pack(f"<{arr.ndim}I", *arr.shape)
        directory += struct.pack("<Q", len(payload))
        payload += arr.tobytes()
    return header + bytes(directory) + bytes(payload)


def _infer_config(fields, tensors) -> ModelConfig:
    S, n_a, n_b, n_e, rate, head, frame_size, order, default_T = fields
    extra = {}
    try:
        extra["cond_size"] = tensors["gru_a.cond_weight"].shape[1]
        extra["pitch_bins"], extra["pitch_embed_dim"] = tensors["frame.pitch_embed"].shape
        if HeadKind(head) is HeadKind.SINGLE_LOGISTIC:
            hidden = []
            i = 0
            while f"head.0.fc{i}.weight" in tensors:
                hidden.append(tensors[f"head.0.fc{i}.weight"].shape[0])
                i += 1
            extra["head_hidden"] = tuple(hidden[:-1])
        return ModelConfig(S=S, n_a=n_a, n_b=n_b, n_e=n_e, sample_rate=rate, head=HeadKind(head),
                           frame_size=frame_size, lpc_order=order, default_T=float(default_T), **extra)
    except (KeyError, ValueError) as exc:
        raise CorruptDirectory(f"tensor directory does not describe a valid model: {exc}") from exc


def decode_model_file(data: bytes) -> tuple[ModelConfig, StorageFlag, dict[str, np.ndarray]]:
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic("not a model file (bad magic)")
    if len(data) < 8:
        raise CorruptDirectory("header cut short")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise UnsupportedVersion(f"model file version {version} (this build reads {VERSION})")
    if len(data) < _HEADER.size:
        raise CorruptDirectory("header cut short")
    fields = _HEADER.unpack_from(data, 0)
    config_fields, storage_raw, count = fields[2:11], fields[11], fields[12]
    try:
        storage = StorageFlag(storage_raw)
    except ValueError:
        raise CorruptDirectory(f"unknown storage flag {storage_raw}") from None

    entries = []
    pos = _HEADER.size
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + name_len].decode("utf-8")
            if len(name.encode("utf-8")) != name_len:
                raise CorruptDirectory("tensor name cut short")
            pos += name_len
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            (offset,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            entries.append((name, dims, offset))
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptDirectory(f"tensor directory is malformed: {exc}") from exc
    if len({e[0] for e in entries}) != len(entries):
        raise CorruptDirectory("duplicate tensor names")

    payload = memoryview(data)[pos:]
    tensors = {}
    end = 0
    for name, dims, offset in entries:
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        if offset + nbytes > len(payload):
            raise TruncatedPayload(f"tensor {name!r} runs past the end of the file")
        tensors[name] = np.frombuffer(payload[offset : offset + nbytes], dtype="<f4").reshape(dims).astype(_F32)
        end = max(end, offset + nbytes)
    if end != len(payload):
        raise CorruptDirectory(f"{len(payload) - end} unreferenced payload bytes")
    return _infer_config(config_fields, tensors), storage, tensors


def storage_tensors(model, flag: StorageFlag) -> tuple[StorageFlag, dict[str, np.ndarray]]:
    """Tensors that ``dump`` writes for ``flag``, plus the storage actually used."""
    cfg = model.config
    if flag is StorageFlag.SEPARATED and model.separated and should_separate(cfg.n_e, cfg.n_a):
        return StorageFlag.SEPARATED, dict(model.tensors)
    tensors = {k: v for k, v in model.tensors.items() if not (k.endswith(".e_x") or k.endswith(".u_x"))}
    for k in range(cfg.n_slots):
        tensors[f"embed.{k}.table"] = model.tables[k]
    return StorageFlag.MERGED, tensors


def dump(model, flag: StorageFlag = StorageFlag.SEPARATED) -> bytes:
    """Serialise ``model``.  Separated storage silently falls back to merged
    when the factors are unavailable or would not save space; the header
    records which one was written."""
    actual, tensors = storage_tensors(model, StorageFlag(flag))
    return encode_model_file(model.config, actual, tensors)


def load(data: bytes):
    from .engine import Model

    config, _, tensors = decode_model_file(data)
    try:
        return Model(config, tensors)
    except (DimensionMismatch, ValueError) as exc:
        raise CorruptDirectory(str(exc)) from exc


def load_file(path):
    with open(path, "rb") as fh:
        return load(fh.read())


def save_file(path, model, flag: StorageFlag = StorageFlag.SEPARATED) -> None:
    with open(path, "wb") as fh:
        fh.write(dump(model, flag))


def factor_rank1(model):
    """Separated model recovered from a merged n_e = 1 model.

    Each table must be (numerically) an outer product; the largest-norm row is
    taken as ``U_x`` and ``E_x`` is the per-row projection onto it.  Raises
    ``ValueError`` when the model is not n_e = 1 or a table is not rank one.
    """
    from .engine import Model

    cfg = model.config
    if cfg.n_e != 1:
        raise ValueError(f"merged tables can only be re-factored when n_e = 1 (model has {cfg.n_e})")
    tensors = {k: v for k, v in model.tensors.items() if not k.endswith(".table")}
    for k in range(cfg.n_slots):
        table = model.tables[k].astype(np.float64)
        u = table[np.argmax(np.linalg.norm(table, axis=1))]
        norm2 = float(u @ u)
        e = table @ u / norm2 if norm2 > 0 else np.zeros(256)
        e32, u32 = e.astype(_F32)[:, None], u.astype(_F32)[None, :]
        err = np.max(np.abs(restore_merged(e32, u32) - model.tables[k]))
        scale = max(float(np.max(np.abs(table))), 1e-30)
        if err > 1e-6 * scale:
            raise ValueError(f"embedding table {k} is not rank one (relative error {err / scale:.2e})")
        tensors[f"embed.{k}.e_x"] = e32
        tensors[f"embed.{k}.u_x"] = u32
    return Model(cfg, tensors)


def embedding_floats(config: ModelConfig, flag: StorageFlag) -> int:
    if flag is StorageFlag.SEPARATED:
        return params_separated(config.S, config.n_a, config.n_e)
    return params_merged(config.S, config.n_a)
