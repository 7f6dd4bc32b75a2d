"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 file error, 3 feature layout or
rate mismatch, 4 model error (corrupt file, refused conversion).
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import audio, store
from .config import PRESETS, HeadKind, ModelConfig
from .engine import Model, init_model, mac_count, synthesize
from .errors import ModelFormatError, RateMismatch
from .features import FeatureFrame, convert_array, read_features, write_features
from .kernels import KernelVariant

EXIT_OK, EXIT_USAGE, EXIT_FILE, EXIT_LAYOUT, EXIT_MODEL = 0, 1, 2, 3, 4

# synthesis always runs the fixed-order scalar kernels (bit-reproducible)
SYNTH_KERNEL = KernelVariant.SCALAR


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_USAGE, f"{self.prog}: error: {message}")


# -- helpers -----------------------------------------------------------------

def _load_model(path) -> Model:
    try:
        return store.load_file(path)
    except OSError as exc:
        raise CliError(EXIT_FILE, f"cannot read model {path}: {exc}") from exc
    except ModelFormatError as exc:
        raise CliError(EXIT_MODEL, f"bad model file {path}: {exc}") from exc


def _load_features(path, sample_rate: int) -> np.ndarray:
    if not os.path.isfile(path):
        raise CliError(EXIT_FILE, f"no such feature file: {path}")
    try:
        feats = read_features(path, sample_rate)
        for row in feats:
            FeatureFrame.from_vector(row)  # validates pitch and correlation columns
    except OSError as exc:
        raise CliError(EXIT_FILE, f"cannot read features {path}: {exc}") from exc
    except (RateMismatch, ValueError) as exc:
        raise CliError(EXIT_LAYOUT, f"{path} is not a {sample_rate} Hz feature stream: {exc}") from exc
    return feats


def _write(path, writer, *args):
    try:
        writer(path, *args)
    except OSError as exc:
        raise CliError(EXIT_FILE, f"cannot write {path}: {exc}") from exc


def random_features(config: ModelConfig, n_frames: int, seed: int = 0) -> np.ndarray:
    """Reproducible random but well-formed feature frames (benchmark input)."""
    rng = np.random.Generator(np.random.Philox(seed))
    feats = np.empty((n_frames, config.feature_width))
    feats[:, : config.n_ceps] = rng.normal(0.0, 1.0, (n_frames, config.n_ceps))
    rate_scale = config.sample_rate / 16000.0
    feats[:, config.n_ceps] = rng.uniform(32.0, 256.0, n_frames) * rate_scale
    feats[:, config.n_ceps + 1] = rng.uniform(0.0, 1.0, n_frames)
    return feats


# -- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    model = _load_model(args.model)
    rate = model.config.sample_rate
    feats = _load_features(args.features, rate)
    if args.rate_check:
        print(f"ok: {feats.shape[0]} frames match the {rate} Hz model layout")
        return EXIT_OK
    T = model.config.default_T if args.temperature is None else args.temperature
    try:
        pcm = synthesize(model, feats, T=T, seed=args.seed)
    except RateMismatch as exc:
        raise CliError(EXIT_LAYOUT, str(exc)) from exc
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    _write(args.out, audio.write_audio, pcm, rate)
    print(f"{feats.shape[0]} frames, {pcm.shape[0] / rate:.3f} s at {rate} Hz -> {args.out}")
    return EXIT_OK


# -- featconv ----------------------------------------------------------------

def cmd_featconv(args) -> int:
    feats = _load_features(args.input, 24000)
    out = convert_array(feats)
    _write(args.output, write_features, out)
    print(f"{out.shape[0]} frames converted to 16 kHz layout -> {args.output}")
    return EXIT_OK


# -- pack / inspect ----------------------------------------------------------

def cmd_pack(args) -> int:
    model = _load_model(args.input)
    flag = store.StorageFlag[args.format.upper()]
    if flag is store.StorageFlag.SEPARATED:
        if not store.should_separate(model.config.n_e, model.config.n_a):
            raise CliError(EXIT_MODEL, f"separated storage would not be smaller for "
                                       f"n_e={model.config.n_e}, n_a={model.config.n_a}; refusing")
        if not model.separated:
            try:
                model = store.factor_rank1(model)
            except ValueError as exc:
                raise CliError(EXIT_MODEL, f"cannot recover embedding factors: {exc}") from exc
    data = store.dump(model, flag)
    _write(args.output, lambda p, d: open(p, "wb").write(d), data)
    print(f"wrote {args.format} model ({len(data)} bytes) -> {args.output}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    try:
        with open(args.model, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CliError(EXIT_FILE, f"cannot read model {args.model}: {exc}") from exc
    try:
        config, flag, tensors = store.decode_model_file(raw)
        model = Model(config, tensors)
    except (ModelFormatError, ValueError) as exc:
        raise CliError(EXIT_MODEL, f"bad model file {args.model}: {exc}") from exc
    cfg = config
    print(f"storage          {flag.name.lower()}")
    for field in dataclasses.fields(cfg):
        value = getattr(cfg, field.name)
        print(f"{field.name:<16} {value.name if isinstance(value, HeadKind) else value}")
    print("tensors:")
    for name in sorted(tensors):
        print(f"  {name:<28} {'x'.join(str(d) for d in tensors[name].shape)}")
    print(f"params_merged    {store.params_merged(cfg.S, cfg.n_a)}")
    print(f"params_separated {store.params_separated(cfg.S, cfg.n_a, cfg.n_e)}")
    saved = 1.0 - store.params_separated(cfg.S, cfg.n_a, cfg.n_e) / store.params_merged(cfg.S, cfg.n_a)
    print(f"embed_reduction  {100.0 * saved:.2f}%")
    print(f"should_separate  {str(store.should_separate(cfg.n_e, cfg.n_a)).lower()}")
    print(f"file_bytes       {len(raw)}")
    for f in store.StorageFlag:
        print(f"bytes_{f.name.lower():<10} {len(store.dump(model, f))}")
    return EXIT_OK


# -- bench -------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class RtfReport:
    name: str
    config: ModelConfig
    audio_seconds: float
    wall_seconds: float
    macs_per_second: float
    kernel: str = SYNTH_KERNEL.name.lower()
    threads: int = 1

    @property
    def rtf(self) -> float:
        return self.wall_seconds / self.audio_seconds

    CSV_HEADER = "name,S,n_a,sample_rate,audio_seconds,wall_seconds,rtf,macs_per_second,kernel,threads"

    def csv_line(self) -> str:
        c = self.config
        return (f"{self.name},{c.S},{c.n_a},{c.sample_rate},{self.audio_seconds:.6f},"
                f"{self.wall_seconds:.6f},{self.rtf:.6f},{self.macs_per_second:.0f},{self.kernel},{self.threads}")

    def text(self) -> str:
        c = self.config
        return (f"{self.name}: S={c.S} n_a={c.n_a} {c.sample_rate} Hz, "
                f"{self.audio_seconds:.2f} s audio in {self.wall_seconds:.2f} s, "
                f"RTF {self.rtf:.3f} ({self.macs_per_second / 1e6:.1f} MMAC/s, "
                f"{self.kernel} kernels, {self.threads} thread)")


def run_bench(model: Model, seconds: float, warmup: float = 0.0, seed: int = 0,
              name: str = "model") -> RtfReport:
    cfg = model.config
    frame_seconds = cfg.frame_size / cfg.sample_rate
    n = max(1, int(round(seconds / frame_seconds)))
    n_warm = int(round(warmup / frame_seconds))
    feats = random_features(cfg, n + n_warm, seed)
    T = cfg.default_T if cfg.default_T > 0 or cfg.head is not HeadKind.SOFTMAX else 1.0
    with threadpool_limits(limits=1):
        if n_warm:
            synthesize(model, feats[:n_warm], T=T, seed=seed)
        t0 = time.perf_counter()
        synthesize(model, feats[n_warm:], T=T, seed=seed)
        wall = time.perf_counter() - t0
    return RtfReport(name, cfg, n * frame_seconds, wall, mac_count(cfg).per_second)


def cmd_bench(args) -> int:
    if not args.seconds > 0:
        raise CliError(EXIT_USAGE, "--seconds must be positive")
    if args.warmup < 0:
        raise CliError(EXIT_USAGE, "--warmup must be non-negative")
    if (args.model is None) == (args.preset is None):
        raise CliError(EXIT_USAGE, "give exactly one of a model path or --preset")
    if args.preset is not None:
        model, name = init_model(PRESETS[args.preset], args.seed), args.preset
    else:
        model, name = _load_model(args.model), os.path.basename(args.model)
    report = run_bench(model, args.seconds, args.warmup, args.seed, name)
    print(report.text())
    print(RtfReport.CSV_HEADER)
    print(report.csv_line())
    if args.csv:
        new = not os.path.exists(args.csv)
        try:
            with open(args.csv, "a") as fh:
                if new:
                    fh.write(RtfReport.CSV_HEADER + "\n")
                fh.write(report.csv_line() + "\n")
        except OSError as exc:
            raise CliError(EXIT_FILE, f"cannot write {args.csv}: {exc}") from exc
    return EXIT_OK


# -- train-toy ---------------------------------------------------------------

def cmd_train_toy(args) -> int:
    from . import train

    try:
        if args.preset is not None:
            config = PRESETS[args.preset]
        else:
            config = train.toy_config(S=args.bunch, n_a=args.n_a)
        tcfg = train.TrainConfig(lr=args.lr, window=args.window, batch=args.batch,
                                 steps=args.steps, seed=args.seed, burn_in=args.burn_in)
        if tcfg.window < config.S:
            raise ValueError("--window must be at least the bunch size")
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    dataset = train.sine_dataset(freq=args.freq, seconds=args.seconds,
                                 sample_rate=config.sample_rate, frame_size=config.frame_size)
    model, losses = train.train_toy(config, tcfg, dataset)
    _write(args.out, store.save_file, model)
    loss_path = args.loss_csv or os.path.splitext(args.out)[0] + "_loss.csv"
    _write(loss_path, train.write_loss_csv, losses)
    if losses:
        print(f"{len(losses)} steps: NLL {losses[0]:.4f} -> {train.smoothed_final(losses):.4f} (smoothed)")
    print(f"model -> {args.out}, loss curve -> {loss_path}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bunchvoc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="synthesize PCM (or .wav) from a feature file")
    s.add_argument("model")
    s.add_argument("features")
    s.add_argument("out")
    s.add_argument("--temperature", type=float, default=None, help="default: the model's T")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rate-check", action="store_true",
                   help="only check that the feature layout matches the model rate")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("featconv", help="convert 24 kHz features to the 16 kHz layout")
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_featconv)

    s = sub.add_parser("pack", help="rewrite a model with merged or separated embeddings")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--format", choices=("merged", "separated"), required=True)
    s.set_defaults(func=cmd_pack)

    s = sub.add_parser("inspect", help="print a model's header, tensors and storage sizes")
    s.add_argument("model")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("bench", help="single-thread real-time-factor measurement")
    s.add_argument("model", nargs="?")
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--seconds", type=float, default=1.0)
    s.add_argument("--warmup", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--csv", help="append the CSV line to this file")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("train-toy", help="overfit a small model on a synthetic sine")
    s.add_argument("--out", required=True)
    s.add_argument("--loss-csv")
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--bunch", type=int, default=1, help="bunch size S of the toy model")
    s.add_argument("--n-a", type=int, default=32)
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--lr", type=float, default=3e-3)
    s.add_argument("--batch", type=int, default=16)
    s.add_argument("--window", type=int, default=64)
    s.add_argument("--burn-in", type=int, default=120)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--freq", type=float, default=200.0)
    s.add_argument("--seconds", type=float, default=0.5)
    s.set_defaults(func=cmd_train_toy)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
