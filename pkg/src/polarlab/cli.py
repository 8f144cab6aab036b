"""Command line front end.

Subcommands: ``train`` fits a decoder and writes a checkpoint plus a loss
trace; ``ber``, ``snr``, ``pdf``, and ``bench`` run the evaluation harness
over checkpoints and write CSV reports; ``params`` prints parameter counts.
Every file-writing command refuses to overwrite existing outputs unless
``--force`` is given. Settings come from defaults, then an optional JSON
config file, then command line flags, in that order. ``POLARLAB_LOG``
selects the log level (debug/info/warning/error).

Exit codes: 0 success, 2 usage or configuration problem (including
overwrite refusal), 3 runtime failure.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np
from dataclasses import dataclass, replace

from polarlab import evaluation as ev
from polarlab import polar
from polarlab.models import FAMILIES, VARIANTS, ModelSpec, parse_arch_name, build
from polarlab.nn import param_count
from polarlab.training import (TrainConfig, TrainingDiverged, CheckpointError,
                               gen_dataset, train, save_checkpoint,
                               load_checkpoint)

log = logging.getLogger("polarlab")

# build/init rng stream is tagged 0 and training noise 1; evaluation draws
# use tag 2 so no stream is ever shared across roles
EVAL_STREAM = 2


class UsageError(Exception):
    """Bad invocation or configuration; maps to exit code 2."""


@dataclass(frozen=True)
class EvalSettings:
    ebn0_db: tuple = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0)
    min_bit_errors: int = 100
    max_frames: int = 1_000_000
    frames: int = 20_000
    bins: int = 80
    pdf_ebn0_db: float = 0.0
    batch: int = 1024
    bench_frames: int = 512


@dataclass(frozen=True)
class Settings:
    N: int = 16
    K: int = 8
    arch: str = "mlp-rnnd"
    train: TrainConfig = TrainConfig()
    eval: EvalSettings = EvalSettings()
    out: str = "out"
    seed: int = 0


_CODE_KEYS = ("N", "K")
_TRAIN_KEYS = ("batch_size", "epochs", "train_ebn0_db", "lr", "beta1",
               "beta2", "eps", "log_every", "checkpoint_every")
_EVAL_KEYS = ("ebn0_db", "min_bit_errors", "max_frames", "frames", "bins",
              "pdf_ebn0_db", "batch", "bench_frames")
_TOP_KEYS = ("code", "arch", "train", "eval", "out", "seed")


def _check_keys(mapping, allowed, where):
    if not isinstance(mapping, dict):
        raise UsageError(f"config section {where!r} must be an object")
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise UsageError(f"unknown config key(s) in {where}: {', '.join(unknown)}")


def _typed(mapping, key, kinds, where):
    value = mapping[key]
    if isinstance(value, bool) or not isinstance(value, kinds):
        want = kinds[0].__name__ if isinstance(kinds, tuple) else kinds.__name__
        raise UsageError(f"config key {where}.{key} must be a {want}")
    return value


def load_config(path):
    """Parse a JSON config file into Settings, rejecting unknown keys."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    _check_keys(raw, _TOP_KEYS, "top level")
    settings = Settings()
    if "code" in raw:
        code = raw["code"]
        _check_keys(code, _CODE_KEYS, "code")
        n = _typed(code, "N", (int,), "code") if "N" in code else settings.N
        k = _typed(code, "K", (int,), "code") if "K" in code else settings.K
        settings = replace(settings, N=n, K=k)
    if "arch" in raw:
        settings = replace(settings, arch=_typed(raw, "arch", (str,), "top level"))
    if "train" in raw:
        section = raw["train"]
        _check_keys(section, _TRAIN_KEYS, "train")
        kwargs = {}
        for key in _TRAIN_KEYS:
            if key in section:
                kinds = (int,) if key in ("batch_size", "epochs", "log_every",
                                          "checkpoint_every") else (int, float)
                kwargs[key] = _typed(section, key, kinds, "train")
        try:
            settings = replace(settings, train=TrainConfig(**kwargs))
        except ValueError as exc:
            raise UsageError(f"bad train config: {exc}") from exc
    if "eval" in raw:
        section = raw["eval"]
        _check_keys(section, _EVAL_KEYS, "eval")
        kwargs = {}
        for key in _EVAL_KEYS:
            if key not in section:
                continue
            if key == "ebn0_db":
                grid = section[key]
                if (not isinstance(grid, list) or not grid
                        or any(isinstance(v, bool) or not isinstance(v, (int, float))
                               for v in grid)):
                    raise UsageError("config key eval.ebn0_db must be a "
                                     "non-empty list of numbers")
                kwargs[key] = tuple(float(v) for v in grid)
            elif key == "pdf_ebn0_db":
                kwargs[key] = float(_typed(section, key, (int, float), "eval"))
            else:
                kwargs[key] = _typed(section, key, (int,), "eval")
        settings = replace(settings, eval=EvalSettings(**kwargs))
    if "out" in raw:
        settings = replace(settings, out=_typed(raw, "out", (str,), "top level"))
    if "seed" in raw:
        settings = replace(settings, seed=_typed(raw, "seed", (int,), "top level"))
    if settings.seed < 0:
        raise UsageError(f"seed must be non-negative, got {settings.seed}")
    return settings


def _settings_from_args(args):
    settings = load_config(args.config) if args.config else Settings()
    if getattr(args, "out", None):
        settings = replace(settings, out=args.out)
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise UsageError(f"seed must be non-negative, got {args.seed}")
        settings = replace(settings, seed=args.seed)
    return settings


def _arch_hint(name):
    return (f"bad arch name {name!r}: expected family-variant or "
            f"family-variant-N-K with family in {FAMILIES} and variant "
            f"in {VARIANTS}")


def _resolve_spec(arch, n, k):
    """Accept 'family-variant' (code sizes fill in) or a full arch name."""
    parts = arch.split("-")
    try:
        if len(parts) == 2:
            return ModelSpec(family=parts[0], variant=parts[1], N=n, K=k)
        spec = parse_arch_name(arch)
    except ValueError as exc:
        raise UsageError(f"{_arch_hint(arch)} ({exc})") from exc
    if (spec.N, spec.K) != (n, k):
        raise UsageError(f"arch {arch} does not match code ({n}, {k})")
    return spec


def _make_code(settings):
    try:
        return polar.construct_code(settings.N, settings.K)
    except ValueError as exc:
        raise UsageError(f"bad code: {exc}") from exc


def _prepare_out(settings, filenames, force):
    os.makedirs(settings.out, exist_ok=True)
    paths = [os.path.join(settings.out, name) for name in filenames]
    if not force:
        for path in paths:
            if os.path.exists(path):
                raise UsageError(f"refusing to overwrite {path} (use --force)")
    return paths


def _load_model(path, code):
    try:
        model, meta = load_checkpoint(path)
    except CheckpointError as exc:
        raise UsageError(f"checkpoint {path}: {exc}") from exc
    if (model.spec.N, model.spec.K) != (code.N, code.K):
        raise UsageError(f"checkpoint {path} is for code "
                         f"({model.spec.N}, {model.spec.K}), expected "
                         f"({code.N}, {code.K})")
    log.info("loaded %s (epoch %d) from %s", meta.arch_name, meta.epoch, path)
    return model


def _eval_rng(seed):
    return np.random.default_rng(np.random.SeedSequence([seed, EVAL_STREAM]))


def cmd_train(args):
    settings = _settings_from_args(args)
    code = _make_code(settings)
    spec = _resolve_spec(settings.arch, code.N, code.K)
    ckpt_path, trace_path = _prepare_out(
        settings, ["checkpoint.json", "trace.csv"], args.force)
    config = replace(settings.train, seed=settings.seed)
    try:
        model = build(spec, seed=settings.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    dataset = gen_dataset(code)
    log.info("training %s for %d epochs (seed %d)",
             spec.arch_name, config.epochs, settings.seed)

    def snapshot(snap_model, epoch):
        path = os.path.join(settings.out, f"checkpoint_epoch_{epoch}.json")
        save_checkpoint(snap_model, path, seed=settings.seed, epoch=epoch)
        log.info("wrote %s", path)

    callback = snapshot if config.checkpoint_every else None
    trace = train(model, dataset, config, epoch_callback=callback)
    save_checkpoint(model, ckpt_path, seed=settings.seed, epoch=config.epochs)
    trace.write_csv(trace_path)
    if trace.rows:
        last = trace.rows[-1]
        print(f"final loss: total {last.total_loss:.6f} denoise "
              f"{last.denoise_loss:.6f} decode {last.decode_loss:.6f}")
    print(f"wrote {ckpt_path}")
    print(f"wrote {trace_path}")
    return 0


def cmd_ber(args):
    settings = _settings_from_args(args)
    code = _make_code(settings)
    (out_path,) = _prepare_out(settings, ["ber.csv"], args.force)
    decoders = [ev.ScDecoder(code)]
    decoders += [ev.ModelDecoder(_load_model(p, code)) for p in args.checkpoints]
    stop = ev.StopRule(min_bit_errors=settings.eval.min_bit_errors,
                       max_frames=settings.eval.max_frames)
    rows = []
    for decoder in decoders:
        # a fresh generator per decoder pairs every decoder on the same frames
        rows += ev.ber_eval(decoder, code, settings.eval.ebn0_db, stop=stop,
                            rng=_eval_rng(settings.seed), workers=args.workers)
        log.info("evaluated %s", decoder.name)
    ev.write_ber_csv(out_path, rows)
    print(f"wrote {out_path}")
    return 0


def cmd_snr(args):
    settings = _settings_from_args(args)
    code = _make_code(settings)
    (out_path,) = _prepare_out(settings, ["snr.csv"], args.force)
    model = _load_model(args.checkpoint, code)
    try:
        rows = ev.snr_gain(model, code, settings.eval.ebn0_db,
                           settings.eval.frames, rng=_eval_rng(settings.seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ev.write_snr_csv(out_path, rows)
    print(f"wrote {out_path}")
    return 0


def cmd_pdf(args):
    settings = _settings_from_args(args)
    code = _make_code(settings)
    (out_path,) = _prepare_out(settings, ["pdf.csv"], args.force)
    model = _load_model(args.checkpoint, code)
    try:
        rows = ev.pdf_hist(model, code, settings.eval.pdf_ebn0_db,
                           settings.eval.frames, rng=_eval_rng(settings.seed),
                           bins=settings.eval.bins)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ev.write_pdf_csv(out_path, rows)
    print(f"wrote {out_path}")
    return 0


def cmd_bench(args):
    settings = _settings_from_args(args)
    code = _make_code(settings)
    (out_path,) = _prepare_out(settings, ["timing.csv"], args.force)
    decoders = [ev.ScDecoder(code)]
    decoders += [ev.ModelDecoder(_load_model(p, code)) for p in args.checkpoints]
    rows = ev.timing_bench(code, decoders, settings.eval.bench_frames,
                           batch=settings.eval.batch,
                           rng=_eval_rng(settings.seed))
    ev.write_timing_csv(out_path, rows)
    print(f"wrote {out_path}")
    return 0


def cmd_params(args):
    if args.archs:
        names = args.archs
    else:
        names = [f"{fam}-{var}-16-8" for fam in FAMILIES for var in VARIANTS]
    for name in names:
        spec = _resolve_spec(name, *_parts_nk(name))
        try:
            model = build(spec, seed=0)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        print(f"{spec.arch_name} {param_count(model)}")
    return 0


def _parts_nk(name):
    parts = name.split("-")
    if len(parts) == 2:
        return 16, 8
    if len(parts) == 4:
        try:
            return int(parts[2]), int(parts[3])
        except ValueError as exc:
            raise UsageError(_arch_hint(name)) from exc
    raise UsageError(_arch_hint(name))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="polarlab",
        description="train and evaluate neural decoders for polar codes")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workers=False):
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing output files")
        if workers:
            p.add_argument("--workers", type=int, default=1,
                           help="simulation worker processes")

    p_train = sub.add_parser("train", help="train a decoder, write a checkpoint")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_ber = sub.add_parser("ber", help="bit error rate sweep (SC plus checkpoints)")
    common(p_ber, workers=True)
    p_ber.add_argument("checkpoints", nargs="*", metavar="CHECKPOINT")
    p_ber.set_defaults(func=cmd_ber)

    p_snr = sub.add_parser("snr", help="denoiser SNR gain sweep")
    common(p_snr)
    p_snr.add_argument("checkpoint", metavar="CHECKPOINT")
    p_snr.set_defaults(func=cmd_snr)

    p_pdf = sub.add_parser("pdf", help="received vs denoised signal histogram")
    common(p_pdf)
    p_pdf.add_argument("checkpoint", metavar="CHECKPOINT")
    p_pdf.set_defaults(func=cmd_pdf)

    p_bench = sub.add_parser("bench", help="decode timing (SC plus checkpoints)")
    common(p_bench)
    p_bench.add_argument("checkpoints", nargs="*", metavar="CHECKPOINT")
    p_bench.set_defaults(func=cmd_bench)

    p_params = sub.add_parser("params", help="print model parameter counts")
    p_params.add_argument("archs", nargs="*", metavar="ARCH",
                          help="arch names; default: all six at (16, 8)")
    p_params.set_defaults(func=cmd_params)

    return parser


def _setup_logging():
    level_name = os.environ.get("POLARLAB_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"polarlab: error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"polarlab: training diverged: {exc}", file=sys.stderr)
        return 3
    except (CheckpointError, OSError) as exc:
        print(f"polarlab: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
