"""``binsed`` command line: synth, extract, train, evaluate, predict.

Exit codes: 0 success, 1 validation error, 2 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from threadpoolctl import threadpool_limits

from . import pipeline
from .audio_io import build_manifest
from .config import ExperimentConfig
from .errors import FormatError, SedIOError, ValidationError
from .synth import ClassSpec, SynthSpec, pure_spatial_spec, synthesize_corpus

log = logging.getLogger("binsed")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--dataset", help="dataset root containing manifest.tsv")
    p.add_argument("--seed")
    p.add_argument("--folds", help="comma-separated test folds")
    p.add_argument("--features", help="comma-separated: mel, mel-monaural, mel-concat, tdoa, gcc, domfreq, acr")
    p.add_argument("--layering", choices=("volume", "concat"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--cache", help="feature directory shared between runs (default: OUT/features)")
    p.add_argument("--force", action="store_true", default=None, help="redo up-to-date outputs")
    p.add_argument("--threads", help="worker/BLAS threads; 0 = strict single-threaded")
    p.add_argument("--max-epochs", dest="max_epochs")
    p.add_argument("--patience")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="any other config key")


def _config(args) -> ExperimentConfig:
    overrides = {k: getattr(args, k) for k in
                 ("dataset", "seed", "folds", "features", "layering", "out", "cache", "threads", "max_epochs", "patience")}
    if args.force:
        overrides["force"] = True
    for item in args.set:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    return ExperimentConfig.load(args.config, overrides)


def cmd_synth(args):
    overrides = {"seed": args.seed, "n_recordings": args.recordings, "duration": args.duration,
                 "activity": args.activity}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.variant == "pure-spatial":
        spec = pure_spatial_spec(**overrides)
    else:
        classes = SynthSpec().classes
        if args.delays:
            delays = [int(d) for d in args.delays.split(",")]
            if len(delays) != len(classes):
                raise ValidationError(f"--delays needs {len(classes)} values")
            classes = tuple(ClassSpec(c.name, c.band, d, c.kind, c.gains) for c, d in zip(classes, delays))
        spec = SynthSpec(classes=classes, **overrides)
    entries = synthesize_corpus(args.out, spec)
    print(f"wrote {len(entries)} recordings to {args.out}")


def cmd_extract(args):
    cfg = _config(args)
    manifest = build_manifest(cfg.dataset)
    n = pipeline.extract_features(manifest, cfg.extraction_keys, cfg.feature_dir, cfg.rate, cfg.force, cfg.threads)
    print(f"wrote {n} feature files")


def cmd_train(args):
    cfg = _config(args)

    def show(rec):
        print(f"epoch {rec.epoch:4d}  loss {rec.loss:.5f}  val F {rec.f:.4f}  ER {rec.er:.4f}", flush=True)

    histories = pipeline.run_train(cfg, on_epoch=show)
    for fold, h in histories.items():
        print(f"fold {fold}: best epoch {h.best_epoch}, checkpoint {pipeline.checkpoint_path(cfg, fold)}")


def cmd_evaluate(args):
    cfg = _config(args)
    report = pipeline.run_evaluate(cfg)
    sys.stdout.write(report.to_keyvalue())


def cmd_predict(args):
    cfg = _config(args)
    paths = pipeline.run_predict(cfg)
    print(f"wrote {len(paths)} prediction files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="binsed", description="Binaural sound event detection experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic binaural corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--recordings", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--activity", type=float, help="fraction of time each class is active (0 = silent)")
    p.add_argument("--delays", help="per-class interchannel delays in samples, e.g. 8,-8")
    p.add_argument("--variant", choices=("default", "pure-spatial"), default="default")
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (
        ("extract", cmd_extract, "compute feature volumes for every recording"),
        ("train", cmd_train, "train one model per selected fold"),
        ("evaluate", cmd_evaluate, "score test folds and write reports"),
        ("predict", cmd_predict, "write predicted annotations for test folds"),
    ):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = getattr(args, "threads", None)
    try:
        threads = int(threads) if threads not in (None, "") else 0
    except ValueError:
        print(f"error: --threads must be an integer, got {threads!r}", file=sys.stderr)
        return 1
    try:
        with threadpool_limits(limits=max(1, threads)):
            args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SedIOError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
