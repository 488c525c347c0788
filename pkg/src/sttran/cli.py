"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from .config import MODES, STRATEGIES, ConfigError, ModelConfig, dump_config, load_config
from .data.annotations import AnnotationError, save_annotations
from .data.features_io import FeatureFileError, features_of, save_features
from .data.manifest import ManifestError, load_manifest, load_split
from .data.perturb import PERTURB_MODES, apply_orders, perturbation_orders
from .data.synth import SynthSpec, synth_generate
from .data.vocabulary import VocabularyError
from .numerics import CheckpointError

log = logging.getLogger("sttran")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3
VALIDATION_ERRORS = (ConfigError, VocabularyError, ManifestError, AnnotationError, FeatureFileError, CheckpointError)


def _ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad K list {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("K must be >= 1")
    return ks


def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--preset", choices=("paper", "desk", "tiny"))
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", help=f"one of {', '.join(MODES)} (comma list for eval)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    if data:
        p.add_argument("--data", required=True, help="dataset directory or manifest.json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sttran", description="Spatial-temporal relationship transformer")
    parser.add_argument("--log-level", default=None, help="debug, info, warning or error")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on the train split")
    _common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", required=True, help="run directory (checkpoint, run.json)")

    p = sub.add_parser("eval", help="Recall@K table for a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--strategy", default="with,semi,no")
    p.add_argument("--k", type=_ks)
    p.add_argument("--threshold", type=float)
    p.add_argument("--split", default="test")
    p.add_argument("--sweep", action="store_true", help="add an R@20 threshold sweep 0.70..0.95")
    p.add_argument("--out", help="write the report as JSON")

    p = sub.add_parser("predict", help="scene graphs for one split or video")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--strategy", default="with", choices=STRATEGIES)
    p.add_argument("--k", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--split", default="test")
    p.add_argument("--video")
    p.add_argument("--out", required=True, help="JSONL output, one frame per line")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(p, data=False)
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=20)
    p.add_argument("--test-videos", type=int, default=10)
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--coupling", type=float, default=0.0)
    p.add_argument("--persistence", type=float, default=0.5)
    p.add_argument("--multi-spatial", type=float, default=0.0)
    p.add_argument("--no-detections", action="store_true")

    p = sub.add_parser("perturb", help="copy a dataset with some training videos reordered")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fraction", type=float, default=1 / 3)
    p.add_argument("--how", choices=PERTURB_MODES, default="shuffle")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("verify", help="run the bundled property and oracle checks")
    _common(p, data=False)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    _common(p, data=False)
    p.add_argument("--all-entries", action="store_true", help="probe every parameter entry")
    return parser


def resolve_config(args) -> ModelConfig:
    overrides: dict = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    from .config import parse_config_text

    overrides = parse_config_text("\n".join(f"{k} = {v}" for k, v in overrides.items()))
    if args.preset:
        overrides["preset"] = args.preset
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    mode = getattr(args, "mode", None)
    if mode and "," not in mode:
        overrides["mode"] = mode
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = args.steps
    cfg = load_config(args.config, overrides)
    if not getattr(args, "log_level", None):
        logging.getLogger().setLevel(getattr(logging, cfg.log_level.upper(), logging.INFO))
    return cfg


def _cmd_train(args) -> int:
    from .training import run_train

    cfg = resolve_config(args)
    record = run_train(cfg, load_manifest(args.data), args.out)
    Path(args.out, "config.txt").write_text(dump_config(cfg))
    last = record.losses[-1]["loss"] if record.losses else float("nan")
    print(f"trained {len(record.losses)} steps, final loss {last:.6f}, checkpoint {record.checkpoint}")
    return EXIT_OK


def _strategies(text: str) -> list[str]:
    out = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in out if s not in STRATEGIES]
    if bad or not out:
        raise ConfigError(f"unknown strategy {bad or text!r}")
    return out


def _cmd_eval(args) -> int:
    from .training import run_eval

    cfg = resolve_config(args)
    modes = [m.strip() for m in args.mode.split(",")] if args.mode else [cfg.mode]
    if any(m not in MODES for m in modes):
        raise ConfigError(f"modes must be among {MODES}")
    if args.threshold is not None and not 0.0 < args.threshold < 1.0:
        raise ConfigError("threshold must lie in (0, 1)")
    report = run_eval(cfg, load_manifest(args.data), args.checkpoint, modes, _strategies(args.strategy),
                      args.k, args.split, args.threshold, args.sweep)
    sys.stdout.write(report.to_text())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    return EXIT_OK


def _cmd_predict(args) -> int:
    from .training import run_predict

    cfg = resolve_config(args)
    n = run_predict(cfg, load_manifest(args.data), args.checkpoint, args.out, args.split, args.video,
                    args.strategy, args.threshold, args.k)
    print(f"wrote {n} frame graphs to {args.out}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    cfg = resolve_config(args)
    spec = SynthSpec.for_config(
        cfg, n_videos=args.videos, n_test_videos=args.test_videos, n_frames=args.frames,
        coupling=args.coupling, persistence=args.persistence, multi_spatial=args.multi_spatial, seed=cfg.seed,
    )
    try:
        spec.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    m = synth_generate(spec, args.out, detections=not args.no_detections)
    print(f"wrote {m.root / 'manifest.json'}")
    return EXIT_OK


def _cmd_perturb(args) -> int:
    if not 0.0 <= args.fraction <= 1.0:
        raise ConfigError("fraction must lie in [0, 1]")
    src = load_manifest(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train = src.splits["train"]
    videos = load_split(src, "train", source="features")
    orders = perturbation_orders([v.n_frames for v in videos], args.fraction, args.how, args.seed)
    perturbed = apply_orders(videos, orders)
    save_annotations(perturbed, out / train.annotations)
    save_features(features_of(perturbed, src.dims), out / train.features)
    if train.detections:
        dets = apply_orders(load_split(src, "train", source="detections"), orders)
        save_features(features_of(dets, src.dims), out / train.detections)
    copied = {src.vocabulary} | {
        f for name, s in src.splits.items() if name != "train" for f in (s.annotations, s.features, s.detections) if f
    }
    for f in sorted(copied):
        if src.path(f).resolve() != (out / f).resolve():
            shutil.copyfile(src.path(f), out / f)
    src.root = out
    src.extra["perturbation"] = {"fraction": args.fraction, "how": args.how, "seed": args.seed,
                                 "videos": sorted(videos[i].video_id for i in orders)}
    src.save()
    print(f"perturbed {len(orders)} of {len(videos)} training videos ({args.how}); wrote {out / 'manifest.json'}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import run_verify

    cfg = resolve_config(args)
    results = run_verify(cfg)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .verify import end_to_end_gradcheck

    cfg = resolve_config(args)
    mode = args.mode or "sgcls"
    rep = end_to_end_gradcheck(cfg.seed, mode, None if args.all_entries else 12)
    print(json.dumps({"mode": mode, "seed": cfg.seed, "max_rel_error": rep.max_rel_error, "worst": rep.worst,
                      "entries": rep.n_checked}, sort_keys=True))
    return EXIT_OK if rep.passed(1e-4) else EXIT_VERIFY


COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "synth": _cmd_synth,
    "perturb": _cmd_perturb,
    "verify": _cmd_verify,
    "gradcheck": _cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INVALID
    level = args.log_level or "info"
    logging.basicConfig(force=True, level=getattr(logging, level.upper(), logging.INFO), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # any other failure is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
