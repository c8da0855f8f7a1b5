"""Command-line entry point: ``foleycascade <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 missing state, 4 numerical error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .audio_io import read_wav, write_pgm, write_spectrogram_csv
from .config import RunConfig, load_config, save_config
from .dsp import melspec
from .errors import ConfigError, FoleyError
from .fad import evaluate
from .foundry import DatasetConfig, build_dataset

log = logging.getLogger("foleycascade")


def _cfg(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config, args.preset)
    if getattr(args, "dataset", None):
        cfg.paths.dataset = args.dataset
    if getattr(args, "checkpoints", None):
        cfg.paths.checkpoints = args.checkpoints
    return cfg


def cmd_dataset_make(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    classes = args.classes.split(",") if args.classes else list(cfg.dataset.classes)
    count = args.clips or cfg.dataset.clips_per_class
    dcfg = DatasetConfig(class_counts={c: count for c in classes}, seed=cfg.dataset.seed if args.seed is None else args.seed)
    manifests = build_dataset(dcfg, cfg.paths.dataset, cfg.dsp, cfg.lowres.factor, workers=args.workers)
    print(f"wrote {sum(len(v) for v in manifests.values())} clips to {cfg.paths.dataset}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    if args.steps:
        for hp in (cfg.train_lowres, cfg.train_upsampler, cfg.train_inverter):
            hp.steps = args.steps
    stages = pipeline.STAGES if args.stage == "all" else (args.stage,)
    # an explicitly named stage is always (re)trained; "all" resumes
    paths = pipeline.train_all(cfg, stages, force=args.force or args.stage != "all")
    for stage, path in paths.items():
        print(f"{stage}: {path}")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    req = pipeline.GenerationRequest(
        sound_class=args.sound_class,
        prompt=args.prompt,
        quality=args.quality,
        num_samples=args.num,
        seed=args.seed,
    )
    result = pipeline.generate(req, cfg, out_dir=args.out or cfg.paths.output)
    for path, rec in zip(result.paths, result.records):
        print(f"{path}\t{rec.text}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    report = evaluate(args.gen, args.ref, cfg.dsp)
    print(report.to_text(), end="")
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    return 0


def cmd_steering(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    classes = args.classes.split(",") if args.classes else None
    report = pipeline.steering_report(cfg, args.num, classes, args.seed, out_dir=args.out or Path(cfg.paths.output) / "steering")
    print(report.to_text(), end="")
    return 0


def cmd_dump_spec(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    wav = read_wav(args.wav)
    if wav.sample_rate != cfg.dsp.sample_rate:
        raise ConfigError(f"{args.wav} is {wav.sample_rate} Hz; config expects {cfg.dsp.sample_rate} Hz")
    mel = melspec(wav, cfg.dsp)
    stem = Path(args.out) if args.out else Path(args.wav).with_suffix("")
    print(write_pgm(stem.with_suffix(".pgm"), mel))
    print(write_spectrogram_csv(stem.with_suffix(".csv"), mel))
    return 0


def cmd_write_config(args: argparse.Namespace) -> int:
    print(save_config(_cfg(args), args.path))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration (default: built-in preset)")
    common.add_argument("--preset", choices=("desk", "paper"), default="desk")
    common.add_argument("--dataset", help="override paths.dataset")
    common.add_argument("--checkpoints", help="override paths.checkpoints")
    common.add_argument("--workers", type=int, default=1, help="process count for parallel work (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="foleycascade", description="Cascaded diffusion foley generator.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("dataset-make", parents=[common], help="render the procedural dataset")
    s.add_argument("--classes", help="comma-separated class names (default: config)")
    s.add_argument("--clips", type=int, help="clips per class (default: config)")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_dataset_make)

    s = sub.add_parser("train", parents=[common], help="train one stage or all three")
    s.add_argument("--stage", choices=("lowres", "upsampler", "inverter", "all"), default="all")
    s.add_argument("--steps", type=int, help="override step count for every trained stage")
    s.add_argument("--force", action="store_true", help="retrain stages that already have checkpoints")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", parents=[common], help="text -> waveform")
    who = s.add_mutually_exclusive_group(required=True)
    who.add_argument("--class", dest="sound_class")
    who.add_argument("--prompt")
    s.add_argument("--quality", choices=("clean", "noisy"), default="clean")
    s.add_argument("--num", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="output directory (default: paths.output)")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval", parents=[common], help="per-class FAD between two manifests")
    s.add_argument("--gen", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--csv", help="also write the table as CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("steering-report", parents=[common], help="clean vs noisy prefix statistics")
    s.add_argument("--num", type=int, default=32, help="samples per condition")
    s.add_argument("--classes")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_steering)

    s = sub.add_parser("dump-spec", parents=[common], help="log-mel of a WAV as PGM and CSV")
    s.add_argument("--wav", required=True)
    s.add_argument("--out", help="output path stem")
    s.set_defaults(func=cmd_dump_spec)

    s = sub.add_parser("write-config", parents=[common], help="write the effective config as INI")
    s.add_argument("path")
    s.set_defaults(func=cmd_write_config)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FoleyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
