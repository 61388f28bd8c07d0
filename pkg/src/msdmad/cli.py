"""Command-line front end: ``msdmad <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from msdmad import pipeline
from msdmad.config import PipelineConfig, load_config
from msdmad.errors import ConfigError, MsdmadError
from msdmad.metrics import report_csv
from msdmad.protocol import Side, load_split
from msdmad.synthetic import generate_synthetic_corpus

logger = logging.getLogger("msdmad")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="pipeline configuration (TOML)")
    p.add_argument("--seed", type=int, help="override every seed in the configuration")
    p.add_argument("--jobs", type=int, help="worker threads for per-band training")
    p.add_argument("--out", type=Path, help="output / work directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="msdmad", description="Multispectral differential morphing attack detection")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic embedding store")
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--dimension", type=int)
    p.add_argument("--trusted-per-subject", type=int)

    p = sub.add_parser("gen-morphs", parents=[common], help="landmark-based morphs for one side of a split")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", type=Path, required=True)
    p.add_argument("--side", choices=["train", "test"], required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--max-pairs", type=int, default=None)

    for name, text in (
        ("extract", "build D-MAD feature files from a store, manifest or synthetic corpus"),
        ("run", "full pipeline: store, features, training, scoring, reports"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--store", type=Path)
        p.add_argument("--manifest", type=Path)
        p.add_argument("--split", type=Path)
        if name == "run":
            p.add_argument("--no-figures", action="store_true", help="skip matplotlib PNG figures")
    sub.add_parser("train", parents=[common], help="train per-band classifiers from extracted features")
    sub.add_parser("eval", parents=[common], help="score the test side and fuse band scores")
    p = sub.add_parser("report", parents=[common], help="tables, DET SVGs and figures from fused scores")
    p.add_argument("--no-figures", action="store_true")
    return parser


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    cfg = cfg.with_overrides(seed=args.seed, jobs=args.jobs, out=args.out)
    for attr in ("store", "manifest", "split"):
        value = getattr(args, attr, None)
        if value is not None:
            cfg = replace(cfg, **{attr: value})
    cfg.validate()
    return cfg


def _workdir(cfg: PipelineConfig) -> Path:
    if cfg.out is None:
        raise ConfigError("an output directory is required (--out or [paths] out)")
    return Path(cfg.out)


def cmd_synth(args) -> int:
    cfg = _config(args)
    synth = cfg.synth
    for flag, attr in (("n_subjects", "n_subjects"), ("dimension", "dimension"), ("trusted_per_subject", "trusted_per_subject")):
        value = getattr(args, flag)
        if value is not None:
            synth = replace(synth, **{attr: value})
    store, split = generate_synthetic_corpus(synth)
    out = store.save(_workdir(cfg))
    print(f"wrote {len(store.samples)} samples x {len(store.networks)} networks to {out}")
    return 0


def cmd_gen_morphs(args) -> int:
    try:
        cfg = _config(args)
        spec = cfg.morph if args.alpha is None else replace(cfg.morph, alpha=args.alpha)
        if args.max_pairs == 0:
            logger.warning("--max-pairs 0: no morphs will be generated")
        manifest, files = pipeline.gen_morphs(
            args.manifest, load_split(args.split), Side(args.side), spec, args.max_pairs, cfg.seed, _workdir(cfg)
        )
    except (MsdmadError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(files)} morphs and {manifest}")
    return 0


def _stage_workdir(cfg: PipelineConfig) -> Path:
    work = _workdir(cfg)
    work.mkdir(parents=True, exist_ok=True)
    return work


def cmd_extract(args) -> int:
    cfg = _config(args)
    work = _stage_workdir(cfg)
    store = None
    if cfg.store or cfg.manifest or not (work / "store" / "store.json").exists():
        store = pipeline.prepare_store(cfg, work)
    print(f"features in {pipeline.extract(cfg, work, store)}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    print(f"models in {pipeline.train(cfg, _stage_workdir(cfg))}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    print(f"scores in {pipeline.evaluate(cfg, _stage_workdir(cfg))}")
    return 0


def _print_tables(cfg: PipelineConfig, work: Path) -> None:
    bundle = pipeline.build_reports(cfg, work)
    print(report_csv(bundle.table1 + bundle.table2), end="")


def cmd_report(args) -> int:
    cfg = _config(args)
    work = _stage_workdir(cfg)
    rdir = pipeline.report(cfg, work, figures=not args.no_figures)
    _print_tables(cfg, work)
    print(f"reports in {rdir}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    work = _stage_workdir(cfg)
    rdir = pipeline.run(cfg, work, figures=not args.no_figures)
    _print_tables(cfg, work)
    print(f"reports in {rdir}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "gen-morphs": cmd_gen_morphs,
    "extract": cmd_extract,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
    "run": cmd_run,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except MsdmadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
