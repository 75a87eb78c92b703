"""Command-line entry point: ``python -m marginal_correspondence <command>``."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .config import LOSSES, TASK_ALIASES, TASKS, ExperimentConfig
from .core import CorrespondenceTrainer, evaluate, load_trainer, train, warp_cell_means
from .data import pair_from_config
from .errors import CorrespondenceError, UsageError
from .experiments import DEFAULT_MARGINS, run_ablation, sweep_margin
from .gradcheck import run_suite
from .imageio import write_heatmap, write_image
from .logging_setup import configure_logging
from .records import serialize_rows

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_ERROR = 2


def _floats(text: str) -> List[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _ints(text: str) -> List[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="key = value config file")
    parser.add_argument("--seed", type=int, default=None, help="Run seed")
    parser.add_argument("--margin", type=float, default=None, help="Angular margin m in radians")
    parser.add_argument("--scm", choices=("on", "off"), default=None, help="Self-correlation map augmentation")
    parser.add_argument("--loss", choices=LOSSES, default=None, help="Contrastive term")
    parser.add_argument("--task", choices=TASKS + tuple(TASK_ALIASES), default=None, help="Synthetic task")
    parser.add_argument("--steps", type=int, default=None, help="Optimizer steps")
    parser.add_argument("--out", type=Path, default=None, help="Output directory")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """defaults < MCL_* environment / .env < --config file < flags."""
    config = ExperimentConfig.from_env()
    if args.config is not None:
        if not args.config.is_file():
            raise UsageError(f"config file not found: {args.config}")
        config = ExperimentConfig.from_file(args.config, base=config)
    scm = None if args.scm is None else args.scm == "on"
    config = config.with_overrides(
        seed=args.seed,
        margin=args.margin,
        scm=scm,
        loss=args.loss,
        task=args.task,
        steps=args.steps,
    )
    config.validate()
    return config


def _cmd_train(args: argparse.Namespace) -> int:
    config = build_config(args)
    out = args.out or Path("runs") / config.run_id
    result = train(config, out)
    final = result.final
    print(f"{config.run_id}: top1={final.top1_accuracy:.4f} l1={final.l1:.4f} "
          f"psnr={final.psnr:.2f} ssim={final.ssim:.4f}")
    print(f"outputs in {out}")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    config = build_config(args)
    seeds = _ints(args.seeds) if args.seeds else None
    row = evaluate(args.checkpoint, config, seeds)
    text = serialize_rows([row])
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "eval.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_warp(args: argparse.Namespace) -> int:
    config = build_config(args)
    trainer = load_trainer(config, args.checkpoint) if args.checkpoint else CorrespondenceTrainer(config)
    pair = pair_from_config(trainer.config, args.pair_seed)
    t = trainer.correspondence_for(pair).values
    score = trainer.score_pair(pair, t)

    out = args.out or Path("warp")
    suffix = "pgm" if pair.condition.shape[2] == 1 else "ppm"
    write_image(out / f"condition.{suffix}", pair.condition)
    write_image(out / f"exemplar.{suffix}", pair.exemplar)
    write_image(out / f"ground_truth.{suffix}", pair.ground_truth)
    write_image(out / f"warped.{suffix}", score.warped)
    write_image(out / f"warped_cells.{suffix}", warp_cell_means(t, pair.exemplar, pair.cell_size))

    if args.scm_position is not None:
        scm = trainer.condition_scm(pair)
        if not 0 <= args.scm_position < scm.n:
            raise UsageError(f"--scm-position must lie in [0, {scm.n}), got {args.scm_position}")
        write_heatmap(out / f"scm_{args.scm_position}.pgm", scm.heatmap(args.scm_position))

    print(f"top1={score.top1_accuracy:.4f} l1={score.l1:.4f} psnr={score.psnr:.2f} ssim={score.ssim:.4f}")
    return EXIT_OK


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    names = args.cases.split(",") if args.cases else None
    try:
        results = run_suite(instances=args.instances, seed=args.check_seed, names=names)
    except KeyError as e:
        raise UsageError(e.args[0]) from None
    for result in results:
        print(result)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} case(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _cmd_experiment(args: argparse.Namespace) -> int:
    config = build_config(args)
    margins = _floats(args.margins)
    seeds = _ints(args.seeds)
    runner = sweep_margin if args.command == "sweep-margin" else run_ablation
    report = runner(config, margins=margins, seeds=seeds, out_dir=args.out, workers=args.workers)
    table = report.format()
    print(table)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / f"{args.command}.txt").write_text(table + "\n", encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marginal_correspondence",
        description="Cross-domain correspondence with marginal contrastive learning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train encoders and write metrics, config and checkpoint")
    _add_config_flags(p)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", help="Score a checkpoint on held-out pairs")
    _add_config_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--seeds", default=None, help="Comma-separated pair seeds")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("warp", help="Dump condition, exemplar, ground truth and warped images (pixel and cell-mean warps)")
    _add_config_flags(p)
    p.add_argument("--checkpoint", type=Path, default=None, help="Untrained encoders if omitted")
    p.add_argument("--pair-seed", type=int, default=0)
    p.add_argument("--scm-position", type=int, default=None, help="Also dump this position's SCM heatmap")
    p.set_defaults(handler=_cmd_warp)

    p = sub.add_parser("gradcheck", help="Finite-difference check of every differentiable op")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--check-seed", type=int, default=0)
    p.add_argument("--cases", default=None, help="Comma-separated case names")
    p.add_argument("--log-level", default=None)
    p.set_defaults(handler=_cmd_gradcheck)

    for name, help_text in (
        ("sweep-margin", "Train and evaluate MCL across margins and seeds"),
        ("ablate", "Baseline, +MCL, +SCM and +MCL+SCM over seeds"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        p.add_argument("--margins", default=",".join(f"{m:g}" for m in DEFAULT_MARGINS))
        p.add_argument("--seeds", default="1,2,3,4,5")
        p.add_argument("--workers", type=int, default=1)
        p.set_defaults(handler=_cmd_experiment)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except CorrespondenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
