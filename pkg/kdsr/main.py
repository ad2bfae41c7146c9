import argparse
import logging
import sys
from typing import Optional, Sequence

from kdsr.config import BackboneKind, load_config
from kdsr.controller import COMMANDS, Controller
from kdsr.errors import ConfigError, KdsrError

EXIT_ERROR = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kdsr", description="correlation-distillation sequential recommendation cli"
    )

    parser.add_argument(
        "command",
        type=str,
        choices=COMMANDS,
        help="gen-data, distill, train, evaluate, diagnose or ablate.",
    )

    parser.add_argument("--config", type=str, help="INI config file.")
    parser.add_argument("--seed", type=int, help="Global seed (overrides [run] seed).")
    parser.add_argument("--out", type=str, help="Output directory (overrides [run] out_dir).")
    parser.add_argument("--force", action="store_true", help="Overwrite existing outputs.")

    # Training overrides
    parser.add_argument("--epochs", type=int, help="Training epochs.")
    parser.add_argument("--lambda-soft", type=float, help="Weight of the holistic KD loss.")
    parser.add_argument("--lambda-code", type=float, help="Weight of the dissected KD loss.")
    parser.add_argument(
        "--backbone",
        type=str,
        choices=[kind.value for kind in BackboneKind],
        help="Sequence encoder.",
    )

    parser.add_argument(
        "--checkpoint",
        type=str,
        help="Checkpoint path for train/evaluate (default: <out>/checkpoint.kdck).",
    )
    parser.add_argument(
        "--distill-inline",
        action="store_true",
        help="Build teachers during train instead of loading distill artifacts.",
    )
    parser.add_argument("--resume", action="store_true", help="Resume train from the checkpoint.")

    # Verbose flag
    parser.add_argument("--verbose", action="store_true", help="Enable verbose output.")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.seed is not None and args.seed < 0:
        parser.error("--seed must be a non-negative integer")
    if args.epochs is not None and args.epochs < 0:
        parser.error("--epochs must be >= 0")
    if args.resume and args.command != "train":
        parser.error("--resume only applies to train")

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    overrides = {
        "run.seed": args.seed,
        "run.out_dir": args.out,
        "trainer.epochs": args.epochs,
        "student.lambda_soft": args.lambda_soft,
        "student.lambda_code": args.lambda_code,
        "backbone.kind": args.backbone,
    }
    try:
        cfg = load_config(args.config, overrides)
        controller = Controller(
            command=args.command,
            cfg=cfg,
            force=args.force,
            verbose=args.verbose,
            checkpoint=args.checkpoint,
            distill_inline=args.distill_inline,
            resume=args.resume,
        )
        controller.run()
    except KdsrError as exc:
        print(f"kdsr-error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ConfigError) else EXIT_ERROR
    except OSError as exc:
        print(f"kdsr-error[io]: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
