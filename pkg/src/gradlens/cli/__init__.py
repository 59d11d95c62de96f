"""``gradlens`` command line entry point."""
from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigError, GradlensError, ParseError
from .config import COMMANDS, ExperimentConfig, load_config

log = logging.getLogger("gradlens")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gradlens", description="Gradient inversion attacks and the OASIS defense.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="experiment config file (key = value with [sections])")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--attack", help="none | imprint | trap | linear")
    p.add_argument("--defense", dest="suite", help="augmentation suite name")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--neurons", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    from .commands import COMMAND_TABLE

    try:
        cfg = load_config(args.config, overrides)
    except (ConfigError, ParseError) as exc:
        print(f"gradlens: config error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMAND_TABLE[cfg.command](cfg)
    except (ConfigError, ParseError) as exc:
        print(f"gradlens: config error: {exc}", file=sys.stderr)
        return 2
    except (GradlensError, OSError) as exc:
        print(f"gradlens: error: {exc}", file=sys.stderr)
        return 1


__all__ = ["ExperimentConfig", "load_config", "main"]
