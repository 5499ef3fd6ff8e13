"""Command-line entry point.

One verb per pipeline stage plus `run` (every stage in order) and `sweep`
(gap yield across shifted thresholds). Exit codes: 0 on success, 2 for a
config problem, 3 when a stage is invoked before its upstream artifacts
exist, 4 when the model endpoint fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import (
    ConfigError,
    EvontreeError,
    MissingUpstreamError,
    ProtocolError,
    TransportError,
)
from .pipeline import STAGE_ORDER, RunContext, run_all, run_stage, stage_sweep

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_UPSTREAM = 3
EXIT_GATEWAY = 4

VERBS = ("run",) + STAGE_ORDER + ("sweep",)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evontree",
        description="Elicit, confirm, and extrapolate ontology triples; "
                    "mine knowledge gaps and synthesize a training corpus.")
    sub = parser.add_subparsers(dest="command", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb, help=f"{verb} stage" if verb in STAGE_ORDER else verb)
        p.add_argument("--config", required=True, type=Path,
                       help="path to the run config (JSON)")
        p.add_argument("--stage-dir", type=Path, default=None,
                       help="override the output directory")
        p.add_argument("--no-cache", action="store_true",
                       help="bypass cached responses (fresh responses are still cached)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the synthetic model seed")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, stage_dir=args.stage_dir, seed=args.seed)
        ctx = RunContext(config, read_cache=not args.no_cache)
        if args.command == "run":
            run_all(ctx)
        elif args.command == "sweep":
            stage_sweep(ctx)
        else:
            run_stage(ctx, args.command)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except MissingUpstreamError as exc:
        log.error("%s", exc)
        return EXIT_MISSING_UPSTREAM
    except (TransportError, ProtocolError) as exc:
        log.error("model endpoint failure: %s", exc)
        return EXIT_GATEWAY
    except EvontreeError as exc:
        log.error("%s", exc)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
