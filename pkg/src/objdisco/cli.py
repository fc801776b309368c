"""Command line front end.

Every subcommand runs the pipeline graph up to its stage; earlier stages are
served from the run directory when their cache keys still match.

Exit codes: 0 success, 1 stage failure, 2 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Dict, List, Optional

from objdisco.config import STAGES, load_config
from objdisco.context import Context
from objdisco.errors import ConfigError, DatasetError, ObjdiscoError, StageError
from objdisco.graph import graph
from objdisco.state import InputState
from objdisco.utils import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_STAGE_FAILURE = 1
EXIT_CONFIG_ERROR = 2

COMMAND_STAGES: Dict[str, str] = {
    "simulate": "simulate",
    "associate": "associate",
    "train": "train",
    "discover": "discover",
    "detect": "detect",
    "eval": "evaluate",
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON configuration file; defaults when omitted")
    parser.add_argument("--seed", type=int, help="Override the global seed")
    parser.add_argument("--output", help="Run directory (stage outputs and reports)")
    parser.add_argument("--dataset", help="Dataset directory; <output>/dataset when omitted")
    parser.add_argument("--force", action="store_true", help="Recompute cached stages")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")


def build_parser() -> argparse.ArgumentParser:
    """One subcommand per stage plus ``pipeline --stage``, all sharing the run flags."""
    parser = argparse.ArgumentParser(
        prog="objdisco",
        description="Self-supervised object discovery and few-shot detection on a simulated environment.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for command, stage in COMMAND_STAGES.items():
        _add_common(commands.add_parser(command, help=f"Run the pipeline through the {stage} stage"))
    pipeline = commands.add_parser("pipeline", help="Run the full pipeline or stop after --stage")
    _add_common(pipeline)
    pipeline.add_argument("--stage", choices=STAGES, default=STAGES[-1], help="Last stage to run")
    return parser


def _print_summaries(completed: List[str], summaries: Dict[str, Dict[str, object]]) -> None:
    for stage in completed:
        fields = " ".join(f"{k}={v}" for k, v in summaries.get(stage, {}).items())
        print(f"{stage}: {fields}".rstrip())  # noqa: T201


def main(argv: Optional[List[str]] = None) -> int:
    """Run the command line and return its exit code."""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    stop_after = getattr(args, "stage", None) or COMMAND_STAGES[args.command]

    try:
        config = load_config(args.config, seed=args.seed, output_dir=args.output, dataset_dir=args.dataset)
        result = graph.invoke(
            InputState(stop_after=stop_after),
            context=Context(config=config, force=args.force),
        )
    except (ConfigError, DatasetError, OSError) as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)  # noqa: T201
        return EXIT_CONFIG_ERROR
    except (StageError, ObjdiscoError) as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)  # noqa: T201
        return EXIT_STAGE_FAILURE

    _print_summaries(result["completed"], result["summaries"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
