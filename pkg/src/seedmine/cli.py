"""Command-line entry point: seedmine <stage> --config <path> [overrides].

Exit codes: 0 success (or stage already up-to-date), 1 usage error,
2 missing prerequisite (or pipeline lock held), 3 data error,
4 backend unavailable. Failures print a single machine-parseable line
to stderr: error=<Class> stage=<name> detail=<message>.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, PipelineConfig
from .errors import GenerationUnavailable, RemoteUnavailable, SeedMineError
from .stages import STAGE_ORDER, LockHeld, PrerequisiteError, run_stage

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PREREQUISITE = 2
EXIT_DATA = 3
EXIT_BACKEND = 4

CONFIG_ENV_VAR = "SEEDMINE_CONFIG"


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the pipeline reserves 2 for
    # missing prerequisites, so remap to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="seedmine",
        description="Mine domain-specific pre-training data from a text corpus.",
    )
    parser.add_argument(
        "stage",
        choices=STAGE_ORDER,
        help="pipeline stage to run",
    )
    parser.add_argument(
        "--config",
        default=None,
        help=f"path to the pipeline config (or ${CONFIG_ENV_VAR})",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the global rng seed")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override any config value (repeatable)",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def _fail(stage: str, error: Exception, code: int) -> int:
    detail = " ".join(str(error).split())
    print(f"error={type(error).__name__} stage={stage} detail={detail}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    config_path = args.config or os.environ.get(CONFIG_ENV_VAR)
    if not config_path:
        print(
            f"error=ConfigError stage={args.stage} detail=no config given"
            f" (use --config or ${CONFIG_ENV_VAR})",
            file=sys.stderr,
        )
        return EXIT_USAGE
    try:
        cfg = PipelineConfig.load(config_path, overrides=args.overrides, seed=args.seed)
    except (ConfigError, OSError) as exc:
        return _fail(args.stage, exc, EXIT_USAGE)

    try:
        outcome = run_stage(args.stage, cfg)
    except ConfigError as exc:
        return _fail(args.stage, exc, EXIT_USAGE)
    except (PrerequisiteError, LockHeld) as exc:
        return _fail(args.stage, exc, EXIT_PREREQUISITE)
    except (RemoteUnavailable, GenerationUnavailable) as exc:
        return _fail(args.stage, exc, EXIT_BACKEND)
    except (SeedMineError, ValueError, OSError) as exc:
        return _fail(args.stage, exc, EXIT_DATA)

    counts = outcome.report.get("counts", {})
    summary = " ".join(
        f"{key}={value}" for key, value in counts.items() if not isinstance(value, (dict, list))
    )
    wall = outcome.report.get("wall_time_s")
    line = f"stage={outcome.stage} status={outcome.status}"
    if summary:
        line += f" {summary}"
    if wall is not None:
        line += f" wall_time_s={wall}"
    print(line)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
