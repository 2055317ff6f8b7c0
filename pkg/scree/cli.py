from __future__ import annotations

import argparse
from pathlib import Path
import shutil
import sys
from typing import Sequence

from scree.bench import (
    CACHE_MODES,
    DEFAULT_BENCH_DIM,
    DEFAULT_GEOCODER_DELAY,
    DEFAULT_REPEATS,
    DEFAULT_SEED,
    DEFAULT_UNIQUE_KEYS,
    TARGET_NAMES,
)
from scree.env import LOG_LEVELS
from scree.synth import DEFAULT_IMAGES, DEFAULT_SYNTH_DIM

DEFAULT_LOADS = "2^0..2^12"
DEFAULT_TUNE_MIN = 0.0
DEFAULT_TUNE_MAX = 12.0
DEFAULT_TUNE_STEP = 0.1
DEFAULT_MAX_PAIR_DISTANCE = 12.5
HELP_MAX_POSITION = 36
HELP_WIDTH = 110


class ScreeHelpFormatter(argparse.HelpFormatter):
    def __init__(self, prog: str) -> None:
        columns = shutil.get_terminal_size(fallback=(HELP_WIDTH, 24)).columns
        super().__init__(prog, max_help_position=HELP_MAX_POSITION, width=max(64, min(HELP_WIDTH, columns - 2)))

    def _get_help_string(self, action: argparse.Action) -> str:
        help_text = action.help or ""
        default = action.default
        if (
            not action.option_strings
            or "default:" in help_text
            or default is None
            or default is False
            or default == argparse.SUPPRESS
        ):
            return help_text
        if isinstance(default, (list, tuple)):
            return f"{help_text} (default: {' '.join(str(value) for value in default)})"
        return f"{help_text} (default: %(default)s)"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scree",
        description="Stream triage pipeline for landslide images in social media posts.",
        formatter_class=ScreeHelpFormatter,
    )
    parser.add_argument(
        "--log-level",
        default=None,
        type=str.upper,
        choices=LOG_LEVELS,
        metavar="LEVEL",
        help="Log level (default: $SCREE_LOG_LEVEL or WARNING).",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser(
        "run", help="Replay a corpus through the pipeline.", formatter_class=ScreeHelpFormatter
    )
    run.add_argument("--config", required=True, type=_path, help="Pipeline config (JSON).")
    run.add_argument("--corpus", type=_path, default=None, help="Corpus to replay (overrides the config).")
    run.add_argument(
        "--out",
        type=_path,
        default=None,
        help="Store directory; run_report.json is written here (overrides the config).",
    )

    bench = subparsers.add_parser(
        "bench", help="Measure latency and throughput of one target.", formatter_class=ScreeHelpFormatter
    )
    bench.add_argument("--target", required=True, choices=TARGET_NAMES, metavar="TARGET", help=f"One of {', '.join(TARGET_NAMES)}.")
    bench.add_argument("--loads", default=DEFAULT_LOADS, help=f"Burst sizes, e.g. 2^0..2^12 or 1,2,4 (default: {DEFAULT_LOADS}).")
    bench.add_argument("--repeats", type=int, default=DEFAULT_REPEATS, help="Repeats per load.")
    bench.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Input generator seed.")
    bench.add_argument("--out", type=_path, required=True, help="Directory for bench.csv and bench_summary.json.")
    bench.add_argument(
        "--prefill",
        type=int,
        nargs="+",
        default=[0],
        metavar="N",
        help="Duplicate filter index sizes before each burst (one sweep per size).",
    )
    bench.add_argument("--dim", type=int, default=DEFAULT_BENCH_DIM, help="Feature vector dimension.")
    bench.add_argument("--cost", type=float, default=0.0, help="Synthetic per-image classifier cost in seconds.")
    bench.add_argument("--delay", type=float, default=DEFAULT_GEOCODER_DELAY, help="Geocoder delay per request in seconds.")
    bench.add_argument("--unique-keys", type=int, default=DEFAULT_UNIQUE_KEYS, help="Distinct place names in geolocation bursts.")
    bench.add_argument(
        "--cache",
        nargs="+",
        choices=CACHE_MODES,
        default=list(CACHE_MODES),
        metavar="MODE",
        help="Geolocation cache variants: none, cold, warm (default: all).",
    )
    bench.add_argument("--rate", type=float, default=None, help="Submit at this many items per second instead of one burst.")
    bench.add_argument("--workers", type=int, default=1, help="Worker threads consuming the burst.")
    bench.add_argument("--timeout", type=float, default=None, help="Per-load timeout in seconds (default: $SCREE_BENCH_TIMEOUT or 60).")

    tune = subparsers.add_parser(
        "tune", help="Pick the duplicate threshold that maximizes MCC.", formatter_class=ScreeHelpFormatter
    )
    tune.add_argument("--pairs", type=_path, required=True, help="CSV of distance,is_duplicate.")
    tune.add_argument("--min", dest="t_min", type=float, default=DEFAULT_TUNE_MIN, help="Smallest threshold.")
    tune.add_argument("--max", dest="t_max", type=float, default=DEFAULT_TUNE_MAX, help="Largest threshold.")
    tune.add_argument("--step", type=float, default=DEFAULT_TUNE_STEP, help="Grid step.")
    tune.add_argument(
        "--max-distance",
        type=float,
        default=DEFAULT_MAX_PAIR_DISTANCE,
        help="Drop pairs farther apart than this (use a negative value to keep all).",
    )

    evaluate = subparsers.add_parser(
        "evaluate", help="Score predicted labels against gold labels.", formatter_class=ScreeHelpFormatter
    )
    evaluate.add_argument("--pred", type=_path, default=None, help="CSV of id,label predictions.")
    evaluate.add_argument("--gold", type=_path, required=True, help="CSV of id,label gold labels.")
    evaluate.add_argument("--positive-label", default="landslide", help="Label of the positive class.")
    evaluate.add_argument(
        "--lexicon-baseline",
        action="store_true",
        help="Score the keyword-only baseline that calls every post positive.",
    )
    evaluate.add_argument("--json", type=_path, default=None, help="Also write the report as JSON.")

    generate = subparsers.add_parser(
        "generate", help="Write a synthetic deployment with planted labels.", formatter_class=ScreeHelpFormatter
    )
    generate.add_argument("--out", type=_path, required=True, help="Output directory.")
    generate.add_argument("--images", type=int, default=DEFAULT_IMAGES, help="Number of distinct image URLs.")
    generate.add_argument("--dim", type=int, default=DEFAULT_SYNTH_DIM, help="Feature dimension in the generated config.")
    generate.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Generator seed.")

    subparsers.add_parser("diagnose", help="Print environment and backend detection info.")
    return parser


def _path(value: str) -> Path:
    return Path(value).expanduser()


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    args = list(argv if argv is not None else sys.argv[1:])
    parser = build_parser()
    parsed = parser.parse_args(args)
    if parsed.command == "evaluate" and parsed.pred is None and not parsed.lexicon_baseline:
        parser.error("evaluate needs --pred or --lexicon-baseline")
    if parsed.command == "bench" and parsed.repeats < 1:
        parser.error("--repeats must be >= 1")
    if parsed.command == "tune" and parsed.step <= 0:
        parser.error("--step must be > 0")
    return parsed


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    from scree.app import run_bench, run_diagnose, run_evaluate, run_generate, run_run, run_tune
    from scree.logs import configure_logging

    configure_logging(args.log_level)
    handlers = {
        "run": run_run,
        "bench": run_bench,
        "tune": run_tune,
        "evaluate": run_evaluate,
        "generate": run_generate,
        "diagnose": run_diagnose,
    }
    return handlers[args.command](args)
