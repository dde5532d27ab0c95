#!/usr/bin/env python3
"""
Main entry point for the brain-metastasis trajectory engine.

Usage:
    python runtime/main.py <subcommand> [options]
"""

import argparse
import logging
import os
import sys
from dataclasses import replace

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from analysis.featspace import MAX_HORIZON  # noqa: E402
from runtime.config import CONFIG_SCHEMA_VERSION, DEFAULT_CONFIG_PATH, load_config, with_overrides  # noqa: E402
from runtime.pipeline import Pipeline  # noqa: E402
from trajcore.errors import TrajectoryEngineError  # noqa: E402

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_INTERRUPTED = 130

TASKS = ("cr", "resp")
METHODS = ("gbdt", "gat-specific", "gat-general")


def _env_int(name: str):
    value = os.getenv(name)
    return int(value) if value not in (None, "") else None


def _shipped_config():
    return str(DEFAULT_CONFIG_PATH) if DEFAULT_CONFIG_PATH.is_file() else None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        type=str,
        default=os.getenv("BMTRAJ_CONFIG") or _shipped_config(),
        help="YAML/JSON run configuration (default: from .env BMTRAJ_CONFIG, else config/pipeline.yaml)"
    )
    common.add_argument(
        "--out",
        type=str,
        default=os.getenv("BMTRAJ_OUTPUT_DIR"),
        help="Output directory (default: from .env BMTRAJ_OUTPUT_DIR, else config output_dir)"
    )
    common.add_argument(
        "--seed",
        type=int,
        default=_env_int("BMTRAJ_SEED"),
        help="Master seed (default: from .env BMTRAJ_SEED, else config seed)"
    )
    common.add_argument(
        "--threads",
        type=int,
        default=_env_int("BMTRAJ_THREADS"),
        help="Worker cap (default: from .env BMTRAJ_THREADS, else available parallelism)"
    )
    common.add_argument("--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(
        description="Brain-metastasis lesion trajectory engine",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Synthetic cohort, cross-validated GBDT, report
  python runtime/main.py synth --n 500 --seed 42 --out out/synth
  python runtime/main.py evaluate --trajectories out/synth/trajectories.csv \\
      --clinical out/synth/clinical.csv --task resp --method gbdt --out out/eval
  python runtime/main.py report --evaluations out/eval/evaluation --task resp --out out/report

  # Lesion tracking from label volumes, then response categories
  python runtime/main.py track --manifest scans/manifest.csv --out out/track
  python runtime/main.py classify --trajectories out/track/trajectories.csv --out out/classify
        """
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s config schema {CONFIG_SCHEMA_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, trajectories=True, clinical=False):
        p = sub.add_parser(name, help=help_text, parents=[common])
        if trajectories:
            p.add_argument("--trajectories", required=True, help="Trajectory CSV")
        if clinical:
            p.add_argument("--clinical", help="Clinical CSV (long format)")
        return p

    add("ingest", "Validate and canonicalize trajectory/clinical tables", clinical=True)
    p = add("qc", "Apply cohort inclusion criteria", clinical=True)
    p.add_argument("--include-flagged", action="store_true",
                   help="Keep flagged lesions in the output (flags.csv is still written)")
    p = add("track", "Build trajectories from label volumes", trajectories=False)
    p.add_argument("--manifest", required=True, help="Series manifest CSV")
    add("resample", "Resample onto the 60-day grid")
    add("classify", "Response category per lesion at t1..t6")
    add("flows", "Category transition matrices between grid points")
    p = add("cluster", "Fit the trajectory mixture model")
    p.add_argument("--labels", help="Generating-labels CSV (adds adjusted Rand index)")
    p = add("features", "Assemble feature matrices", clinical=True)
    p.add_argument("--horizon", type=int, action="append",
                   help="Horizon N (t0..tN); repeatable (default: config evaluation horizons)")
    p = add("train", "Fit one model on the whole cohort", clinical=True)
    p.add_argument("--task", choices=TASKS, default="resp")
    p.add_argument("--method", choices=METHODS, default="gbdt")
    p.add_argument("--horizon", type=int, default=MAX_HORIZON)
    p = add("evaluate", "Cross-validate one method over all horizons", clinical=True)
    p.add_argument("--task", choices=TASKS, default="resp")
    p.add_argument("--method", choices=METHODS, default="gbdt")
    p.add_argument("--ungrouped", action="store_true",
                   help="Lesion-level folds instead of patient-grouped folds")
    p = add("synth", "Generate a synthetic cohort", trajectories=False)
    p.add_argument("--n", type=int, help="Number of lesions (default: config synth.n_lesions)")
    p = add("report", "Aggregate evaluations into the report bundle", trajectories=False)
    p.add_argument("--evaluations", required=True, help="Directory of evaluate outputs")
    p.add_argument("--task", choices=TASKS, default="resp")
    p.add_argument("--cluster-report", help="cluster_report.json to include")
    p.add_argument("--flows", help="flows.json to include")
    return parser


def configure_logging(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(name)s | %(levelname)s | %(message)s",
        stream=sys.stderr,
        force=True,
    )


def run(args: argparse.Namespace) -> None:
    config = with_overrides(load_config(args.config), args.seed, args.threads, args.out)
    if args.command == "synth" and args.seed is not None:
        config = replace(config, synth=replace(config.synth, seed=args.seed))
    if getattr(args, "ungrouped", False):
        config = replace(config, evaluation=replace(config.evaluation, grouped=False))
    if getattr(args, "include_flagged", False):
        config = replace(config, cohort=replace(config.cohort, include_flagged=True))
    pipeline = Pipeline(config)

    command = args.command
    if command in ("ingest", "qc"):
        getattr(pipeline, command)(args.trajectories, args.clinical)
    elif command == "track":
        pipeline.track(args.manifest)
    elif command in ("resample", "classify", "flows"):
        getattr(pipeline, command)(args.trajectories)
    elif command == "cluster":
        pipeline.cluster(args.trajectories, args.labels)
    elif command == "features":
        pipeline.features(args.trajectories, args.clinical, args.horizon)
    elif command == "train":
        pipeline.train(args.trajectories, args.clinical, args.task, args.method, args.horizon)
    elif command == "evaluate":
        pipeline.evaluate(args.trajectories, args.clinical, args.task, args.method)
    elif command == "synth":
        pipeline.synth(args.n)
    elif command == "report":
        pipeline.report(args.evaluations, args.task, args.cluster_report, args.flows)


def main(argv=None) -> int:
    """Main function with CLI argument parsing; returns the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    try:
        run(args)
    except KeyboardInterrupt:
        print(f"{args.command}: interrupted by user", file=sys.stderr)
        return EXIT_INTERRUPTED
    except TrajectoryEngineError as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"{args.command}: {e.strerror or e}: {e.filename or ''}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
