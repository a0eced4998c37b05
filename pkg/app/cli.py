"""fuzzrank command line: validate, run, simulate, analyze, report."""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from app.analysis_service import ALL_METRICS, analysis_service
from app.errors import (
    AnalysisMissingError,
    ArchiveError,
    ConfigValidationError,
    ExperimentExistsError,
    SelectionError,
    SimulationError,
)
from app.experiment_service import experiment_service, read_config_file
from app.models import BenchmarkKind, ExperimentConfig, Visibility
from app.report import AnalysisBundle, SimilarityVariant, write_report
from app.runner import run_experiment
from app.simulator import read_params_file, simulate_experiment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ENVIRONMENT = 3

LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def configure_logging() -> None:
    requested = os.environ.get("FUZZRANK_LOG", "info").strip().lower()
    level = LOG_LEVELS.get(requested, logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s", stream=sys.stderr)
    logging.getLogger("app").setLevel(level)
    if requested not in LOG_LEVELS:
        logger.warning(f"Unknown FUZZRANK_LOG value '{requested}'; using info")


def config_summary(config: ExperimentConfig) -> str:
    def count(kind: Optional[BenchmarkKind] = None, visibility: Optional[Visibility] = None) -> int:
        return sum(
            1
            for b in config.benchmarks
            if (kind is None or b.kind == kind) and (visibility is None or b.visibility == visibility)
        )

    return (
        f"Config '{config.name}' is valid: {len(config.fuzzers)} fuzzers, {len(config.benchmarks)} benchmarks "
        f"({count(BenchmarkKind.COVERAGE)} coverage / {count(BenchmarkKind.BUG)} bug; "
        f"{count(visibility=Visibility.PUBLIC)} public / {count(visibility=Visibility.PRIVATE)} private), "
        f"{config.trials} trials of {config.duration_s}s each"
    )


def cmd_validate(config_path: Path) -> int:
    config = read_config_file(config_path)
    logger.info(config_summary(config))
    return EXIT_OK


def cmd_run(
    config_path: Path,
    experiment_dir: Path,
    visibility: Optional[Visibility] = None,
    benchmark_ids: Optional[Sequence[str]] = None,
) -> int:
    config = read_config_file(config_path)
    experiment_service.ensure_absent(experiment_dir)
    run_experiment(config, experiment_dir, visibility, benchmark_ids)
    return EXIT_OK


def cmd_simulate(config_path: Path, params_path: Path, experiment_dir: Path) -> int:
    config = read_config_file(config_path)
    params = read_params_file(params_path)
    experiment_service.ensure_absent(experiment_dir)
    archive = simulate_experiment(config, params)
    experiment_service.create_experiment(experiment_dir, config)
    experiment_service.save_archive(experiment_dir, archive)
    experiment_service.save_absent_trials(experiment_dir, [])
    logger.info(f"Simulated archive written to {experiment_dir}")
    return EXIT_OK


def cmd_analyze(experiment_dir: Path, alpha: float = 0.05, metrics: Optional[frozenset] = None) -> int:
    config, archive = experiment_service.load_archive(experiment_dir)
    bundle = analysis_service.analyze(config, archive, alpha, metrics)
    path = experiment_service.save_analysis(experiment_dir, bundle.to_json())
    logger.info(f"Analysis written to {path}")
    return EXIT_OK


def cmd_report(experiment_dir: Path, similarity: SimilarityVariant = "relative") -> int:
    text = experiment_service.load_analysis(experiment_dir)
    try:
        bundle = AnalysisBundle.from_json(text)
    except ValidationError as e:
        logger.debug(f"analysis.json failed validation: {e}")
        raise ArchiveError([f"{experiment_dir}: analysis.json is invalid; re-run 'fuzzrank analyze'"]) from e
    config, archive = experiment_service.load_archive(experiment_dir)
    if bundle.config_fingerprint != archive.config_fingerprint:
        raise ArchiveError([f"{experiment_dir}: analysis.json is stale; re-run 'fuzzrank analyze'"])
    write_report(bundle, config, archive, experiment_service.report_dir(experiment_dir), similarity)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuzzrank",
        description="Run fuzzer benchmarking experiments and rank fuzzers by coverage and bugs found.",
        epilog="Set FUZZRANK_LOG to error, warn, info or debug to control verbosity.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    validate = commands.add_parser("validate", help="Check an experiment config and summarize it")
    validate.add_argument("config", type=Path, help="Experiment config (JSON)")

    run = commands.add_parser("run", help="Run every trial of an experiment with real fuzzer processes")
    run.add_argument("config", type=Path, help="Experiment config (JSON)")
    run.add_argument("experiment_dir", type=Path, help="New directory for the experiment; must not exist")
    run.add_argument(
        "--visibility",
        choices=["public", "private", "all"],
        default="all",
        help="Only run benchmarks of this visibility (default: all)",
    )
    run.add_argument(
        "--benchmark",
        action="append",
        dest="benchmarks",
        metavar="ID",
        help="Only run this benchmark; may be repeated",
    )

    simulate = commands.add_parser("simulate", help="Write a synthetic archive from per-fuzzer growth parameters")
    simulate.add_argument("config", type=Path, help="Experiment config (JSON)")
    simulate.add_argument("params", type=Path, help="Simulator params (JSON object keyed by fuzzer id)")
    simulate.add_argument("experiment_dir", type=Path, help="New directory for the experiment; must not exist")

    analyze = commands.add_parser("analyze", help="Score, rank and test an archive; writes analysis.json")
    analyze.add_argument("experiment_dir", type=Path)
    analyze.add_argument(
        "--alpha", type=float, choices=[0.05, 0.1], default=0.05, help="Significance level (default: 0.05)"
    )
    analyze.add_argument(
        "--metric",
        choices=["coverage", "bug", "all"],
        default="all",
        help="Benchmark kinds to analyze (default: all)",
    )

    report = commands.add_parser("report", help="Render report/ from analysis.json")
    report.add_argument("experiment_dir", type=Path)
    report.add_argument(
        "--similarity",
        choices=["relative", "raw"],
        default="relative",
        help="Similarity of relative scores or of raw median coverage (default: relative)",
    )
    return parser


def dispatch(args: argparse.Namespace) -> int:
    match args.command:
        case "validate":
            return cmd_validate(args.config)
        case "run":
            visibility = None if args.visibility == "all" else Visibility(args.visibility)
            return cmd_run(args.config, args.experiment_dir, visibility, args.benchmarks)
        case "simulate":
            return cmd_simulate(args.config, args.params, args.experiment_dir)
        case "analyze":
            metrics = ALL_METRICS if args.metric == "all" else frozenset({BenchmarkKind(args.metric)})
            return cmd_analyze(args.experiment_dir, args.alpha, metrics)
        case "report":
            return cmd_report(args.experiment_dir, args.similarity)
    raise ValueError(f"unknown command {args.command}")


def _log_all(header: str, problems: List[str]) -> None:
    logger.error(header)
    for problem in problems:
        logger.error(f"  {problem}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except ConfigValidationError as e:
        _log_all(f"Invalid config ({len(e.violations)} problem(s)):", e.violations)
        return EXIT_INPUT
    except ArchiveError as e:
        _log_all(f"Invalid archive ({len(e.diagnostics)} problem(s)):", e.diagnostics)
        return EXIT_INPUT
    except (SimulationError, SelectionError, AnalysisMissingError) as e:
        logger.error(str(e))
        return EXIT_INPUT
    except ExperimentExistsError as e:
        logger.error(str(e))
        return EXIT_ENVIRONMENT
    except OSError as e:
        logger.error(f"Cannot write output: {e}")
        return EXIT_ENVIRONMENT


if __name__ == "__main__":
    sys.exit(main())
