import csv
import io
import json
import logging
from pathlib import Path
from typing import Sequence, Tuple

from app.errors import AnalysisMissingError, ArchiveError, ConfigValidationError, ExperimentExistsError
from app.ingest import read_archive, write_archive
from app.models import ExperimentConfig, TrialArchive, config_fingerprint, serialize_config, validate_config

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
FINGERPRINT_FILE = "fingerprint.txt"
SNAPSHOTS_FILE = "snapshots.csv"
CRASHES_FILE = "crashes.csv"
ABSENT_FILE = "absent_trials.csv"
ANALYSIS_FILE = "analysis.json"
REPORT_DIR = "report"


def read_config_file(path: Path) -> ExperimentConfig:
    """Load and validate an experiment config; unreadable or malformed files become validation errors."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        logger.error(f"Cannot read config {path}: {e}")
        raise ConfigValidationError([f"{path}: cannot read file: {e.strerror or e}"]) from e
    except UnicodeDecodeError as e:
        logger.error(f"Config {path} is not UTF-8: {e}")
        raise ConfigValidationError([f"{path}: not valid UTF-8 text: {e.reason} at byte {e.start}"]) from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        logger.error(f"Config {path} is not valid JSON: {e}")
        raise ConfigValidationError([f"{path}: invalid JSON: {e}"]) from e
    return validate_config(raw)


class ExperimentService:
    """File-backed storage for experiment directories."""

    def ensure_absent(self, experiment_dir: Path) -> None:
        if experiment_dir.exists():
            raise ExperimentExistsError(f"experiment directory {experiment_dir} already exists; refusing to overwrite")

    def create_experiment(self, experiment_dir: Path, config: ExperimentConfig) -> None:
        """Create the directory with a canonical config copy and its fingerprint."""
        try:
            experiment_dir.mkdir(parents=True, exist_ok=False)
        except FileExistsError as e:
            logger.error(f"Experiment directory {experiment_dir} already exists")
            raise ExperimentExistsError(
                f"experiment directory {experiment_dir} already exists; refusing to overwrite"
            ) from e
        (experiment_dir / CONFIG_FILE).write_text(serialize_config(config), encoding="utf-8", newline="\n")
        (experiment_dir / FINGERPRINT_FILE).write_text(config_fingerprint(config) + "\n", encoding="utf-8")

    def load_config(self, experiment_dir: Path) -> ExperimentConfig:
        config = read_config_file(experiment_dir / CONFIG_FILE)
        fingerprint_path = experiment_dir / FINGERPRINT_FILE
        if fingerprint_path.exists():
            recorded = fingerprint_path.read_text(encoding="utf-8", errors="replace").strip()
            if recorded != config_fingerprint(config):
                raise ArchiveError([f"{fingerprint_path}: fingerprint does not match {CONFIG_FILE}"])
        return config

    def save_archive(self, experiment_dir: Path, archive: TrialArchive) -> None:
        snapshots, crashes = write_archive(archive)
        (experiment_dir / SNAPSHOTS_FILE).write_text(snapshots, encoding="utf-8", newline="\n")
        (experiment_dir / CRASHES_FILE).write_text(crashes, encoding="utf-8", newline="\n")

    def load_archive(self, experiment_dir: Path) -> Tuple[ExperimentConfig, TrialArchive]:
        config = self.load_config(experiment_dir)
        try:
            with (
                open(experiment_dir / SNAPSHOTS_FILE, encoding="utf-8", newline="") as snapshots,
                open(experiment_dir / CRASHES_FILE, encoding="utf-8", newline="") as crashes,
            ):
                archive = read_archive(snapshots, crashes, config)
        except OSError as e:
            logger.error(f"Cannot read archive in {experiment_dir}: {e}")
            raise ArchiveError([f"{experiment_dir}: cannot read archive: {e.strerror or e}"]) from e
        except UnicodeDecodeError as e:
            logger.error(f"Archive in {experiment_dir} is not UTF-8: {e}")
            problem = f"archive is not valid UTF-8 text: {e.reason} at byte {e.start}"
            raise ArchiveError([f"{experiment_dir}: {problem}"]) from e
        except csv.Error as e:
            logger.error(f"Archive in {experiment_dir} is not parseable CSV: {e}")
            raise ArchiveError([f"{experiment_dir}: archive is not parseable CSV: {e}"]) from e
        logger.info(f"Loaded {len(archive.trials)} trial records from {experiment_dir}")
        return config, archive

    def save_absent_trials(self, experiment_dir: Path, absent: Sequence) -> None:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["fuzzer", "benchmark", "trial", "reason"])
        for trial in sorted(absent, key=lambda a: (a.fuzzer_id, a.benchmark_id, a.trial_index)):
            writer.writerow([trial.fuzzer_id, trial.benchmark_id, trial.trial_index, trial.reason])
        (experiment_dir / ABSENT_FILE).write_text(buffer.getvalue(), encoding="utf-8", newline="\n")

    def save_analysis(self, experiment_dir: Path, analysis_json: str) -> Path:
        path = experiment_dir / ANALYSIS_FILE
        path.write_text(analysis_json, encoding="utf-8", newline="\n")
        return path

    def load_analysis(self, experiment_dir: Path) -> str:
        path = experiment_dir / ANALYSIS_FILE
        if not path.is_file():
            raise AnalysisMissingError(f"{path} not found; run 'fuzzrank analyze {experiment_dir}' first")
        try:
            return path.read_text(encoding="utf-8")
        except UnicodeDecodeError as e:
            logger.error(f"{path} is not UTF-8: {e}")
            raise ArchiveError([f"{path}: not valid UTF-8 text; re-run 'fuzzrank analyze'"]) from e

    def report_dir(self, experiment_dir: Path) -> Path:
        return experiment_dir / REPORT_DIR


# Global service instance
experiment_service = ExperimentService()
