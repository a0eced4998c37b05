"""Reader/writer for the on-disk trial archive (snapshots.csv + crashes.csv)."""

import csv
import io
import logging
import re
from collections import defaultdict
from typing import Dict, List, NamedTuple, Optional, TextIO, Tuple

from app.errors import ArchiveError
from app.models import (
    BenchmarkKind,
    CoverageSample,
    ExperimentConfig,
    TrialArchive,
    TrialRecord,
    config_fingerprint,
)

logger = logging.getLogger(__name__)

SNAPSHOT_HEADER = ["fuzzer", "benchmark", "trial", "time_s", "lines_covered"]
CRASH_HEADER = ["fuzzer", "benchmark", "trial", "crash_time_s"]

_UNSIGNED = re.compile(r"^(0|[1-9][0-9]*)$")

TrialKey = Tuple[str, str, int]


class SnapshotRow(NamedTuple):
    fuzzer: str
    benchmark: str
    trial: int
    time_s: int
    lines_covered: int


class CrashRow(NamedTuple):
    fuzzer: str
    benchmark: str
    trial: int
    crash_time_s: int


def _parse_unsigned(value: str, field: str, where: str, diagnostics: List[str]) -> Optional[int]:
    if not _UNSIGNED.match(value):
        diagnostics.append(f"{where}: {field} must be a base-10 integer without padding, got '{value}'")
        return None
    return int(value)


def _read_rows(stream: TextIO, name: str, header: List[str], diagnostics: List[str]) -> List[Tuple[str, List[str]]]:
    reader = csv.reader(stream)
    found = next(reader, None)
    if found != header:
        raise ArchiveError([f"{name}: expected header '{','.join(header)}', got '{','.join(found or [])}'"])

    rows = []
    for line_number, row in enumerate(reader, start=2):
        where = f"{name}:{line_number}"
        if len(row) != len(header):
            diagnostics.append(f"{where}: expected {len(header)} fields, got {len(row)}")
            continue
        rows.append((where, row))
    return rows


def _check_ids(
    where: str, fuzzer: str, benchmark: str, trial: int, config: ExperimentConfig, diagnostics: List[str]
) -> bool:
    ok = True
    if fuzzer not in config.fuzzer_ids:
        diagnostics.append(f"{where}: unknown fuzzer '{fuzzer}'")
        ok = False
    if benchmark not in config.benchmark_ids:
        diagnostics.append(f"{where}: unknown benchmark '{benchmark}'")
        ok = False
    if not 1 <= trial <= config.trials:
        diagnostics.append(f"{where}: trial {trial} outside 1..{config.trials}")
        ok = False
    return ok


def parse_snapshots(stream: TextIO, config: ExperimentConfig, diagnostics: List[str]) -> List[SnapshotRow]:
    parsed = []
    for where, (fuzzer, benchmark, *numbers) in _read_rows(stream, "snapshots.csv", SNAPSHOT_HEADER, diagnostics):
        values = [_parse_unsigned(v, f, where, diagnostics) for v, f in zip(numbers, SNAPSHOT_HEADER[2:])]
        if any(v is None for v in values):
            continue
        trial, time_s, lines = values
        if not _check_ids(where, fuzzer, benchmark, trial, config, diagnostics):
            continue
        if time_s > config.duration_s:
            diagnostics.append(f"{where}: time_s {time_s} beyond duration_s {config.duration_s}")
            continue
        parsed.append(SnapshotRow(fuzzer, benchmark, trial, time_s, lines))
    return parsed


def parse_crashes(stream: TextIO, config: ExperimentConfig, diagnostics: List[str]) -> List[CrashRow]:
    parsed = []
    for where, (fuzzer, benchmark, *numbers) in _read_rows(stream, "crashes.csv", CRASH_HEADER, diagnostics):
        values = [_parse_unsigned(v, f, where, diagnostics) for v, f in zip(numbers, CRASH_HEADER[2:])]
        if any(v is None for v in values):
            continue
        trial, crash_time = values
        if not _check_ids(where, fuzzer, benchmark, trial, config, diagnostics):
            continue
        if crash_time > config.duration_s:
            diagnostics.append(f"{where}: crash_time_s {crash_time} beyond duration_s {config.duration_s}")
            continue
        if crash_time % config.snapshot_interval_s != 0:
            diagnostics.append(
                f"{where}: crash_time_s {crash_time} is not a multiple of the {config.snapshot_interval_s}s poll"
            )
            continue
        parsed.append(CrashRow(fuzzer, benchmark, trial, crash_time))
    return parsed


def read_archive(snapshot_stream: TextIO, crash_stream: TextIO, config: ExperimentConfig) -> TrialArchive:
    """Assemble and validate a TrialArchive; raises ArchiveError listing every problem found."""
    diagnostics: List[str] = []
    snapshots = parse_snapshots(snapshot_stream, config, diagnostics)
    crashes = parse_crashes(crash_stream, config, diagnostics)

    series: Dict[TrialKey, List[Tuple[int, int]]] = defaultdict(list)
    for row in snapshots:
        series[(row.fuzzer, row.benchmark, row.trial)].append((row.time_s, row.lines_covered))

    first_crash: Dict[TrialKey, int] = {}
    for row in crashes:
        key = (row.fuzzer, row.benchmark, row.trial)
        if key not in series:
            diagnostics.append(f"crashes.csv: crash row for {_describe(key)} which has no snapshots")
            continue
        first_crash[key] = min(row.crash_time_s, first_crash.get(key, row.crash_time_s))

    records = []
    for key in sorted(series):
        points = sorted(series[key])
        problems = []
        for (t_prev, lines_prev), (t_cur, lines_cur) in zip(points, points[1:]):
            if t_cur == t_prev:
                problems.append(f"duplicate snapshot at time_s={t_cur} for {_describe(key)}")
            elif lines_cur < lines_prev:
                problems.append(
                    f"lines_covered decreases from {lines_prev} to {lines_cur} at time_s={t_cur} for {_describe(key)}"
                )
        if problems:
            diagnostics.extend(problems)
            continue

        crash_time = first_crash.get(key)
        if crash_time is not None and config.benchmark(key[1]).kind == BenchmarkKind.COVERAGE:
            logger.warning(f"Crash at {crash_time}s on coverage benchmark for {_describe(key)}; not scored")
        records.append(
            TrialRecord(
                fuzzer_id=key[0],
                benchmark_id=key[1],
                trial_index=key[2],
                samples=[CoverageSample(t_s=t, lines_covered=lines) for t, lines in points],
                first_crash_t_s=crash_time,
            )
        )

    if diagnostics:
        logger.error(f"Archive rejected with {len(diagnostics)} problem(s)")
        raise ArchiveError(diagnostics)
    return TrialArchive.from_records(config_fingerprint(config), records)


def write_archive(archive: TrialArchive) -> Tuple[str, str]:
    """Render (snapshots.csv, crashes.csv) text; rows sorted by fuzzer, benchmark, trial, time."""
    snapshots = io.StringIO()
    crashes = io.StringIO()
    snapshot_writer = csv.writer(snapshots, lineterminator="\n")
    crash_writer = csv.writer(crashes, lineterminator="\n")
    snapshot_writer.writerow(SNAPSHOT_HEADER)
    crash_writer.writerow(CRASH_HEADER)

    for trial in sorted(archive.trials, key=lambda r: r.key):
        for sample in trial.samples:
            snapshot_writer.writerow(
                SnapshotRow(trial.fuzzer_id, trial.benchmark_id, trial.trial_index, sample.t_s, sample.lines_covered)
            )
        if trial.first_crash_t_s is not None:
            crash_writer.writerow(
                CrashRow(trial.fuzzer_id, trial.benchmark_id, trial.trial_index, trial.first_crash_t_s)
            )
    return snapshots.getvalue(), crashes.getvalue()


def _describe(key: TrialKey) -> str:
    fuzzer, benchmark, trial = key
    return f"fuzzer '{fuzzer}' benchmark '{benchmark}' trial {trial}"
