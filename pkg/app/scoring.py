import logging
import math
from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from app.models import BenchmarkKind, ExperimentConfig, TrialArchive, TrialRecord
from app.stats import mean, median

logger = logging.getLogger(__name__)

TrialGroups = Dict[Tuple[str, str], List[TrialRecord]]


class ScoreTable(BaseModel):
    """Per-(benchmark, fuzzer) scores for one metric family.

    Coverage scores are relative median scores in [0, 100]; bug scores are raw
    per-benchmark medians of the found/not-found indicator in [0, 1].
    """

    model_config = ConfigDict(frozen=True)

    metric: BenchmarkKind
    fuzzers: Tuple[str, ...]
    benchmarks: Tuple[str, ...]
    scores: Dict[str, Dict[str, float]]
    degenerate: Tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check_complete(self) -> "ScoreTable":
        upper = 100.0 if self.metric == BenchmarkKind.COVERAGE else 1.0
        for benchmark in self.benchmarks:
            for fuzzer in self.fuzzers:
                value = self.scores.get(benchmark, {}).get(fuzzer)
                if value is None:
                    raise ValueError(f"missing score for benchmark '{benchmark}', fuzzer '{fuzzer}'")
                if not 0.0 <= value <= upper:
                    raise ValueError(f"score {value} for '{benchmark}'/'{fuzzer}' outside [0, {upper}]")
        return self

    @property
    def is_empty(self) -> bool:
        return not self.benchmarks or not self.fuzzers

    def score(self, benchmark: str, fuzzer: str) -> float:
        return self.scores[benchmark][fuzzer]

    def column(self, benchmark: str) -> List[float]:
        """Scores of every fuzzer on one benchmark, in fuzzer order."""
        return [self.scores[benchmark][f] for f in self.fuzzers]

    def profile(self, fuzzer: str) -> List[float]:
        """Scores of one fuzzer on every benchmark, in benchmark order."""
        return [self.scores[b][fuzzer] for b in self.benchmarks]

    def subset(self, benchmarks: Sequence[str]) -> "ScoreTable":
        """The same scores restricted to the given benchmarks, in table order."""
        kept = tuple(b for b in self.benchmarks if b in benchmarks)
        return ScoreTable(
            metric=self.metric,
            fuzzers=self.fuzzers,
            benchmarks=kept,
            scores={b: self.scores[b] for b in kept},
            degenerate=tuple(b for b in self.degenerate if b in kept),
        )


class TimeToBugTable(BaseModel):
    """Mean seconds to first crash, present only where at least one trial crashed."""

    model_config = ConfigDict(frozen=True)

    fuzzers: Tuple[str, ...]
    benchmarks: Tuple[str, ...]
    entries: Dict[str, Dict[str, float]]
    overall: Dict[str, float]

    def mean_time(self, benchmark: str, fuzzer: str) -> Optional[float]:
        return self.entries.get(benchmark, {}).get(fuzzer)


class FuzzerProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    leads: int
    within_90: int
    top_three: int
    std_dev: float


def group_trials(archive: TrialArchive) -> TrialGroups:
    groups: TrialGroups = defaultdict(list)
    for trial in archive.trials:
        groups[(trial.fuzzer_id, trial.benchmark_id)].append(trial)
    return groups


def final_coverage(trial: TrialRecord) -> int:
    return trial.samples[-1].lines_covered


def _padded(values: Sequence[float], expected_count: int) -> List[float]:
    if expected_count <= 0:
        raise ValueError("expected_count must be positive")
    if len(values) > expected_count:
        raise ValueError(f"{len(values)} trials exceed the expected {expected_count}")
    # absent trials count as zero
    return list(values) + [0] * (expected_count - len(values))


def median_coverage(trials: Sequence[TrialRecord], expected_count: int) -> float:
    return median(_padded([final_coverage(t) for t in trials], expected_count))


def _relative(median_value: float, global_max: int) -> float:
    if global_max == 0:
        return 0.0
    return 100.0 * median_value / global_max


def relative_coverage_score(
    fuzzer_id: str, benchmark_id: str, archive: TrialArchive, config: ExperimentConfig
) -> float:
    """100 x median final coverage of the fuzzer / best final coverage of any trial of any fuzzer."""
    everyone = [t for t in archive.trials if t.benchmark_id == benchmark_id]
    global_max = max((final_coverage(t) for t in everyone), default=0)
    own = [t for t in everyone if t.fuzzer_id == fuzzer_id]
    return _relative(median_coverage(own, config.trials), global_max)


def bug_indicator(trial: Optional[TrialRecord]) -> int:
    return 1 if trial is not None and trial.first_crash_t_s is not None else 0


def bug_score(fuzzer_id: str, benchmark_id: str, archive: TrialArchive, expected_count: int) -> float:
    indicators = [bug_indicator(t) for t in archive.trials_for(fuzzer_id, benchmark_id)]
    return median(_padded(indicators, expected_count))


def coverage_score_table(archive: TrialArchive, config: ExperimentConfig) -> ScoreTable:
    groups = group_trials(archive)
    benchmarks = [b.id for b in config.benchmarks_of_kind(BenchmarkKind.COVERAGE)]
    scores: Dict[str, Dict[str, float]] = {}
    degenerate = []
    for benchmark in benchmarks:
        finals = {f: [final_coverage(t) for t in groups.get((f, benchmark), [])] for f in config.fuzzer_ids}
        global_max = max((v for values in finals.values() for v in values), default=0)
        if global_max == 0:
            logger.warning(f"Benchmark '{benchmark}' is degenerate: no trial covered any line")
            degenerate.append(benchmark)
        scores[benchmark] = {
            f: _relative(median(_padded(finals[f], config.trials)), global_max) for f in config.fuzzer_ids
        }
    return ScoreTable(
        metric=BenchmarkKind.COVERAGE,
        fuzzers=tuple(config.fuzzer_ids),
        benchmarks=tuple(benchmarks),
        scores=scores,
        degenerate=tuple(degenerate),
    )


def bug_score_table(archive: TrialArchive, config: ExperimentConfig) -> ScoreTable:
    groups = group_trials(archive)
    benchmarks = [b.id for b in config.benchmarks_of_kind(BenchmarkKind.BUG)]
    scores: Dict[str, Dict[str, float]] = {}
    for benchmark in benchmarks:
        scores[benchmark] = {
            f: median(_padded([bug_indicator(t) for t in groups.get((f, benchmark), [])], config.trials))
            for f in config.fuzzer_ids
        }
    unfound = [b for b in benchmarks if not any(scores[b].values())]
    return ScoreTable(
        metric=BenchmarkKind.BUG,
        fuzzers=tuple(config.fuzzer_ids),
        benchmarks=tuple(benchmarks),
        scores=scores,
        degenerate=tuple(unfound),
    )


def aggregate_scores(table: ScoreTable) -> Dict[str, float]:
    """Coverage: mean relative score. Bug: 100 x (sum of per-benchmark medians) / number of bug benchmarks."""
    if table.is_empty:
        raise ValueError("cannot aggregate an empty score table")
    match table.metric:
        case BenchmarkKind.COVERAGE:
            return {f: mean(table.profile(f)) for f in table.fuzzers}
        case BenchmarkKind.BUG:
            return {f: 100.0 * math.fsum(table.profile(f)) / len(table.benchmarks) for f in table.fuzzers}


def bugs_found(table: ScoreTable, fuzzer_id: str) -> float:
    return math.fsum(table.profile(fuzzer_id))


def time_to_bug(
    fuzzer_id: str, archive: TrialArchive, config: ExperimentConfig
) -> Tuple[Dict[str, float], Optional[float]]:
    """Per bug benchmark mean first-crash time over crashing trials, and the mean over all of them."""
    per_benchmark: Dict[str, float] = {}
    all_times: List[int] = []
    for benchmark in config.benchmarks_of_kind(BenchmarkKind.BUG):
        times = [
            t.first_crash_t_s for t in archive.trials_for(fuzzer_id, benchmark.id) if t.first_crash_t_s is not None
        ]
        if times:
            per_benchmark[benchmark.id] = mean(times)
            all_times.extend(times)
    return per_benchmark, (mean(all_times) if all_times else None)


def time_to_bug_table(archive: TrialArchive, config: ExperimentConfig) -> TimeToBugTable:
    entries: Dict[str, Dict[str, float]] = defaultdict(dict)
    overall: Dict[str, float] = {}
    for fuzzer in config.fuzzer_ids:
        per_benchmark, fuzzer_mean = time_to_bug(fuzzer, archive, config)
        for benchmark, value in per_benchmark.items():
            entries[benchmark][fuzzer] = value
        if fuzzer_mean is not None:
            overall[fuzzer] = fuzzer_mean
    benchmarks = [b.id for b in config.benchmarks_of_kind(BenchmarkKind.BUG)]
    return TimeToBugTable(
        fuzzers=tuple(config.fuzzer_ids),
        benchmarks=tuple(benchmarks),
        entries={b: dict(entries[b]) for b in benchmarks if b in entries},
        overall=overall,
    )


def crash_counts(archive: TrialArchive, config: ExperimentConfig) -> Dict[str, Dict[str, int]]:
    counts = {b: {f: 0 for f in config.fuzzer_ids} for b in config.benchmark_ids}
    for trial in archive.trials:
        if trial.first_crash_t_s is not None:
            counts[trial.benchmark_id][trial.fuzzer_id] += 1
    return counts


def fuzzer_profiles(table: ScoreTable) -> Dict[str, FuzzerProfile]:
    """How often each fuzzer leads, stays within 90% of the best, and places in the top three."""
    leads = {f: 0 for f in table.fuzzers}
    within_90 = {f: 0 for f in table.fuzzers}
    top_three = {f: 0 for f in table.fuzzers}
    for benchmark in table.benchmarks:
        column = table.column(benchmark)
        best = max(column)
        for fuzzer, score in zip(table.fuzzers, column):
            if best > 0 and score == best:
                leads[fuzzer] += 1
            if best > 0 and score >= 0.9 * best:
                within_90[fuzzer] += 1
            if 1 + sum(1 for other in column if other > score) <= 3:
                top_three[fuzzer] += 1
    return {
        f: FuzzerProfile(
            leads=leads[f],
            within_90=within_90[f],
            top_three=top_three[f],
            std_dev=float(np.std(table.profile(f))) if table.benchmarks else 0.0,
        )
        for f in table.fuzzers
    }


def _value_at(trial: TrialRecord, tick: int) -> int:
    value = 0
    for sample in trial.samples:
        if sample.t_s > tick:
            break
        value = sample.lines_covered
    return value


def coverage_growth(
    trials: Sequence[TrialRecord], fuzzer_ids: Sequence[str], expected_count: int
) -> Dict[str, List[Tuple[int, float]]]:
    """Median lines covered per fuzzer at every snapshot tick seen on the benchmark.

    Trials missing a tick carry their last value forward; absent trials contribute 0.
    """
    ticks = sorted({s.t_s for t in trials for s in t.samples})
    series = {}
    for fuzzer in fuzzer_ids:
        own = [t for t in trials if t.fuzzer_id == fuzzer]
        series[fuzzer] = [(tick, median(_padded([_value_at(t, tick) for t in own], expected_count))) for tick in ticks]
    return series
