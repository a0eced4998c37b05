"""Analysis bundle schema and its rendering into report.md, CSV tables and SVG plots."""

import csv
import io
import logging
import shutil
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models import BenchmarkKind, ExperimentConfig, TrialArchive, Visibility
from app.scoring import FuzzerProfile, ScoreTable, TimeToBugTable, coverage_growth, group_trials
from app.stats import CriticalDifference, DiscriminationStats, PairwiseComparison, Ranking, RankingMethod
from app.svg import plot_coverage_growth, plot_critical_difference, plot_similarity

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SimilarityMatrix = Dict[str, Dict[str, Optional[float]]]
SimilarityVariant = Literal["relative", "raw"]

TABLE_FILES = (
    "coverage_scores.csv",
    "bug_scores.csv",
    "rankings.csv",
    "pairwise.csv",
    "similarity.csv",
    "time_to_bug.csv",
    "discrimination.csv",
)


class BenchmarkInfo(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    kind: BenchmarkKind
    visibility: Visibility


class ExperimentSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    trials: int
    duration_s: int
    snapshot_interval_s: int
    fuzzers: Tuple[str, ...]
    benchmarks: Tuple[BenchmarkInfo, ...]


class AnalysisBundle(BaseModel):
    """Everything analyze computes; persisted as analysis.json and rendered by report."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: int = SCHEMA_VERSION
    config_fingerprint: str
    alpha: float
    experiment: ExperimentSummary
    coverage: ScoreTable
    bug: ScoreTable
    coverage_aggregate: Dict[str, float] = Field(default_factory=dict)
    coverage_aggregate_by_visibility: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    bug_aggregate: Dict[str, float] = Field(default_factory=dict)
    bugs_found: Dict[str, float] = Field(default_factory=dict)
    fuzzer_profiles: Dict[str, FuzzerProfile] = Field(default_factory=dict)
    rankings: Tuple[Ranking, ...] = ()
    pairwise: Tuple[PairwiseComparison, ...] = ()
    critical_differences: Tuple[CriticalDifference, ...] = ()
    similarity: SimilarityMatrix = Field(default_factory=dict)
    raw_similarity: SimilarityMatrix = Field(default_factory=dict)
    time_to_bug_similarity: SimilarityMatrix = Field(default_factory=dict)
    discrimination: Dict[str, DiscriminationStats] = Field(default_factory=dict)
    discriminating_bug_benchmarks: Tuple[str, ...] = ()
    time_to_bug: Optional[TimeToBugTable] = None
    crash_counts: Dict[str, Dict[str, int]] = Field(default_factory=dict)
    warnings: Tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check_ids(self) -> "AnalysisBundle":
        fuzzers = set(self.experiment.fuzzers)
        benchmarks = {b.id for b in self.experiment.benchmarks}
        for ranking in self.rankings:
            unknown = {e.fuzzer for e in ranking.entries} - fuzzers
            if unknown:
                raise ValueError(f"{ranking.metric} {ranking.method} ranking names unknown fuzzers {sorted(unknown)}")
        for table in (self.coverage, self.bug):
            if set(table.fuzzers) - fuzzers or set(table.benchmarks) - benchmarks:
                raise ValueError(f"{table.metric} score table references ids outside the experiment")
        for pair in self.pairwise:
            if {pair.fuzzer_a, pair.fuzzer_b} - fuzzers or pair.benchmark not in benchmarks:
                raise ValueError(f"pairwise comparison {pair.fuzzer_a}/{pair.fuzzer_b} on {pair.benchmark} is unknown")
        return self

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "AnalysisBundle":
        return cls.model_validate_json(text)

    def ranking(self, metric: BenchmarkKind, method: RankingMethod) -> Optional[Ranking]:
        for ranking in self.rankings:
            if ranking.metric == metric and ranking.method == method:
                return ranking
        return None

    def critical_difference(self, metric: BenchmarkKind) -> Optional[CriticalDifference]:
        for cd in self.critical_differences:
            if cd.metric == metric:
                return cd
        return None

    def benchmark_info(self, benchmark_id: str) -> BenchmarkInfo:
        for info in self.experiment.benchmarks:
            if info.id == benchmark_id:
                return info
        raise KeyError(benchmark_id)

    def analyzed_benchmarks(self) -> List[BenchmarkInfo]:
        scored = set(self.coverage.benchmarks) | set(self.bug.benchmarks)
        return [b for b in self.experiment.benchmarks if b.id in scored]


# Formatting
def _score(value: float) -> str:
    return f"{value:.2f}"


def _p(value: float) -> str:
    return f"{value:.4f}"


def _bug_median(value: float) -> str:
    return f"{value:g}"


def _maybe(value: Optional[float], fmt=_score) -> str:
    return "n/a" if value is None else fmt(value)


def _table(header: Sequence[str], rows: Iterable[Sequence[str]]) -> List[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines.extend("| " + " | ".join(row) + " |" for row in rows)
    lines.append("")
    return lines


def bug_leaderboard(bundle: AnalysisBundle) -> List[str]:
    """Fuzzers by aggregate bug score, ties broken by faster mean time-to-bug."""
    overall = bundle.time_to_bug.overall if bundle.time_to_bug is not None else {}

    def key(fuzzer: str) -> Tuple[float, float, str]:
        ttb = overall.get(fuzzer)
        return (-round(bundle.bug_aggregate[fuzzer], 9), float("inf") if ttb is None else ttb, fuzzer)

    return sorted(bundle.bug_aggregate, key=key)


def _ranking_section(bundle: AnalysisBundle, metric: BenchmarkKind) -> List[str]:
    lines: List[str] = []
    average = bundle.ranking(metric, RankingMethod.AVERAGE_RANK)
    if average is not None:
        lines += ["### Average rank (lower is better)", ""]
        lines += _table(
            ["Rank", "Fuzzer", "Average rank"],
            ([f"{e.rank:g}", e.fuzzer, _score(e.value)] for e in average.entries),
        )
    relative = bundle.ranking(metric, RankingMethod.RELATIVE_TO_BEST)
    if relative is not None:
        lines += ["### Relative to best (higher is better)", ""]
        lines += _table(
            ["Rank", "Fuzzer", "Score relative to best"],
            ([f"{e.rank:g}", e.fuzzer, _score(e.value)] for e in relative.entries),
        )
        if relative.flagged_benchmarks:
            lines += [
                f"Benchmarks where every fuzzer scored 0 (counted as 100): {', '.join(relative.flagged_benchmarks)}",
                "",
            ]
    cd = bundle.critical_difference(metric)
    if cd is not None:
        lines += [
            f"Friedman test: statistic {_score(cd.friedman_statistic)}, p = {_p(cd.friedman_p)}. "
            f"Critical difference at alpha {cd.alpha:g}: {_score(cd.cd_value)} "
            f"({cd.k} fuzzers, {cd.n_benchmarks} benchmarks).",
            "",
            f"![Critical difference](plots/critical_difference_{metric}.svg)",
            "",
        ]
    return lines


def _coverage_section(bundle: AnalysisBundle) -> List[str]:
    lines = ["## Coverage ranking", ""]
    if bundle.coverage.is_empty:
        return lines + ["No coverage benchmarks were analyzed.", ""]
    lines += _ranking_section(bundle, BenchmarkKind.COVERAGE)

    visibilities = [v for v in Visibility if str(v) in bundle.coverage_aggregate_by_visibility]
    lines += ["### Mean relative coverage score", ""]
    lines += _table(
        ["Fuzzer", "All", *(str(v).capitalize() for v in visibilities)],
        (
            [
                fuzzer,
                _score(bundle.coverage_aggregate[fuzzer]),
                *(_score(bundle.coverage_aggregate_by_visibility[str(v)][fuzzer]) for v in visibilities),
            ]
            for fuzzer in sorted(bundle.coverage_aggregate, key=lambda f: (-bundle.coverage_aggregate[f], f))
        ),
    )
    if bundle.fuzzer_profiles:
        lines += ["### Fuzzer profiles", ""]
        lines += _table(
            ["Fuzzer", "Best score", "Within 90% of best", "Top three", "Std dev of scores"],
            (
                [f, str(p.leads), str(p.within_90), str(p.top_three), _score(p.std_dev)]
                for f, p in sorted(bundle.fuzzer_profiles.items())
            ),
        )
    return lines


def _bug_section(bundle: AnalysisBundle) -> List[str]:
    lines = ["## Bug ranking", ""]
    if bundle.bug.is_empty:
        return lines + ["No bug benchmarks were analyzed.", ""]
    total = len(bundle.bug.benchmarks)
    overall = bundle.time_to_bug.overall if bundle.time_to_bug is not None else {}
    lines += _table(
        ["Rank", "Fuzzer", "Bug score", "Bugs found", "Mean time to bug (s)"],
        (
            [
                str(i),
                f,
                _score(bundle.bug_aggregate[f]),
                f"{bundle.bugs_found[f]:g} of {total} bugs",
                _maybe(overall.get(f)),
            ]
            for i, f in enumerate(bug_leaderboard(bundle), start=1)
        ),
    )
    lines += _ranking_section(bundle, BenchmarkKind.BUG)
    discriminating = ", ".join(bundle.discriminating_bug_benchmarks) or "none"
    lines += [f"Bug benchmarks that separate the fuzzers: {discriminating}", ""]
    if bundle.time_to_bug_similarity:
        lines += ["### Time-to-bug similarity", ""]
        lines += _matrix_lines(bundle.time_to_bug_similarity)
    return lines


def _matrix_lines(matrix: SimilarityMatrix) -> List[str]:
    fuzzers = sorted(matrix)
    return _table(["", *fuzzers], ([a, *(_maybe(matrix[a].get(b)) for b in fuzzers)] for a in fuzzers))


def _pairwise_lines(bundle: AnalysisBundle, benchmark: str) -> List[str]:
    pairs = {(p.fuzzer_a, p.fuzzer_b): p for p in bundle.pairwise if p.benchmark == benchmark}
    if not pairs:
        return []
    fuzzers = sorted(bundle.experiment.fuzzers)

    def cell(a: str, b: str) -> str:
        if a == b:
            return "-"
        pair = pairs.get((a, b))
        if pair is not None:
            return f"{_score(pair.a12)} / {_p(pair.p_value)}"
        pair = pairs[(b, a)]
        return f"{_score(1.0 - pair.a12)} / {_p(pair.p_value)}"

    lines = ["A12 / p-value (row fuzzer against column fuzzer):", ""]
    return lines + _table(["", *fuzzers], ([a, *(cell(a, b) for b in fuzzers)] for a in fuzzers))


def _benchmark_lines(bundle: AnalysisBundle, info: BenchmarkInfo) -> List[str]:
    lines = [f"#### {info.id} ({info.kind})", ""]
    crashes = bundle.crash_counts.get(info.id, {})
    fuzzers = bundle.experiment.fuzzers
    if info.kind == BenchmarkKind.COVERAGE:
        scores = bundle.coverage.scores[info.id]
        lines += _table(
            ["Fuzzer", "Relative score", "Crashing trials"],
            ([f, _score(scores[f]), str(crashes.get(f, 0))] for f in sorted(fuzzers, key=lambda f: (-scores[f], f))),
        )
    else:
        scores = bundle.bug.scores[info.id]
        ttb = bundle.time_to_bug
        lines += _table(
            ["Fuzzer", "Median found", "Crashing trials", "Mean time to bug (s)"],
            (
                [
                    f,
                    _bug_median(scores[f]),
                    str(crashes.get(f, 0)),
                    _maybe(ttb.mean_time(info.id, f) if ttb is not None else None),
                ]
                for f in sorted(fuzzers, key=lambda f: (-scores[f], f))
            ),
        )
    lines += [f"![Coverage growth on {info.id}](plots/coverage_{info.id}.svg)", ""]
    return lines + _pairwise_lines(bundle, info.id)


def render_report(bundle: AnalysisBundle, similarity: SimilarityVariant = "relative") -> str:
    """report.md for a bundle; identical bundles render byte-identical text."""
    summary = bundle.experiment
    counts = {
        (kind, vis): sum(1 for b in summary.benchmarks if b.kind == kind and b.visibility == vis)
        for kind in BenchmarkKind
        for vis in Visibility
    }
    lines = [
        f"# Fuzzer benchmark report: {summary.name}",
        "",
        f"- Config fingerprint: `{bundle.config_fingerprint}`",
        f"- Fuzzers ({len(summary.fuzzers)}): {', '.join(summary.fuzzers)}",
        f"- Trials per fuzzer and benchmark: {summary.trials}",
        f"- Trial duration: {summary.duration_s} s, snapshot every {summary.snapshot_interval_s} s",
        f"- Significance level: {bundle.alpha:g}",
        "",
    ]
    lines += _table(
        ["Benchmarks", *(str(v).capitalize() for v in Visibility), "Total"],
        (
            [
                str(kind).capitalize(),
                *(str(counts[(kind, v)]) for v in Visibility),
                str(sum(counts[(kind, v)] for v in Visibility)),
            ]
            for kind in BenchmarkKind
        ),
    )
    lines += _coverage_section(bundle)
    lines += _bug_section(bundle)

    lines += ["## Benchmarks", ""]
    analyzed = bundle.analyzed_benchmarks()
    for visibility in Visibility:
        group = [info for info in analyzed if info.visibility == visibility]
        if group:
            lines += [f"### {str(visibility).capitalize()} benchmarks", ""]
            for info in group:
                lines += _benchmark_lines(bundle, info)

    matrix = bundle.raw_similarity if similarity == "raw" else bundle.similarity
    label = "median final coverage" if similarity == "raw" else "relative coverage scores"
    lines += ["## Coverage similarity", "", f"Cosine similarity of per-benchmark {label}.", ""]
    lines += _matrix_lines(matrix) if matrix else ["No coverage benchmarks were analyzed.", ""]
    if matrix:
        lines += ["![Similarity](plots/similarity.svg)", ""]

    lines += ["## Benchmark discrimination", ""]
    lines += _table(
        ["Benchmark", "Kind", "Std dev", "IQR", "Min", "Max"],
        (
            [b.id, str(b.kind), _score(d.std_dev), _score(d.iqr), _score(d.min), _score(d.max)]
            for b in analyzed
            if (d := bundle.discrimination.get(b.id)) is not None
        ),
    )

    lines += ["## Warnings", ""]
    lines += [f"- {w}" for w in bundle.warnings] if bundle.warnings else ["None."]
    return "\n".join(lines).rstrip("\n") + "\n"


# CSV tables
def _csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def _csv_number(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def emit_tables(bundle: AnalysisBundle, similarity: SimilarityVariant = "relative") -> Dict[str, str]:
    """File name -> CSV text for every data table; fixed schemas, rows sorted."""
    matrix = bundle.raw_similarity if similarity == "raw" else bundle.similarity
    ttb = bundle.time_to_bug
    return {
        "coverage_scores.csv": _csv(
            ["benchmark", "fuzzer", "score"],
            (
                [b, f, _csv_number(bundle.coverage.scores[b][f])]
                for b in sorted(bundle.coverage.benchmarks)
                for f in sorted(bundle.coverage.fuzzers)
            ),
        ),
        "bug_scores.csv": _csv(
            ["benchmark", "fuzzer", "score", "crashing_trials"],
            (
                [b, f, _csv_number(bundle.bug.scores[b][f]), bundle.crash_counts.get(b, {}).get(f, 0)]
                for b in sorted(bundle.bug.benchmarks)
                for f in sorted(bundle.bug.fuzzers)
            ),
        ),
        "rankings.csv": _csv(
            ["metric", "method", "fuzzer", "value", "rank"],
            (
                [r.metric, r.method, e.fuzzer, _csv_number(e.value), _csv_number(e.rank)]
                for r in sorted(bundle.rankings, key=lambda r: (r.metric, r.method))
                for e in r.entries
            ),
        ),
        "pairwise.csv": _csv(
            ["benchmark", "fuzzer_a", "fuzzer_b", "u_statistic", "p_value", "a12"],
            (
                [
                    p.benchmark,
                    p.fuzzer_a,
                    p.fuzzer_b,
                    _csv_number(p.u_statistic),
                    _csv_number(p.p_value),
                    _csv_number(p.a12),
                ]
                for p in sorted(bundle.pairwise, key=lambda p: (p.benchmark, p.fuzzer_a, p.fuzzer_b))
            ),
        ),
        "similarity.csv": _csv(
            ["fuzzer_a", "fuzzer_b", "similarity"],
            ([a, b, _csv_number(matrix[a].get(b))] for a in sorted(matrix) for b in sorted(matrix[a])),
        ),
        "time_to_bug.csv": _csv(
            ["benchmark", "fuzzer", "mean_time_to_bug_s"],
            (
                [b, f, _csv_number(ttb.mean_time(b, f))]
                for b in sorted(ttb.benchmarks)
                for f in sorted(ttb.fuzzers)
                if ttb.mean_time(b, f) is not None
            )
            if ttb is not None
            else (),
        ),
        "discrimination.csv": _csv(
            ["benchmark", "std_dev", "iqr", "min", "max"],
            (
                [b, _csv_number(d.std_dev), _csv_number(d.iqr), _csv_number(d.min), _csv_number(d.max)]
                for b, d in sorted(bundle.discrimination.items())
            ),
        ),
    }


def render_plots(
    bundle: AnalysisBundle,
    config: ExperimentConfig,
    archive: TrialArchive,
    similarity: SimilarityVariant = "relative",
) -> Dict[str, str]:
    """File name -> SVG text: one growth plot per analyzed benchmark, CD diagrams, similarity heatmap."""
    groups = group_trials(archive)
    plots: Dict[str, str] = {}
    for info in bundle.analyzed_benchmarks():
        trials = [t for f in config.fuzzer_ids for t in groups.get((f, info.id), [])]
        series = coverage_growth(trials, config.fuzzer_ids, config.trials) if trials else {}
        plots[f"coverage_{info.id}.svg"] = plot_coverage_growth(info.id, series)
    for cd in bundle.critical_differences:
        plots[f"critical_difference_{cd.metric}.svg"] = plot_critical_difference(cd)
    matrix = bundle.raw_similarity if similarity == "raw" else bundle.similarity
    if matrix:
        plots["similarity.svg"] = plot_similarity(matrix)
    return plots


def write_report(
    bundle: AnalysisBundle,
    config: ExperimentConfig,
    archive: TrialArchive,
    report_dir: Path,
    similarity: SimilarityVariant = "relative",
) -> Path:
    """Replace report_dir with a freshly rendered report tree and return the path of report.md."""
    if report_dir.exists():
        logger.info(f"Replacing existing report in {report_dir}")
        shutil.rmtree(report_dir)
    (report_dir / "data").mkdir(parents=True)
    (report_dir / "plots").mkdir()

    for name, text in emit_tables(bundle, similarity).items():
        (report_dir / "data" / name).write_text(text, encoding="utf-8", newline="\n")
    for name, text in render_plots(bundle, config, archive, similarity).items():
        (report_dir / "plots" / name).write_text(text, encoding="utf-8", newline="\n")
    report_path = report_dir / "report.md"
    report_path.write_text(render_report(bundle, similarity), encoding="utf-8", newline="\n")
    logger.info(f"Report written to {report_path}")
    return report_path
