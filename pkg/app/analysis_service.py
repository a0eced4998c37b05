import logging
from itertools import combinations
from typing import Collection, Dict, List, Optional

from app.errors import ArchiveError
from app.models import BenchmarkKind, ExperimentConfig, TrialArchive, Visibility, config_fingerprint
from app.report import AnalysisBundle, BenchmarkInfo, ExperimentSummary
from app.scoring import (
    TrialGroups,
    aggregate_scores,
    bug_indicator,
    bug_score_table,
    bugs_found,
    coverage_score_table,
    crash_counts,
    final_coverage,
    fuzzer_profiles,
    group_trials,
    median_coverage,
    time_to_bug_table,
)
from app.stats import (
    PairwiseComparison,
    average_rank_ranking,
    benchmark_discrimination,
    critical_difference,
    discriminating_bug_benchmarks,
    mann_whitney_u,
    profile_similarity,
    relative_to_best_ranking,
    similarity_matrix,
    time_to_bug_similarity,
    vargha_delaney_a12,
)

logger = logging.getLogger(__name__)

ALL_METRICS = frozenset({BenchmarkKind.COVERAGE, BenchmarkKind.BUG})


def _trial_values(groups: TrialGroups, fuzzer: str, benchmark: str, kind: BenchmarkKind, trials: int) -> List[float]:
    """Per-trial measurements compared pairwise; absent trials count as 0."""
    own = groups.get((fuzzer, benchmark), [])
    match kind:
        case BenchmarkKind.COVERAGE:
            values = [float(final_coverage(t)) for t in own]
        case BenchmarkKind.BUG:
            values = [float(bug_indicator(t)) for t in own]
    return values + [0.0] * (trials - len(values))


class AnalysisService:
    """Turns a validated archive into an AnalysisBundle."""

    def pairwise_comparisons(
        self, archive: TrialArchive, config: ExperimentConfig, benchmark_ids: Collection[str]
    ) -> List[PairwiseComparison]:
        groups = group_trials(archive)
        comparisons = []
        for benchmark in config.benchmarks:
            if benchmark.id not in benchmark_ids:
                continue
            for a, b in combinations(sorted(config.fuzzer_ids), 2):
                x = _trial_values(groups, a, benchmark.id, benchmark.kind, config.trials)
                y = _trial_values(groups, b, benchmark.id, benchmark.kind, config.trials)
                u, p = mann_whitney_u(x, y)
                comparisons.append(
                    PairwiseComparison(
                        fuzzer_a=a,
                        fuzzer_b=b,
                        benchmark=benchmark.id,
                        u_statistic=u,
                        p_value=p,
                        a12=vargha_delaney_a12(x, y),
                    )
                )
        return comparisons

    def _warnings(self, archive: TrialArchive, config: ExperimentConfig, analyzed: List[str]) -> List[str]:
        warnings = []
        groups = group_trials(archive)
        for benchmark in config.benchmarks:
            if benchmark.id not in analyzed:
                warnings.append(f"benchmark '{benchmark.id}' has no trials in the archive and was not analyzed")
                continue
            for fuzzer in config.fuzzer_ids:
                trials = groups.get((fuzzer, benchmark.id), [])
                missing = config.trials - len(trials)
                if missing:
                    warnings.append(
                        f"{fuzzer} on '{benchmark.id}': {missing} of {config.trials} trials absent, scored as 0"
                    )
                if benchmark.kind == BenchmarkKind.COVERAGE:
                    crashed = sum(1 for t in trials if t.first_crash_t_s is not None)
                    if crashed:
                        warnings.append(
                            f"{fuzzer} crashed coverage benchmark '{benchmark.id}' in {crashed} trial(s); not scored"
                        )
        return warnings

    def analyze(
        self,
        config: ExperimentConfig,
        archive: TrialArchive,
        alpha: float = 0.05,
        metrics: Optional[Collection[BenchmarkKind]] = None,
    ) -> AnalysisBundle:
        """Scores, rankings, significance tests, similarity and discrimination for one experiment."""
        fingerprint = config_fingerprint(config)
        if archive.config_fingerprint != fingerprint:
            raise ArchiveError(["archive was recorded under a different config fingerprint"])
        metrics = ALL_METRICS if metrics is None else frozenset(metrics)

        present = {t.benchmark_id for t in archive.trials}
        analyzed = [b.id for b in config.benchmarks if b.id in present and b.kind in metrics]
        # Scores are computed over the analyzed benchmarks only; the fingerprint still names the full config.
        scoped = config.model_copy(update={"benchmarks": tuple(b for b in config.benchmarks if b.id in analyzed)})

        coverage = coverage_score_table(archive, scoped)
        bug = bug_score_table(archive, scoped)
        warnings = self._warnings(archive, config, [b.id for b in config.benchmarks if b.id in present])
        warnings += [f"coverage benchmark '{b}' is degenerate: no trial covered any line" for b in coverage.degenerate]
        warnings += [f"no fuzzer found the bug in bug benchmark '{b}'" for b in bug.degenerate]

        rankings = []
        cds = []
        for table in (coverage, bug):
            if table.is_empty:
                continue
            rankings += [average_rank_ranking(table), relative_to_best_ranking(table)]
            cd = critical_difference(table, alpha)
            if cd is not None:
                cds.append(cd)

        by_visibility: Dict[str, Dict[str, float]] = {}
        if not coverage.is_empty:
            for visibility in Visibility:
                ids = [b.id for b in scoped.benchmarks if b.visibility == visibility]
                subset = coverage.subset(ids)
                if not subset.is_empty:
                    by_visibility[str(visibility)] = aggregate_scores(subset)

        groups = group_trials(archive)
        raw_profiles = {
            f: [median_coverage(groups.get((f, b), []), config.trials) for b in coverage.benchmarks]
            for f in config.fuzzer_ids
        }
        ttb = time_to_bug_table(archive, scoped) if not bug.is_empty else None
        discrimination = {**benchmark_discrimination(coverage), **benchmark_discrimination(bug)}

        bundle = AnalysisBundle(
            config_fingerprint=fingerprint,
            alpha=alpha,
            experiment=ExperimentSummary(
                name=config.name,
                trials=config.trials,
                duration_s=config.duration_s,
                snapshot_interval_s=config.snapshot_interval_s,
                fuzzers=tuple(config.fuzzer_ids),
                benchmarks=tuple(
                    BenchmarkInfo(id=b.id, kind=b.kind, visibility=b.visibility) for b in config.benchmarks
                ),
            ),
            coverage=coverage,
            bug=bug,
            coverage_aggregate=aggregate_scores(coverage) if not coverage.is_empty else {},
            coverage_aggregate_by_visibility=by_visibility,
            bug_aggregate=aggregate_scores(bug) if not bug.is_empty else {},
            bugs_found={f: bugs_found(bug, f) for f in bug.fuzzers} if not bug.is_empty else {},
            fuzzer_profiles=fuzzer_profiles(coverage) if not coverage.is_empty else {},
            rankings=tuple(rankings),
            pairwise=tuple(self.pairwise_comparisons(archive, config, analyzed)),
            critical_differences=tuple(cds),
            similarity=similarity_matrix(coverage) if not coverage.is_empty else {},
            raw_similarity=profile_similarity(raw_profiles) if not coverage.is_empty else {},
            time_to_bug_similarity=(
                time_to_bug_similarity(ttb, bug.benchmarks, float(config.duration_s)) if ttb is not None else {}
            ),
            discrimination={b: discrimination[b] for b in analyzed},
            discriminating_bug_benchmarks=tuple(discriminating_bug_benchmarks(bug)),
            time_to_bug=ttb,
            crash_counts={b: counts for b, counts in crash_counts(archive, config).items() if b in analyzed},
            warnings=tuple(warnings),
        )
        for warning in warnings:
            logger.warning(warning)
        logger.info(
            f"Analyzed {len(coverage.benchmarks)} coverage and {len(bug.benchmarks)} bug benchmarks "
            f"for {len(config.fuzzers)} fuzzers"
        )
        return bundle


# Global service instance
analysis_service = AnalysisService()
