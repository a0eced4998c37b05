import logging

import pytest

from app.analysis_service import analysis_service
from app.errors import ArchiveError
from app.models import BenchmarkKind, ExperimentConfig
from app.report import AnalysisBundle
from app.stats import RankingMethod
from tests.factories import benchmark_entry, fuzzer_entry, make_archive, make_config


def _full_archive(config: ExperimentConfig):
    finals = {
        ("afl", "zlib"): [100, 100, 100],
        ("libfuzzer", "zlib"): [50, 50, 50],
        ("afl", "sqlite"): [5, 5, 5],
        ("libfuzzer", "sqlite"): [5, 5, 5],
    }
    return make_archive(config, finals, {("afl", "sqlite", 1): 30, ("afl", "sqlite", 2): 60})


class TestAnalyze:
    """End-to-end analysis of an archive."""

    def test_scores_and_rankings(self, config: ExperimentConfig):
        """Coverage and bug aggregates, rankings and time to bug from one archive."""
        bundle = analysis_service.analyze(config, _full_archive(config))

        assert bundle.coverage_aggregate == {"afl": 100.0, "libfuzzer": 50.0}
        assert bundle.bug_aggregate == {"afl": 100.0, "libfuzzer": 0.0}
        assert bundle.bugs_found == {"afl": 1.0, "libfuzzer": 0.0}
        assert len(bundle.rankings) == 4
        average = bundle.ranking(BenchmarkKind.COVERAGE, RankingMethod.AVERAGE_RANK)
        assert [e.fuzzer for e in average.entries] == ["afl", "libfuzzer"]
        assert bundle.time_to_bug.overall == {"afl": 45.0}
        assert bundle.warnings == ()

    def test_pairwise_count_and_order(self):
        """One comparison per unordered fuzzer pair and benchmark, names in sorted order."""
        config = make_config(
            fuzzers=[fuzzer_entry("libfuzzer"), fuzzer_entry("afl"), fuzzer_entry("honggfuzz")],
        )
        finals = {(f, b): [10, 20, 30] for f in config.fuzzer_ids for b in config.benchmark_ids}

        bundle = analysis_service.analyze(config, make_archive(config, finals))

        assert len(bundle.pairwise) == 3 * 2
        assert all(p.fuzzer_a < p.fuzzer_b for p in bundle.pairwise)
        assert all(p.a12 == 0.5 for p in bundle.pairwise)

    def test_pairwise_uses_trial_values(self, config: ExperimentConfig):
        """The U statistic and A12 come from the per-trial final coverage values."""
        bundle = analysis_service.analyze(config, _full_archive(config))

        [zlib] = [p for p in bundle.pairwise if p.benchmark == "zlib"]
        assert (zlib.fuzzer_a, zlib.fuzzer_b, zlib.a12, zlib.u_statistic) == ("afl", "libfuzzer", 1.0, 9.0)

    def test_only_coverage(self, config: ExperimentConfig):
        """Restricting to coverage leaves every bug section empty."""
        bundle = analysis_service.analyze(config, _full_archive(config), metrics={BenchmarkKind.COVERAGE})

        assert bundle.bug.is_empty
        assert bundle.bug_aggregate == {}
        assert bundle.time_to_bug is None
        assert bundle.ranking(BenchmarkKind.BUG, RankingMethod.AVERAGE_RANK) is None
        assert {p.benchmark for p in bundle.pairwise} == {"zlib"}
        assert "sqlite" not in bundle.discrimination

    def test_fingerprint_mismatch(self, config: ExperimentConfig):
        """An archive recorded under another config is refused."""
        archive = _full_archive(make_config(rng_seed=99))

        with pytest.raises(ArchiveError):
            analysis_service.analyze(config, archive)

    def test_alpha_shrinks_critical_difference(self, config: ExperimentConfig):
        """A looser alpha gives a smaller critical difference."""
        archive = _full_archive(config)

        strict = analysis_service.analyze(config, archive, alpha=0.05)
        loose = analysis_service.analyze(config, archive, alpha=0.1)

        assert loose.critical_difference(BenchmarkKind.COVERAGE).cd_value < strict.critical_difference(
            BenchmarkKind.COVERAGE
        ).cd_value

    def test_visibility_aggregates(self):
        """Public and private benchmarks are also aggregated separately."""
        config = make_config(
            benchmarks=[benchmark_entry("zlib"), benchmark_entry("png", visibility="private")],
        )
        finals = {
            ("afl", "zlib"): [100, 100, 100],
            ("libfuzzer", "zlib"): [50, 50, 50],
            ("afl", "png"): [20, 20, 20],
            ("libfuzzer", "png"): [40, 40, 40],
        }

        bundle = analysis_service.analyze(config, make_archive(config, finals))

        assert bundle.coverage_aggregate == {"afl": 75.0, "libfuzzer": 75.0}
        assert bundle.coverage_aggregate_by_visibility == {
            "public": {"afl": 100.0, "libfuzzer": 50.0},
            "private": {"afl": 50.0, "libfuzzer": 100.0},
        }

    def test_bundle_json_round_trip(self, config: ExperimentConfig):
        """The bundle survives serialization unchanged."""
        bundle = analysis_service.analyze(config, _full_archive(config))

        assert AnalysisBundle.from_json(bundle.to_json()) == bundle


class TestWarnings:
    """Conditions surfaced in the report instead of failing the analysis."""

    def test_absent_trials(self, config: ExperimentConfig):
        """Missing trials are named with their count."""
        finals = {
            ("afl", "zlib"): [100, 100],
            ("libfuzzer", "zlib"): [50, 50, 50],
            ("afl", "sqlite"): [5, 5, 5],
            ("libfuzzer", "sqlite"): [5, 5, 5],
        }

        bundle = analysis_service.analyze(config, make_archive(config, finals, {("afl", "sqlite", 1): 30}))

        assert "afl on 'zlib': 1 of 3 trials absent, scored as 0" in bundle.warnings

    def test_crash_on_coverage_benchmark(self, config: ExperimentConfig):
        """A crash on a coverage benchmark is counted and warned about but not scored."""
        finals = {(f, b): [10, 10, 10] for f in config.fuzzer_ids for b in config.benchmark_ids}

        bundle = analysis_service.analyze(config, make_archive(config, finals, {("afl", "zlib", 2): 15}))

        assert "afl crashed coverage benchmark 'zlib' in 1 trial(s); not scored" in bundle.warnings
        assert bundle.crash_counts["zlib"] == {"afl": 1, "libfuzzer": 0}

    def test_unfound_bug_and_degenerate_coverage(self, config: ExperimentConfig):
        """All-zero coverage and an unfound bug each produce a warning."""
        finals = {(f, b): [0, 0, 0] for f in config.fuzzer_ids for b in config.benchmark_ids}

        bundle = analysis_service.analyze(config, make_archive(config, finals))

        assert "coverage benchmark 'zlib' is degenerate: no trial covered any line" in bundle.warnings
        assert "no fuzzer found the bug in bug benchmark 'sqlite'" in bundle.warnings

    def test_benchmark_without_trials(self, config: ExperimentConfig, caplog: pytest.LogCaptureFixture):
        """A filtered run leaves some benchmarks out; they are reported and skipped."""
        caplog.set_level(logging.WARNING)
        finals = {("afl", "zlib"): [10, 10, 10], ("libfuzzer", "zlib"): [5, 5, 5]}

        bundle = analysis_service.analyze(config, make_archive(config, finals))

        assert bundle.warnings == ("benchmark 'sqlite' has no trials in the archive and was not analyzed",)
        assert bundle.bug.is_empty
        assert "was not analyzed" in caplog.text
