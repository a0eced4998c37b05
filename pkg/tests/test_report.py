from pathlib import Path

from app.analysis_service import analysis_service
from app.models import BenchmarkKind, ExperimentConfig
from app.report import TABLE_FILES, AnalysisBundle, bug_leaderboard, emit_tables, render_report, write_report
from app.stats import CriticalDifference
from app.svg import growth_legend_order, plot_coverage_growth, plot_critical_difference, plot_similarity
from tests.factories import benchmark_entry, fuzzer_entry, make_archive, make_config


def _archive(config: ExperimentConfig):
    finals = {
        ("afl", "zlib"): [100, 100, 100],
        ("libfuzzer", "zlib"): [50, 50, 50],
        ("afl", "sqlite"): [5, 5, 5],
        ("libfuzzer", "sqlite"): [5, 5, 5],
    }
    return make_archive(config, finals, {("afl", "sqlite", 1): 30, ("afl", "sqlite", 2): 60})


def _bundle(config: ExperimentConfig) -> AnalysisBundle:
    return analysis_service.analyze(config, _archive(config))


class TestRenderReport:
    """report.md content."""

    def test_sections_in_order(self, config: ExperimentConfig):
        """Sections appear in a fixed order, benchmarks split by visibility."""
        text = render_report(_bundle(config))

        headings = [line for line in text.splitlines() if line.startswith("## ")]
        assert headings == [
            "## Coverage ranking",
            "## Bug ranking",
            "## Benchmarks",
            "## Coverage similarity",
            "## Benchmark discrimination",
            "## Warnings",
        ]
        assert "### Public benchmarks" in text
        assert "### Private benchmarks" in text
        assert text.endswith("None.\n")

    def test_two_fuzzers_two_ranking_rows(self, config: ExperimentConfig):
        """Each ranking table has one row per fuzzer."""
        text = render_report(_bundle(config))

        start = text.index("### Average rank (lower is better)")
        rows = [line for line in text[start:].splitlines()[4:] if line.startswith("| ")]
        assert rows[:2] == ["| 1 | afl | 1.00 |", "| 2 | libfuzzer | 2.00 |"]

    def test_pairwise_matrix_is_antisymmetric(self, config: ExperimentConfig):
        """The reverse direction of a pair shows 1 - A12."""
        text = render_report(_bundle(config))

        assert "| afl | - | 1.00 / " in text
        assert "| libfuzzer | 0.00 / " in text

    def test_half_of_trials_shown_as_half(self):
        """A bug found in 2 of 4 trials has median indicator 0.5."""
        config = make_config(trials=4)
        finals = {(f, b): [5, 5, 5, 5] for f in config.fuzzer_ids for b in config.benchmark_ids}
        archive = make_archive(config, finals, {("afl", "sqlite", 1): 30, ("afl", "sqlite", 2): 30})

        text = render_report(analysis_service.analyze(config, archive))

        assert "| afl | 0.5 | 2 | 30.00 |" in text

    def test_bugs_found_out_of_total(self):
        """Bug counts are shown out of the number of bug benchmarks."""
        config = make_config(
            fuzzers=[fuzzer_entry("afl")],
            benchmarks=[benchmark_entry(f"bug{i}", kind="bug") for i in range(15)],
        )
        finals = {("afl", f"bug{i}"): [10, 10, 10] for i in range(15)}
        crashes = {("afl", f"bug{i}", t): 30 for i in range(8) for t in (1, 2)}

        text = render_report(analysis_service.analyze(config, make_archive(config, finals, crashes)))

        assert "| 1 | afl | 53.33 | 8 of 15 bugs | 30.00 |" in text

    def test_only_coverage_has_empty_bug_section(self, config: ExperimentConfig):
        """Restricting to coverage leaves a note instead of bug tables."""
        bundle = analysis_service.analyze(config, _archive(config), metrics={BenchmarkKind.COVERAGE})

        text = render_report(bundle)

        assert "No bug benchmarks were analyzed." in text
        assert "### Private benchmarks" not in text

    def test_raw_similarity_variant(self, config: ExperimentConfig):
        """The raw variant says which profile it compares."""
        text = render_report(_bundle(config), similarity="raw")

        assert "Cosine similarity of per-benchmark median final coverage." in text

    def test_rendering_is_deterministic(self, config: ExperimentConfig):
        """Reloading the bundle from JSON renders the same bytes."""
        bundle = _bundle(config)

        assert render_report(bundle) == render_report(AnalysisBundle.from_json(bundle.to_json()))


class TestBugLeaderboard:
    """Fuzzer order for the bug ranking."""

    def test_ties_broken_by_time_to_bug(self):
        """Equal bug scores rank the faster fuzzer first."""
        config = make_config(benchmarks=[benchmark_entry("png", kind="bug")])
        finals = {(f, "png"): [5, 5, 5] for f in config.fuzzer_ids}
        crashes = {("afl", "png", t): 90 for t in (1, 2, 3)} | {("libfuzzer", "png", t): 15 for t in (1, 2, 3)}

        bundle = analysis_service.analyze(config, make_archive(config, finals, crashes))

        assert bug_leaderboard(bundle) == ["libfuzzer", "afl"]


class TestEmitTables:
    """CSV exports."""

    def test_every_table_emitted(self, config: ExperimentConfig):
        """Every CSV table is produced in a fixed order."""
        tables = emit_tables(_bundle(config))

        assert tuple(tables) == TABLE_FILES
        assert tables["coverage_scores.csv"] == "benchmark,fuzzer,score\nzlib,afl,100.0\nzlib,libfuzzer,50.0\n"
        assert len(tables["rankings.csv"].splitlines()) == 1 + 4 * 2
        assert len(tables["pairwise.csv"].splitlines()) == 1 + 2
        assert tables["time_to_bug.csv"] == "benchmark,fuzzer,mean_time_to_bug_s\nsqlite,afl,45.0\n"

    def test_bug_scores_with_crash_counts(self, config: ExperimentConfig):
        """Bug scores carry the number of crashing trials."""
        tables = emit_tables(_bundle(config))

        assert tables["bug_scores.csv"].splitlines()[1:] == ["sqlite,afl,1.0,2", "sqlite,libfuzzer,0.0,0"]


class TestPlots:
    """SVG output."""

    def test_critical_difference_groups(self):
        """Two cliques of two fuzzers give two group bars."""
        cd = CriticalDifference(
            metric=BenchmarkKind.COVERAGE,
            alpha=0.05,
            k=4,
            n_benchmarks=20,
            friedman_statistic=30.0,
            friedman_p=0.0001,
            cd_value=0.8,
            average_ranks={"a": 1.2, "b": 1.5, "c": 3.0, "d": 3.3},
        )

        svg = plot_critical_difference(cd)

        assert svg.count('class="cd-group"') == 2
        assert 'data-members="a,b"' in svg
        assert 'data-members="c,d"' in svg
        assert ">CD = 0.80<" in svg
        assert svg.count('class="cd-label"') == 4

    def test_critical_difference_ruler_stays_on_axis(self):
        """A CD wider than the rank axis is drawn to the axis end; the label keeps the exact value."""
        cd = CriticalDifference(
            metric=BenchmarkKind.COVERAGE,
            alpha=0.05,
            k=2,
            n_benchmarks=1,
            friedman_statistic=1.0,
            friedman_p=0.3173,
            cd_value=1.96,
            average_ranks={"a": 1.0, "b": 2.0},
        )

        svg = plot_critical_difference(cd)

        assert 'class="cd-ruler" x1="120.00" y1="70.00" x2="680.00" y2="70.00"' in svg
        assert ">CD = 1.96<" in svg

    def test_growth_legend_sorted_by_final_median(self):
        """The legend is ordered by final median coverage, ties by name."""
        series = {"b": [(10, 5.0)], "a": [(10, 5.0)], "c": [(10, 2.0), (20, 9.0)]}

        svg = plot_coverage_growth("zlib", series)

        assert growth_legend_order(series) == ["c", "a", "b"]
        assert svg.index(">c (9)<") < svg.index(">a (5)<") < svg.index(">b (5)<")
        assert svg.count('class="growth"') == 3

    def test_empty_growth_is_placeholder(self):
        """No series gives a placeholder image."""
        svg = plot_coverage_growth("zlib", {})

        assert 'class="empty"' in svg
        assert ">no data<" in svg

    def test_similarity_unknown_cells(self):
        """Undefined similarities are drawn as n/a."""
        svg = plot_similarity({"a": {"a": 1.0, "b": None}, "b": {"a": None, "b": None}})

        assert svg.count('class="cell"') == 4
        assert svg.count(">n/a<") == 3


class TestWriteReport:
    """The report directory on disk."""

    def test_tree_written(self, config: ExperimentConfig, tmp_path: Path):
        """report.md, one CSV per table and one SVG per plot."""
        archive = _archive(config)
        bundle = analysis_service.analyze(config, archive)

        report_md = write_report(bundle, config, archive, tmp_path / "report")

        assert report_md == tmp_path / "report" / "report.md"
        assert sorted(p.name for p in (tmp_path / "report" / "data").iterdir()) == sorted(TABLE_FILES)
        assert sorted(p.name for p in (tmp_path / "report" / "plots").iterdir()) == [
            "coverage_sqlite.svg",
            "coverage_zlib.svg",
            "critical_difference_bug.svg",
            "critical_difference_coverage.svg",
            "similarity.svg",
        ]

    def test_rewrite_is_byte_identical(self, config: ExperimentConfig, tmp_path: Path):
        """Re-running replaces the previous tree with identical files."""
        archive = _archive(config)
        bundle = analysis_service.analyze(config, archive)
        report_dir = tmp_path / "report"

        write_report(bundle, config, archive, report_dir)
        first = {p.relative_to(report_dir): p.read_bytes() for p in report_dir.rglob("*") if p.is_file()}
        (report_dir / "stale.txt").write_text("old")
        write_report(bundle, config, archive, report_dir)
        second = {p.relative_to(report_dir): p.read_bytes() for p in report_dir.rglob("*") if p.is_file()}

        assert first == second
