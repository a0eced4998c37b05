from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import pytest

from app.errors import SelectionError, TrialAborted
from app.models import ExperimentConfig, TrialRecord, Visibility
from app.runner import (
    AbsentTrial,
    derive_trial_seed,
    plan_trials,
    run_experiment,
    run_plans,
    run_trial,
    select_benchmarks,
)
from tests.factories import PYTHON, make_config, mock_benchmark_entry, mock_fuzzer_entry


def _short_config(
    fuzzer_args: Sequence[str] = (), benchmark: Optional[Dict[str, Any]] = None, **overrides: Any
) -> ExperimentConfig:
    values: Dict[str, Any] = {
        "trials": 1,
        "duration_s": 4,
        "snapshot_interval_s": 1,
        "worker_limit": 4,
        "fuzzers": [mock_fuzzer_entry("mock", *fuzzer_args)],
        "benchmarks": [benchmark or mock_benchmark_entry("zlib")],
    }
    values.update(overrides)
    return make_config(**values)


async def _single_outcome(config: ExperimentConfig, tmp_path: Path):
    plans = plan_trials(config, config.benchmark_ids, tmp_path / "experiment")
    [outcome] = await run_plans(plans, config)
    return outcome


class TestSelectionAndPlanning:
    """Benchmark filters, trial plans and per-trial seeds."""

    def test_select_all(self, config: ExperimentConfig):
        """No filter keeps config order."""
        assert select_benchmarks(config) == ["zlib", "sqlite"]

    def test_select_by_visibility(self, config: ExperimentConfig):
        """Only benchmarks of the requested visibility."""
        assert select_benchmarks(config, Visibility.PRIVATE) == ["sqlite"]

    def test_select_by_id(self, config: ExperimentConfig):
        """Only the named benchmarks."""
        assert select_benchmarks(config, benchmark_ids=["zlib"]) == ["zlib"]

    def test_empty_selection_rejected(self, config: ExperimentConfig):
        """Filters that leave nothing to run are an error."""
        with pytest.raises(SelectionError):
            select_benchmarks(config, Visibility.PUBLIC, ["sqlite"])

    def test_plans_have_private_working_dirs(self, config: ExperimentConfig, experiment_dir: Path):
        """One plan per fuzzer, benchmark and trial, never sharing a directory."""
        plans = plan_trials(config, config.benchmark_ids, experiment_dir)

        assert len(plans) == 2 * 2 * 3
        assert len({plan.working_dir for plan in plans}) == len(plans)
        assert plans[0].working_dir == experiment_dir / "trials" / "afl" / "zlib" / "1"

    def test_trial_seed_is_stable_and_distinct(self):
        """Seeds depend on the identity of the trial, not on scheduling."""
        first = derive_trial_seed(7, "afl", "zlib", 1)

        assert first == derive_trial_seed(7, "afl", "zlib", 1)
        assert 0 <= first < 2**64
        assert len({derive_trial_seed(7, "afl", "zlib", t) for t in range(1, 101)}) == 100
        assert first != derive_trial_seed(8, "afl", "zlib", 1)


class TestRunTrial:
    """Single trials against the mock fuzzer."""

    async def test_snapshots_at_every_tick(self, tmp_path: Path):
        """A healthy fuzzer yields one non-decreasing sample per tick and no crash."""
        config = _short_config()
        [plan] = plan_trials(config, ["zlib"], tmp_path / "experiment")

        record = await run_trial(plan, config)

        assert [s.t_s for s in record.samples] == [1, 2, 3, 4]
        values = [s.lines_covered for s in record.samples]
        assert values == sorted(values)
        assert values[-1] > 0
        assert record.first_crash_t_s is None
        assert (plan.working_dir / "fuzzer.log").is_file()

    async def test_crash_detected_at_next_tick(self, tmp_path: Path):
        """A crash written at 1.5s is first seen by the poll at 2s."""
        config = _short_config(["--crash-at", "1.5"])
        [plan] = plan_trials(config, ["zlib"], tmp_path / "experiment")

        record = await run_trial(plan, config)

        assert record.first_crash_t_s == 2

    async def test_seed_corpus_copied(self, tmp_path: Path):
        """The seed corpus is copied into the trial so fuzzers cannot modify the original."""
        seeds = tmp_path / "seeds"
        seeds.mkdir()
        (seeds / "seed-1").write_bytes(b"seed")
        benchmark = mock_benchmark_entry("zlib")
        benchmark["seed_corpus_dir"] = str(seeds)
        config = _short_config(benchmark=benchmark, duration_s=1)
        [plan] = plan_trials(config, ["zlib"], tmp_path / "experiment")

        await run_trial(plan, config)

        assert (plan.working_dir / "seeds" / "seed-1").read_bytes() == b"seed"

    async def test_existing_working_dir_refused(self, tmp_path: Path):
        """A leftover trial directory is never reused."""
        config = _short_config(duration_s=1)
        [plan] = plan_trials(config, ["zlib"], tmp_path / "experiment")
        plan.working_dir.mkdir(parents=True)

        with pytest.raises(FileExistsError):
            await run_trial(plan, config)


class TestAbsentTrials:
    """Failures that leave a trial absent instead of stopping the experiment."""

    async def test_fuzzer_exits_before_first_snapshot(self, tmp_path: Path):
        """A fuzzer that dies immediately leaves the trial absent."""
        outcome = await _single_outcome(_short_config(["--exit-after", "0"]), tmp_path)

        assert outcome == AbsentTrial(
            fuzzer_id="mock", benchmark_id="zlib", trial_index=1, reason="exited before first snapshot"
        )

    async def test_probe_prints_garbage(self, tmp_path: Path):
        """Probe output that is not one integer aborts the trial."""
        benchmark = mock_benchmark_entry("zlib")
        benchmark["probe_command"] = [PYTHON, "-c", "import sys; sys.stdout.write('many lines')"]

        outcome = await _single_outcome(_short_config(benchmark=benchmark, duration_s=2), tmp_path)

        assert isinstance(outcome, AbsentTrial)
        assert "expected a single integer" in outcome.reason

    async def test_probe_fails(self, tmp_path: Path):
        """A failing probe aborts the trial with its exit status."""
        benchmark = mock_benchmark_entry("zlib")
        benchmark["probe_command"] = [PYTHON, "-c", "import sys; sys.exit(3)"]

        outcome = await _single_outcome(_short_config(benchmark=benchmark, duration_s=2), tmp_path)

        assert isinstance(outcome, AbsentTrial)
        assert outcome.reason.startswith("probe_command exited with status 3")

    async def test_missing_seed_corpus(self, tmp_path: Path):
        """A configured seed directory that does not exist aborts the trial."""
        benchmark = mock_benchmark_entry("zlib")
        benchmark["seed_corpus_dir"] = str(tmp_path / "nowhere")

        outcome = await _single_outcome(_short_config(benchmark=benchmark, duration_s=2), tmp_path)

        assert isinstance(outcome, AbsentTrial)
        assert outcome.reason == f"seed corpus directory '{tmp_path / 'nowhere'}' does not exist"

    async def test_fuzzer_binary_missing(self, tmp_path: Path):
        """A fuzzer command that cannot be started aborts the trial."""
        fuzzer = {"id": "ghost", "run_command": [str(tmp_path / "no-such-fuzzer")]}
        config = _short_config(fuzzers=[fuzzer], duration_s=1)

        outcome = await _single_outcome(config, tmp_path)

        assert isinstance(outcome, AbsentTrial)
        assert outcome.reason.startswith("fuzzer failed to start")

    def test_trial_aborted_carries_reason(self):
        """The abort reason is kept for the absent-trial log."""
        assert TrialAborted("probe_command timed out").reason == "probe_command timed out"


class TestRunExperiment:
    """Whole experiments written to disk."""

    def test_files_written(self, experiment_dir: Path):
        """A short experiment writes the archive files and an empty absent-trial log."""
        config = _short_config(trials=2, duration_s=2)

        archive = run_experiment(config, experiment_dir)

        assert len(archive.trials) == 2
        assert (experiment_dir / "config.json").is_file()
        assert len((experiment_dir / "snapshots.csv").read_text().splitlines()) == 1 + 2 * 2
        assert (experiment_dir / "crashes.csv").read_text() == "fuzzer,benchmark,trial,crash_time_s\n"
        assert (experiment_dir / "absent_trials.csv").read_text() == "fuzzer,benchmark,trial,reason\n"

    def test_absent_trials_logged(self, experiment_dir: Path):
        """Absent trials are written with their reason and left out of the archive."""
        config = _short_config(["--exit-after", "0"], duration_s=2)

        archive = run_experiment(config, experiment_dir)

        assert archive.trials == ()
        assert (experiment_dir / "absent_trials.csv").read_text().splitlines()[1:] == [
            "mock,zlib,1,exited before first snapshot"
        ]

    def test_visibility_filter_runs_only_public_benchmarks(self, experiment_dir: Path):
        """With two public benchmarks and one private, only public trials are executed and archived."""
        config = _short_config(
            trials=2,
            duration_s=2,
            benchmarks=[
                mock_benchmark_entry("zlib"),
                mock_benchmark_entry("png"),
                mock_benchmark_entry("sec", visibility="private"),
            ],
        )

        archive = run_experiment(config, experiment_dir, Visibility.PUBLIC)

        assert len(archive.trials) == 2 * config.trials
        assert {trial.benchmark_id for trial in archive.trials} == {"png", "zlib"}
        rows = (experiment_dir / "snapshots.csv").read_text().splitlines()[1:]
        assert {row.split(",")[1] for row in rows} == {"png", "zlib"}
        assert len(rows) == 2 * config.trials * 2
        assert not (experiment_dir / "trials" / "mock" / "sec").exists()

    @pytest.mark.slow
    def test_two_by_two_campaign(self, experiment_dir: Path):
        """Two fuzzers on two benchmarks, three trials each; the crashing fuzzer is caught at the 12s poll."""
        config = make_config(
            trials=3,
            duration_s=30,
            snapshot_interval_s=3,
            worker_limit=12,
            fuzzers=[mock_fuzzer_entry("steady"), mock_fuzzer_entry("crashy", "--crash-at", "10")],
            benchmarks=[mock_benchmark_entry("zlib"), mock_benchmark_entry("png", kind="bug")],
        )

        archive = run_experiment(config, experiment_dir)

        assert len(archive.trials) == 12
        assert all(isinstance(trial, TrialRecord) and len(trial.samples) == 10 for trial in archive.trials)
        for trial in archive.trials:
            expected = 12 if trial.fuzzer_id == "crashy" else None
            assert trial.first_crash_t_s == expected
