import asyncio
import hashlib
import logging
import re
import shutil
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import psutil
from pydantic import BaseModel, ConfigDict

from app.errors import SelectionError, TrialAborted
from app.experiment_service import experiment_service
from app.models import (
    BenchmarkSpec,
    CoverageSample,
    ExperimentConfig,
    TrialArchive,
    TrialRecord,
    Visibility,
    bind_template,
    config_fingerprint,
)

logger = logging.getLogger(__name__)

TERMINATE_GRACE_S = 3.0
_INTEGER_OUTPUT = re.compile(r"^\s*(0|[1-9][0-9]*)\s*$")


class TrialPlan(BaseModel):
    """Where and with which seed one trial runs; working_dir is never shared between trials."""

    model_config = ConfigDict(frozen=True)

    fuzzer_id: str
    benchmark_id: str
    trial_index: int
    working_dir: Path
    rng_stream_seed: int


class AbsentTrial(BaseModel):
    model_config = ConfigDict(frozen=True)

    fuzzer_id: str
    benchmark_id: str
    trial_index: int
    reason: str


TrialOutcome = Union[TrialRecord, AbsentTrial]


def derive_trial_seed(rng_seed: int, fuzzer_id: str, benchmark_id: str, trial_index: int) -> int:
    """64-bit per-trial seed; independent of scheduling order."""
    digest = hashlib.sha256(f"{rng_seed}:{fuzzer_id}:{benchmark_id}:{trial_index}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def select_benchmarks(
    config: ExperimentConfig, visibility: Optional[Visibility] = None, benchmark_ids: Optional[Sequence[str]] = None
) -> List[str]:
    selected = [
        b.id
        for b in config.benchmarks
        if (visibility is None or b.visibility == visibility) and (not benchmark_ids or b.id in benchmark_ids)
    ]
    if not selected:
        raise SelectionError("the benchmark filter selected no benchmarks")
    return selected


def plan_trials(config: ExperimentConfig, benchmark_ids: Sequence[str], experiment_dir: Path) -> List[TrialPlan]:
    return [
        TrialPlan(
            fuzzer_id=fuzzer.id,
            benchmark_id=benchmark_id,
            trial_index=trial,
            working_dir=experiment_dir / "trials" / fuzzer.id / benchmark_id / str(trial),
            rng_stream_seed=derive_trial_seed(config.rng_seed, fuzzer.id, benchmark_id, trial),
        )
        for fuzzer in config.fuzzers
        for benchmark_id in benchmark_ids
        for trial in range(1, config.trials + 1)
    ]


def _prepare_working_dir(working_dir: Path, benchmark: BenchmarkSpec) -> Dict[str, str]:
    working_dir.mkdir(parents=True, exist_ok=False)
    corpus = working_dir / "corpus"
    output = working_dir / "output"
    seeds = working_dir / "seeds"
    corpus.mkdir()
    (output / "crashes").mkdir(parents=True)
    if benchmark.seed_corpus_dir is not None:
        source = Path(benchmark.seed_corpus_dir)
        if not source.is_dir():
            raise TrialAborted(f"seed corpus directory '{source}' does not exist")
        shutil.copytree(source, seeds)
    else:
        seeds.mkdir()
    return {
        "CORPUS_DIR": str(corpus.resolve()),
        "OUTPUT_DIR": str(output.resolve()),
        "SEED_DIR": str(seeds.resolve()),
    }


def _has_crash(output_dir: str) -> bool:
    crashes = Path(output_dir) / "crashes"
    try:
        return any(entry.is_file() for entry in crashes.iterdir())
    except FileNotFoundError:
        logger.debug(f"Crash directory {crashes} disappeared")
        return False


async def _probe(benchmark: BenchmarkSpec, bindings: Dict[str, str], timeout_s: float) -> int:
    argv = bind_template(benchmark.probe_command, bindings)
    try:
        process = await asyncio.create_subprocess_exec(
            *argv, stdout=asyncio.subprocess.PIPE, stderr=asyncio.subprocess.PIPE, env=bindings
        )
    except OSError as e:
        logger.error(f"Could not launch probe {argv[0]}: {e}")
        raise TrialAborted(f"probe_command failed to start: {e}") from e

    try:
        stdout, stderr = await asyncio.wait_for(process.communicate(), timeout_s)
    except TimeoutError as e:
        process.kill()
        await process.wait()
        logger.error(f"Probe for benchmark '{benchmark.id}' timed out after {timeout_s}s")
        raise TrialAborted("probe_command timed out") from e

    if process.returncode != 0:
        detail = stderr.decode("utf-8", errors="replace").strip()
        raise TrialAborted(f"probe_command exited with status {process.returncode}: {detail}")
    match = _INTEGER_OUTPUT.match(stdout.decode("utf-8", errors="replace"))
    if match is None:
        raise TrialAborted(f"probe_command printed {stdout[:40]!r}, expected a single integer")
    return int(match.group(1))


def _kill_tree(pid: int) -> None:
    try:
        parent = psutil.Process(pid)
        processes = parent.children(recursive=True) + [parent]
    except psutil.NoSuchProcess:
        logger.debug(f"Fuzzer process {pid} already gone")
        return
    for process in processes:
        try:
            process.terminate()
        except psutil.NoSuchProcess:
            logger.debug(f"Process {process.pid} exited before terminate")
    _, alive = psutil.wait_procs(processes, timeout=TERMINATE_GRACE_S)
    for process in alive:
        logger.warning(f"Process {process.pid} ignored SIGTERM; killing")
        try:
            process.kill()
        except psutil.NoSuchProcess:
            logger.debug(f"Process {process.pid} exited before kill")


async def _terminate(process: asyncio.subprocess.Process) -> None:
    if process.returncode is None:
        await asyncio.to_thread(_kill_tree, process.pid)
    await process.wait()


async def run_trial(plan: TrialPlan, config: ExperimentConfig) -> TrialRecord:
    """Run one fuzzer on one benchmark for the full duration, probing coverage and crashes every tick."""
    fuzzer = config.fuzzer(plan.fuzzer_id)
    benchmark = config.benchmark(plan.benchmark_id)
    bindings = _prepare_working_dir(plan.working_dir, benchmark)
    bindings["DURATION_S"] = str(config.duration_s)
    argv = bind_template(fuzzer.run_command, bindings) + bind_template(benchmark.target_command, bindings)
    environment = {**fuzzer.environment, **bindings}

    ticks = config.poll_ticks
    samples: List[CoverageSample] = []
    first_crash: Optional[int] = None
    running_max = 0

    with open(plan.working_dir / "fuzzer.log", "wb") as log:
        try:
            process = await asyncio.create_subprocess_exec(
                *argv,
                cwd=plan.working_dir,
                env=environment,
                stdin=asyncio.subprocess.DEVNULL,
                stdout=log,
                stderr=asyncio.subprocess.STDOUT,
                start_new_session=True,
            )
        except OSError as e:
            logger.error(f"Could not launch fuzzer '{fuzzer.id}': {e}")
            raise TrialAborted(f"fuzzer failed to start: {e}") from e

        loop = asyncio.get_running_loop()
        started = loop.time()
        try:
            for tick in ticks:
                await asyncio.sleep(max(0.0, started + tick - loop.time()))
                if not samples and process.returncode is not None:
                    raise TrialAborted("exited before first snapshot")

                lines = await _probe(benchmark, bindings, float(config.snapshot_interval_s))
                if lines < running_max:
                    logger.warning(
                        f"Probe regression {running_max} -> {lines} at {tick}s for "
                        f"{plan.fuzzer_id}/{plan.benchmark_id}/{plan.trial_index}; clamped"
                    )
                    lines = running_max
                running_max = lines
                samples.append(CoverageSample(t_s=tick, lines_covered=lines))

                if first_crash is None and _has_crash(bindings["OUTPUT_DIR"]):
                    first_crash = tick
            await asyncio.sleep(max(0.0, started + config.duration_s - loop.time()))
        finally:
            await _terminate(process)

    return TrialRecord(
        fuzzer_id=plan.fuzzer_id,
        benchmark_id=plan.benchmark_id,
        trial_index=plan.trial_index,
        samples=samples,
        first_crash_t_s=first_crash,
    )


async def _run_guarded(plan: TrialPlan, config: ExperimentConfig, slots: asyncio.Semaphore) -> TrialOutcome:
    async with slots:
        logger.info(f"Trial {plan.fuzzer_id}/{plan.benchmark_id}/{plan.trial_index} started")
        try:
            record = await run_trial(plan, config)
        except TrialAborted as e:
            logger.warning(f"Trial {plan.fuzzer_id}/{plan.benchmark_id}/{plan.trial_index} absent: {e.reason}")
            return AbsentTrial(
                fuzzer_id=plan.fuzzer_id, benchmark_id=plan.benchmark_id, trial_index=plan.trial_index, reason=e.reason
            )
        except OSError as e:
            logger.error(f"Trial {plan.fuzzer_id}/{plan.benchmark_id}/{plan.trial_index} infrastructure failure: {e}")
            return AbsentTrial(
                fuzzer_id=plan.fuzzer_id,
                benchmark_id=plan.benchmark_id,
                trial_index=plan.trial_index,
                reason=f"infrastructure failure: {e}",
            )
        logger.info(f"Trial {plan.fuzzer_id}/{plan.benchmark_id}/{plan.trial_index} finished")
        return record


async def run_plans(plans: Sequence[TrialPlan], config: ExperimentConfig) -> List[TrialOutcome]:
    slots = asyncio.Semaphore(config.worker_limit)
    return list(await asyncio.gather(*(_run_guarded(plan, config, slots) for plan in plans)))


def run_experiment(
    config: ExperimentConfig,
    experiment_dir: Path,
    visibility: Optional[Visibility] = None,
    benchmark_ids: Optional[Sequence[str]] = None,
) -> TrialArchive:
    """Run every selected trial, write the archive into experiment_dir and return it."""
    selected = select_benchmarks(config, visibility, benchmark_ids)
    experiment_service.create_experiment(experiment_dir, config)
    plans = plan_trials(config, selected, experiment_dir)
    logger.info(
        f"Running {len(plans)} trials ({len(config.fuzzers)} fuzzers x {len(selected)} benchmarks x "
        f"{config.trials} trials) with {config.worker_limit} workers"
    )

    outcomes = asyncio.run(run_plans(plans, config))
    records = [o for o in outcomes if isinstance(o, TrialRecord)]
    absent = [o for o in outcomes if isinstance(o, AbsentTrial)]
    archive = TrialArchive.from_records(config_fingerprint(config), records)

    experiment_service.save_archive(experiment_dir, archive)
    experiment_service.save_absent_trials(experiment_dir, absent)
    logger.info(f"Experiment finished: {len(records)} trials recorded, {len(absent)} absent")
    return archive
