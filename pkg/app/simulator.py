"""Synthetic fuzzing campaigns with saturating coverage growth, for desk-scale experiments."""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, StrictInt, ValidationError

from app.errors import SimulationError
from app.models import (
    BenchmarkKind,
    BenchmarkSpec,
    CoverageSample,
    ExperimentConfig,
    TrialArchive,
    TrialRecord,
    config_fingerprint,
)
from app.runner import derive_trial_seed

logger = logging.getLogger(__name__)


class SimulatorParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    max_coverage: StrictInt = Field(ge=1, description="Coverage asymptote in lines")
    rate: float = Field(ge=0, description="Growth rate per second")
    noise_sd: float = Field(ge=0, description="Standard deviation of gaussian probe noise")
    bug_hazard: float = Field(ge=0, le=1, description="Probability of hitting the bug in one poll interval")


def load_simulator_params(raw: Any) -> Dict[str, SimulatorParams]:
    if not isinstance(raw, Mapping):
        raise SimulationError("params: expected a JSON object mapping fuzzer id to parameters")
    params: Dict[str, SimulatorParams] = {}
    problems: List[str] = []
    for fuzzer_id, values in raw.items():
        try:
            params[fuzzer_id] = SimulatorParams.model_validate(values)
        except ValidationError as e:
            logger.debug(f"Invalid simulator params for '{fuzzer_id}': {e}")
            problems.extend(f"params.{fuzzer_id}.{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors())
    if problems:
        raise SimulationError("; ".join(problems))
    return params


def read_params_file(path: Path) -> Dict[str, SimulatorParams]:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        logger.error(f"Cannot read simulator params {path}: {e}")
        raise SimulationError(f"{path}: cannot read file: {e.strerror or e}") from e
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        logger.error(f"Simulator params {path} are not valid JSON: {e}")
        raise SimulationError(f"{path}: invalid JSON: {e}") from e
    return load_simulator_params(raw)


def simulate_trial(
    config: ExperimentConfig, benchmark: BenchmarkSpec, fuzzer_id: str, trial_index: int, params: SimulatorParams
) -> TrialRecord:
    rng = np.random.default_rng(derive_trial_seed(config.rng_seed, fuzzer_id, benchmark.id, trial_index))
    samples = []
    first_crash = None
    running_max = 0
    for tick in config.poll_ticks:
        expected = params.max_coverage * (1.0 - math.exp(-params.rate * tick))
        noise = float(rng.normal(0.0, params.noise_sd)) if params.noise_sd > 0 else 0.0
        running_max = max(running_max, int(round(expected + noise)), 0)
        samples.append(CoverageSample(t_s=tick, lines_covered=running_max))
        if benchmark.kind == BenchmarkKind.BUG and first_crash is None and rng.random() < params.bug_hazard:
            first_crash = tick
    return TrialRecord(
        fuzzer_id=fuzzer_id,
        benchmark_id=benchmark.id,
        trial_index=trial_index,
        samples=samples,
        first_crash_t_s=first_crash,
    )


def simulate_experiment(config: ExperimentConfig, params_per_fuzzer: Mapping[str, SimulatorParams]) -> TrialArchive:
    """Every configured trial, fully determined by (config, rng_seed, params)."""
    missing = [f for f in config.fuzzer_ids if f not in params_per_fuzzer]
    if missing:
        raise SimulationError(f"missing simulator params for fuzzer(s): {', '.join(missing)}")
    unused = sorted(set(params_per_fuzzer) - set(config.fuzzer_ids))
    if unused:
        logger.warning(f"Ignoring simulator params for unknown fuzzer(s): {', '.join(unused)}")

    records = [
        simulate_trial(config, benchmark, fuzzer_id, trial, params_per_fuzzer[fuzzer_id])
        for fuzzer_id in config.fuzzer_ids
        for benchmark in config.benchmarks
        for trial in range(1, config.trials + 1)
    ]
    logger.info(f"Simulated {len(records)} trials")
    return TrialArchive.from_records(config_fingerprint(config), records)
