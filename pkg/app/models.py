import hashlib
import json
import logging
import re
from enum import StrEnum
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, StrictInt, ValidationError, model_validator

from app.errors import ConfigValidationError

logger = logging.getLogger(__name__)

ID_PATTERN = r"^[a-z0-9_+-]+$"
PLACEHOLDERS = frozenset({"CORPUS_DIR", "OUTPUT_DIR", "DURATION_S", "SEED_DIR"})
_PLACEHOLDER_RE = re.compile(r"\{([^{}]*)\}")


class BenchmarkKind(StrEnum):
    COVERAGE = "coverage"
    BUG = "bug"


class Visibility(StrEnum):
    PUBLIC = "public"
    PRIVATE = "private"


# Experiment description (parsed from config.json)
class FuzzerSpec(BaseModel):
    """A fuzzer taking part in the experiment and how to launch it."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str = Field(pattern=ID_PATTERN, description="Unique short name")
    run_command: Tuple[str, ...] = Field(min_length=1, description="Command template with {PLACEHOLDER} slots")
    environment: Dict[str, str] = Field(default_factory=dict, description="Extra environment for the fuzzer")


class BenchmarkSpec(BaseModel):
    """A target program; bug benchmarks contain exactly one reproducible bug."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str = Field(pattern=ID_PATTERN, description="Unique short name")
    kind: BenchmarkKind
    visibility: Visibility
    target_command: Tuple[str, ...] = Field(min_length=1, description="Command template launching the target")
    probe_command: Tuple[str, ...] = Field(min_length=1, description="Prints covered-line count for CORPUS_DIR")
    seed_corpus_dir: Optional[str] = Field(default=None, description="Initial corpus shared by every fuzzer")
    notes: str = ""


class ExperimentConfig(BaseModel):
    """Declarative description of one experiment."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(min_length=1)
    trials: StrictInt = Field(default=20, ge=1)
    duration_s: StrictInt = Field(ge=1)
    snapshot_interval_s: StrictInt = Field(ge=1)
    worker_limit: StrictInt = Field(ge=1)
    rng_seed: StrictInt = Field(ge=0, lt=2**64)
    fuzzers: Tuple[FuzzerSpec, ...] = Field(min_length=1)
    benchmarks: Tuple[BenchmarkSpec, ...] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_cross_field(self) -> "ExperimentConfig":
        problems = cross_field_violations(self.model_dump(mode="json"))
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def fuzzer_ids(self) -> List[str]:
        return [fuzzer.id for fuzzer in self.fuzzers]

    @property
    def benchmark_ids(self) -> List[str]:
        return [benchmark.id for benchmark in self.benchmarks]

    def fuzzer(self, fuzzer_id: str) -> FuzzerSpec:
        for fuzzer in self.fuzzers:
            if fuzzer.id == fuzzer_id:
                return fuzzer
        raise KeyError(fuzzer_id)

    def benchmark(self, benchmark_id: str) -> BenchmarkSpec:
        for benchmark in self.benchmarks:
            if benchmark.id == benchmark_id:
                return benchmark
        raise KeyError(benchmark_id)

    def benchmarks_of_kind(self, kind: BenchmarkKind) -> List[BenchmarkSpec]:
        return [benchmark for benchmark in self.benchmarks if benchmark.kind == kind]

    @property
    def poll_ticks(self) -> List[int]:
        """Snapshot times: every interval up to the last multiple not exceeding the duration."""
        return list(range(self.snapshot_interval_s, self.duration_s + 1, self.snapshot_interval_s))


# Trial data (produced by the runner or simulator, read back by ingest)
class CoverageSample(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    t_s: StrictInt = Field(ge=0, description="Elapsed seconds from trial start")
    lines_covered: StrictInt = Field(ge=0)


class TrialRecord(BaseModel):
    """One fuzzer x benchmark x trial: a monotone coverage series plus an optional first crash."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    fuzzer_id: str
    benchmark_id: str
    trial_index: StrictInt = Field(ge=1)
    samples: Tuple[CoverageSample, ...] = Field(min_length=1)
    first_crash_t_s: Optional[StrictInt] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _check_monotone(self) -> "TrialRecord":
        for previous, current in zip(self.samples, self.samples[1:]):
            if current.t_s <= previous.t_s:
                raise ValueError(f"t_s not strictly increasing at t={current.t_s}")
            if current.lines_covered < previous.lines_covered:
                raise ValueError(f"lines_covered decreases at t={current.t_s}")
        return self

    @property
    def key(self) -> Tuple[str, str, int]:
        return (self.fuzzer_id, self.benchmark_id, self.trial_index)


class TrialArchive(BaseModel):
    """All trial records of one experiment; the sole input to analysis."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    config_fingerprint: str
    trials: Tuple[TrialRecord, ...] = ()

    @classmethod
    def from_records(cls, config_fingerprint: str, records: List[TrialRecord]) -> "TrialArchive":
        """Build an archive with trials in (fuzzer, benchmark, trial) order."""
        return cls(config_fingerprint=config_fingerprint, trials=tuple(sorted(records, key=lambda r: r.key)))

    def trials_for(self, fuzzer_id: str, benchmark_id: str) -> List[TrialRecord]:
        return [t for t in self.trials if t.fuzzer_id == fuzzer_id and t.benchmark_id == benchmark_id]


def template_problems(part: str) -> List[str]:
    """Describe what is wrong with one command-template element, if anything."""
    problems = [
        f"unknown placeholder '{{{name}}}'" for name in _PLACEHOLDER_RE.findall(part) if name not in PLACEHOLDERS
    ]
    residue = _PLACEHOLDER_RE.sub("", part)
    if "{" in residue or "}" in residue:
        problems.append("unbalanced brace")
    return problems


def bind_template(parts: Tuple[str, ...], bindings: Mapping[str, str]) -> List[str]:
    return [_PLACEHOLDER_RE.sub(lambda m: bindings[m.group(1)], part) for part in parts]


def cross_field_violations(raw: Mapping[str, Any]) -> List[str]:
    """Violations spanning several fields, computed leniently so they can be reported next to field errors."""
    violations: List[str] = []

    duration = raw.get("duration_s")
    interval = raw.get("snapshot_interval_s")
    if _is_int(duration) and _is_int(interval) and interval > duration:
        violations.append(f"snapshot_interval_s ({interval}) exceeds duration_s ({duration})")

    command_fields = {"fuzzers": ("run_command",), "benchmarks": ("target_command", "probe_command")}
    for section, fields in command_fields.items():
        items = raw.get(section)
        if not isinstance(items, (list, tuple)):
            continue
        seen: Dict[str, int] = {}
        for index, item in enumerate(items):
            if not isinstance(item, Mapping):
                continue
            item_id = item.get("id")
            if isinstance(item_id, str):
                if item_id in seen:
                    violations.append(f"{section}[{seen[item_id]}] and {section}[{index}] share id '{item_id}'")
                else:
                    seen[item_id] = index
            for field in fields:
                parts = item.get(field)
                if not isinstance(parts, (list, tuple)):
                    continue
                for position, part in enumerate(parts):
                    if isinstance(part, str):
                        violations.extend(
                            f"{section}[{index}].{field}[{position}]: {problem}" for problem in template_problems(part)
                        )
    return violations


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _format_location(loc: Tuple[Any, ...]) -> str:
    text = ""
    for item in loc:
        text += f"[{item}]" if isinstance(item, int) else (f".{item}" if text else str(item))
    return text


def validate_config(raw_config: Any) -> ExperimentConfig:
    """Validate a parsed config document, reporting every violation at once."""
    if not isinstance(raw_config, Mapping):
        raise ConfigValidationError(["config: expected a JSON object"])
    try:
        return ExperimentConfig.model_validate(raw_config)
    except ValidationError as e:
        # model-level errors carry an empty location; they are recomputed below one by one
        violations = [f"{_format_location(err['loc'])}: {err['msg']}" for err in e.errors() if err["loc"]]
        violations.extend(cross_field_violations(raw_config))
        logger.debug(f"Config rejected with {len(violations)} violation(s)")
        raise ConfigValidationError(violations) from e


def split_benchmarks(config: ExperimentConfig) -> Tuple[FrozenSet[str], FrozenSet[str]]:
    public = frozenset(b.id for b in config.benchmarks if b.visibility == Visibility.PUBLIC)
    private = frozenset(b.id for b in config.benchmarks if b.visibility == Visibility.PRIVATE)
    return public, private


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical JSON text; parsing and validating it again yields an equal config."""
    return json.dumps(config.model_dump(mode="json", exclude_none=True), indent=2, sort_keys=True) + "\n"


def config_fingerprint(config: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode("utf-8")).hexdigest()
