from typing import List


class FuzzrankError(Exception):
    """Base class for all fuzzrank failures."""


class ConfigValidationError(FuzzrankError, ValueError):
    """Raised when an experiment config has one or more violations."""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ArchiveError(FuzzrankError, ValueError):
    """Raised when a trial archive fails structural validation."""

    def __init__(self, diagnostics: List[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class ExperimentExistsError(FuzzrankError, FileExistsError):
    pass


class SelectionError(FuzzrankError, ValueError):
    pass


class SimulationError(FuzzrankError, ValueError):
    pass


class AnalysisMissingError(FuzzrankError, FileNotFoundError):
    pass


class TrialAborted(FuzzrankError):
    """A trial that produced no usable record; the reason ends up in the absent-trial log."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)
