from pathlib import Path

import pytest

from app.models import ExperimentConfig
from tests.factories import make_config


@pytest.fixture
def config() -> ExperimentConfig:
    """Two fuzzers, a public coverage benchmark and a private bug benchmark, 3 trials."""
    return make_config()


@pytest.fixture
def experiment_dir(tmp_path: Path) -> Path:
    """Path for a not-yet-created experiment directory."""
    return tmp_path / "experiment"
