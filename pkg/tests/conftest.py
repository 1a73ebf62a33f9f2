import logging
import os
import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[1]
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

os.environ.setdefault("MAROM_LOG", "error")
os.environ.setdefault("MAROM_JOBS", "1")
os.environ.setdefault("MAROM_ENV_FILE", str(REPO_ROOT / "tests" / ".env.none"))

import numpy as np
import pytest

from marom.schemas.configs import KrigingSettings, TrainConfig
from marom.services.bench import BeamProblem, generate_scenario


@pytest.fixture(autouse=True)
def _set_default_test_env(monkeypatch):
    monkeypatch.setenv("MAROM_LOG", os.getenv("MAROM_LOG", "error") or "error")
    monkeypatch.setenv("MAROM_JOBS", "1")
    monkeypatch.delenv("MAROM_PROVENANCE_TIMESTAMPS", raising=False)
    for var in ("GIT_SHA", "GITHUB_SHA", "CI_COMMIT_SHA", "BUILD_ID"):
        monkeypatch.delenv(var, raising=False)


@pytest.fixture(autouse=True)
def _reset_marom_logger():
    yield
    # the CLI installs its own handler and stops propagation; undo it so caplog keeps working
    logger = logging.getLogger("marom")
    for handler in list(logger.handlers):
        if handler.get_name() == "marom-json":
            logger.removeHandler(handler)
    logger.propagate = True
    logger.setLevel(logging.NOTSET)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def beam_problem():
    return BeamProblem()


@pytest.fixture(scope="session")
def grid_scenario(beam_problem):
    return generate_scenario(beam_problem, "grid", "displacement", 8, 16, seed=11, test_size=20)


@pytest.fixture(scope="session")
def topology_scenario(beam_problem):
    return generate_scenario(beam_problem, "topology", "displacement", 8, 16, seed=12, test_size=20)


@pytest.fixture
def interp_config():
    """Padded latent rule and the small nugget used by interpolation checks."""
    return TrainConfig(latent_dim_rule="padded", kriging=KrigingSettings(nugget=1e-12), seed=3)
