import math
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
TWO_PI = 2.0 * math.pi


def quad_periodic(fn, n=1_000_000, length=TWO_PI):
    """Brute-force midpoint rule with n points on one period."""
    x = (np.arange(n) + 0.5) * (length / n)
    return float(np.sum(fn(x)) * (length / n))


@pytest.fixture(scope="session")
def configs_dir():
    return CONFIGS


@pytest.fixture(scope="session")
def standard_config():
    from qns_galerkin.config import load_config

    return load_config(CONFIGS / "standard.json", use_env=False)


@pytest.fixture(scope="session")
def standard_run(standard_config):
    from qns_galerkin.galerkin import run

    result = run(standard_config)
    assert result.completed, result.error
    return result


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("tests.test_acceptance")
    if module is not None and module.LINES:
        LINES = module.LINES
        terminalreporter.section("acceptance criteria")
        for number in sorted(LINES):
            terminalreporter.write_line(LINES[number])
