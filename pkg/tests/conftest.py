import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from reachcert.sysdef import load_builtin

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("thorough", deadline=None, max_examples=400)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def di():
    return load_builtin("double_integrator")


@pytest.fixture(scope="session")
def rot():
    return load_builtin("rotation")


@pytest.fixture(scope="session")
def tri():
    return load_builtin("triple_integrator")


@pytest.fixture(scope="session")
def cubic():
    return load_builtin("cubic_double_integrator")


@pytest.fixture(scope="session")
def sysexample():
    return load_builtin("sysexample")


def di_min_time(x1, x2):
    """Closed-form time to steer ``(x1, x2)`` to 0 under ``x1' = x2, x2' = u``."""
    if x1 + x2 * abs(x2) / 2.0 > 0.0:
        return x2 + 2.0 * np.sqrt(x1 + x2 * x2 / 2.0)
    return -x2 + 2.0 * np.sqrt(-x1 + x2 * x2 / 2.0)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Recorder for one pass/fail line per acceptance criterion."""
    def record(number, title, passed, seconds, detail):
        line = f"criterion {number} {'PASS' if passed else 'FAIL'} [{seconds:6.1f} s] {title}: {detail}"
        request.config.stash.setdefault(_ACCEPTANCE, []).append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
