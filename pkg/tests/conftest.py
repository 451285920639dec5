import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stochmel.model import default_model
from stochmel.noise import NoisePath, build_kernel, sample_path_on

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture(scope="session")
def kernel():
    return build_kernel("pexp", 2.0)


@pytest.fixture(scope="session")
def path42(kernel):
    return sample_path_on(kernel, -60.0, 60.0, 0.01, 42)


def const_path(c, t_lo=-60.0, t_hi=60.0, dt=0.01):
    n = int(round((t_hi - t_lo) / dt)) + 1
    return NoisePath(t_lo, dt, np.full(n, float(c)))


def func_path(f, t_lo=-60.0, t_hi=60.0, dt=0.01):
    n = int(round((t_hi - t_lo) / dt)) + 1
    return NoisePath(t_lo, dt, f(t_lo + dt * np.arange(n)))


@pytest.fixture
def acceptance_line():
    def emit(number, name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {name} :: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
