import numpy as np
import pytest

from recanting_twins.data import Dataset
from recanting_twins.simulation import SETTINGS, simulate_observed


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)


@pytest.fixture
def report_criterion(request):
    """Record one pass/fail line for the terminal summary and echo it."""
    def record(number: int, name: str, passed: bool, detail: str = ""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name}"
        if detail:
            line += f" ({detail})"
        request.config.acceptance_lines.append(line)
        print(line)
        return passed
    return record


@pytest.fixture(scope="session")
def sim_small():
    return simulate_observed(SETTINGS["default"], 800, seed=11)


@pytest.fixture(scope="session")
def sim_medium():
    return simulate_observed(SETTINGS["default"], 3000, seed=12)


def make_dataset(n=200, seed=0, k_z=3, k_m=3, p=2, binary_y=True):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(n, p))
    a = rng.integers(0, 2, n)
    z = np.arange(n) % k_z
    m = (np.arange(n) // k_z) % k_m
    rng.shuffle(z)
    rng.shuffle(m)
    y = rng.integers(0, 2, n).astype(float) if binary_y else rng.normal(size=n)
    return Dataset(w, a, z, m, y, k_z, k_m)
