import numpy as np
import pytest

from heattime.core_model import Grid1D, Potential, ProblemSpec, RegionMask, sine_mode

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid199():
    return Grid1D(199)


@pytest.fixture(scope="session")
def grid49():
    return Grid1D(49)


def single_mode_problem(grid, K=0.5, M=None, a=0.0, r0=1.0):
    """``y0 = r0 sqrt(2) sin(pi x)``, control on the whole interval."""
    return ProblemSpec(grid, RegionMask.full(grid), Potential.constant(grid, a),
                       sine_mode(grid, 1, r0), K, M)


def localized_problem(grid, K=0.5, M=None, bounds=(0.3, 0.7), a=None):
    """Two-mode initial state controlled from a subinterval."""
    pot = Potential.constant(grid, 0.0) if a is None else a
    y0 = sine_mode(grid, 1) + 0.5 * sine_mode(grid, 2)
    return ProblemSpec(grid, RegionMask.from_bounds(grid, *bounds), pot, y0, K, M)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
