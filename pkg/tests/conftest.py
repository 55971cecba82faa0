import numpy as np
import pytest

from cp1green.core import SphereGrid
from cp1green.envelope_relax import solve_envelope
from cp1green.weights import circle_set, zero_weight

HALF_LOG2 = 0.5 * np.log(2.0)


def circle_oracle(Z0, Z1):
    """Extremal function of the unit circle for the Fubini-Study form."""
    a0, a1 = np.abs(Z0), np.abs(Z1)
    return np.log(np.maximum(a0, a1)) + HALF_LOG2 - 0.5 * np.log(a0**2 + a1**2)


def disk_oracle(r):
    """Extremal function of the closed disk of radius r about 0."""
    def fn(Z0, Z1):
        a0, a1 = np.abs(Z0), np.abs(Z1)
        return (np.log(np.maximum(a0, a1 / r)) + 0.5 * np.log1p(r**2)
                - 0.5 * np.log(a0**2 + a1**2))
    return fn


def chart_oracle(grid, fn):
    """Evaluate a homogeneous closed form at the nodes of both charts."""
    return np.stack([fn(*grid.homogeneous(c)) for c in (0, 1)])


@pytest.fixture(scope="session")
def grid60():
    return SphereGrid(1.25, 60)


@pytest.fixture(scope="session")
def grid100():
    return SphereGrid(1.25, 100)


@pytest.fixture(scope="session")
def circle100(grid100):
    return solve_envelope(circle_set(), zero_weight(), grid=grid100)


@pytest.fixture(scope="session")
def circle60(grid60):
    return solve_envelope(circle_set(), zero_weight(), grid=grid60)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion, then assert."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'} ({detail})"
        lines.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
