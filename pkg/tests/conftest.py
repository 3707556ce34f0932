import numpy as np
import pytest

from geonl.poisson import AffineCoupling, BlockMass, PoissonModel, PoissonState
from geonl.solvers import BlockDiagonal

ACCEPTANCE_LINES = []


class LinearOscillator(PoissonModel):
    """``q'' = -omega^2 q`` as ``v' = -omega s``, ``s' = omega v`` (unit masses)."""

    name = "oscillator"

    def __init__(self, omega=1.0):
        self.omega = omega
        self.mass = BlockMass(np.array([[1.0]]), BlockDiagonal([np.ones((1, 1, 1))]))
        self.coupling = AffineCoupling.from_entries(
            (1, 1), const=([0], [0], [omega]), linear=([], [], [], []), n_q=1, dense=True
        )

    def strain(self, q):
        return self.omega * np.asarray(q, dtype=float).reshape(1)

    def state(self, q0=1.0, v0=0.0):
        q = np.array([q0])
        return PoissonState(q, np.array([v0]), self.stress_from_q(q))


class FreeParticle(PoissonModel):
    name = "free"

    def __init__(self, n=3):
        self.mass = BlockMass(np.eye(n), BlockDiagonal([np.ones((1, 1, 1))]))
        self.coupling = AffineCoupling.from_entries(
            (1, n), const=([0], [0], [0.0]), linear=([], [], [], []), n_q=n, dense=True
        )

    def strain(self, q):
        return np.zeros(1)


@pytest.fixture
def oscillator():
    return LinearOscillator(1.0)


@pytest.fixture(scope="session")
def small_column():
    from geonl import fem3d

    params = fem3d.ColumnParams(nx=2, ny=2, nz=4, lz=2.0)
    return params, fem3d.assemble_elasticity(params=params, clamped=True)


@pytest.fixture
def acceptance_report():
    def report(criterion, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
