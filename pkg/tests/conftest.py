from dataclasses import dataclass, field

import numpy as np
import pytest

from mvsde.model import CoefficientModel, LinearMeanFieldModel
from mvsde.noise import BrownianLattice


@dataclass(frozen=True)
class FaultyLinearModel(LinearMeanFieldModel):
    """Linear mean-field model whose measure derivative of sigma is off by 2x."""

    def dmu_sigma(self, x, mu, y):
        return 2.0 * super().dmu_sigma(x, mu, y)


@dataclass(frozen=True)
class TwoNoiseModel(CoefficientModel):
    """d = 1, m = 2, b = 0, sigma = (x, 0)."""

    d: int = field(default=1, init=False)
    m: int = field(default=2, init=False)
    rho: float = field(default=0.0, init=False)
    measure_dependent_diffusion: bool = field(default=False, init=False)

    def b(self, x, mu):
        return np.zeros_like(np.asarray(x, dtype=float).reshape(-1, 1))

    def sigma(self, x, mu):
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        return np.stack([x, np.zeros_like(x)], axis=2)

    def dx_b(self, x, mu):
        return np.zeros((np.size(x), 1, 1))

    def dmu_b(self, x, mu, y):
        return np.zeros((np.size(x), np.size(y), 1, 1))

    def dx_sigma(self, x, mu):
        out = np.zeros((np.size(x), 1, 2, 1))
        out[:, 0, 0, 0] = 1.0
        return out

    def dmu_sigma(self, x, mu, y):
        return np.zeros((np.size(x), np.size(y), 1, 2, 1))


def lattice_from(increments, T=1.0, seed=0):
    """Hand-built lattice with the given (N, m, n_fine) increments."""
    inc = np.asarray(increments, dtype=float)
    return BrownianLattice(seed=seed, N=inc.shape[0], m=inc.shape[1], n_fine=inc.shape[2], T=T, increments=inc)


@pytest.fixture
def faulty_model():
    return FaultyLinearModel()


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
