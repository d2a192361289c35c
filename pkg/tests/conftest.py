import math
import sys

import numpy as np
import pytest

from nonadiabat.model import qubit_model


def qubit_pe(t: float, pe0: float = 1.0) -> float:
    """Closed-form excited population of the damped qubit (rates 2 down, 1 up)."""
    return 1.0 / 3.0 + (pe0 - 1.0 / 3.0) * math.exp(-3.0 * t)


def qubit_rho(t: float, pe0: float) -> np.ndarray:
    pe = qubit_pe(t, pe0)
    return np.diag([pe, 1.0 - pe]).astype(complex)


@pytest.fixture
def qubit():
    return qubit_model()


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(verdicts):
            terminalreporter.write_line(verdicts[n])
