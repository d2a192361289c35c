import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import qubit_rho
from nonadiabat.entropy import (
    epsilon_mix, excess_rate_relative_entropy, excess_rate_weights,
    fd_relative_entropy_rate, nonadiabatic_rate, rates_along, relative_entropy,
    system_entropy_rate, vn_derivative_residual, von_neumann_entropy,
)
from nonadiabat.errors import MissingWeights, SingularState
from nonadiabat.model import (
    JumpSpec, LindbladModel, Protocol, SteadyStateInfo, generate_consistent_model, steady_state,
)
from nonadiabat.operators import SIGMA_X, SIGMA_Z, random_density


def _sna_closed(a: float) -> float:
    return (3 * a - 1) * math.log(2 * a / (1 - a))


def test_von_neumann_examples():
    assert von_neumann_entropy(np.diag([1.0, 0.0])) == 0.0
    assert von_neumann_entropy(np.eye(2) / 2) == pytest.approx(math.log(2), abs=1e-15)
    expect = -(1 / 3) * math.log(1 / 3) - (2 / 3) * math.log(2 / 3)
    assert von_neumann_entropy(np.diag([1 / 3, 2 / 3])) == pytest.approx(expect, abs=1e-15)
    assert expect == pytest.approx(0.6365, abs=1e-4)


def test_relative_entropy_examples(rng):
    rho = random_density(3, rng)
    assert abs(relative_entropy(rho, rho)) < 1e-12
    got = relative_entropy(np.eye(2) / 2, np.diag([1 / 3, 2 / 3]))
    assert got == pytest.approx(0.5 * math.log(9 / 8), abs=1e-15)
    assert got == pytest.approx(0.05889, abs=1e-5)
    assert relative_entropy(np.diag([1.0, 0.0]), np.diag([0.0, 1.0])) == math.inf


def test_relative_entropy_support_contained():
    # chi supported inside a rank-deficient phi: finite
    assert relative_entropy(np.diag([1.0, 0.0]), np.diag([0.5, 0.5])) == pytest.approx(math.log(2))
    assert relative_entropy(np.diag([0.5, 0.5, 0]), np.diag([0.5, 0.5, 0])) == pytest.approx(0.0)


@settings(max_examples=50, deadline=None)
@given(d=st.integers(1, 6), seed=st.integers(0, 2 ** 32 - 1), rank=st.integers(1, 6))
def test_klein_inequality(d, seed, rank):
    rng = np.random.default_rng(seed)
    chi = random_density(d, rng, rank=min(rank, d))
    phi = random_density(d, rng)
    assert relative_entropy(chi, phi) >= -1e-10


def test_system_entropy_rate_examples(qubit):
    pi = steady_state(qubit, 0.0).pi
    assert abs(system_entropy_rate(qubit, 0.0, pi)) < 1e-11
    assert abs(system_entropy_rate(qubit, 0.0, np.eye(2) / 2)) < 1e-15
    got = system_entropy_rate(qubit, 0.0, np.diag([0.4, 0.6]))
    assert got == pytest.approx(0.2 * math.log(2 / 3), abs=1e-14)
    assert got == pytest.approx(-0.0811, abs=1e-4)
    with pytest.raises(SingularState):
        system_entropy_rate(qubit, 0.0, np.diag([1.0, 0.0]))


def test_unitary_entropy_rate_zero(rng):
    h = random_density(3, rng) * 4
    m = LindbladModel(3, h, (), (), Protocol({}, (0.0, 1.0)))
    for _ in range(5):
        assert abs(system_entropy_rate(m, 0.0, random_density(3, rng))) < 1e-12


@pytest.mark.parametrize("a", [0.1, 1 / 3, 0.5, 0.9, 1.0 - 1e-9])
def test_excess_rates_qubit(qubit, a):
    ssi = steady_state(qubit, 0.0)
    rho = np.diag([a, 1 - a])
    expect = (3 * a - 1) * math.log(2)
    assert excess_rate_relative_entropy(qubit, 0.0, rho, ssi) == pytest.approx(expect, abs=1e-12)
    assert excess_rate_weights(qubit, 0.0, rho, ssi) == pytest.approx(expect, abs=1e-12)


def test_excess_rate_at_pure_excited(qubit):
    ssi = steady_state(qubit, 0.0)
    rho = np.diag([1.0, 0.0])
    assert excess_rate_relative_entropy(qubit, 0.0, rho, ssi) == pytest.approx(2 * math.log(2))


def test_unit_weights_give_zero_excess(rng):
    # dephasing jumps commute with a maximally mixed pi: all weights are 1
    jumps = (JumpSpec(SIGMA_Z, 1.0, 0, 0.0), JumpSpec(SIGMA_X, 0.5, 1, 0.0))
    m = LindbladModel(2, np.zeros((2, 2)), (), jumps, Protocol({}, (0.0, 1.0)))
    ssi = steady_state(m, 0.0)
    assert np.allclose(ssi.weights, 1.0)
    for _ in range(5):
        assert abs(excess_rate_weights(m, 0.0, random_density(2, rng), ssi)) < 1e-14


def test_missing_weights(qubit):
    ssi = SteadyStateInfo(np.diag([1 / 3, 2 / 3]), (math.nan, 0.5), 1.0, 0.0, 0.0)
    with pytest.raises(MissingWeights):
        excess_rate_weights(qubit, 0.0, np.eye(2) / 2, ssi)
    assert math.isnan(nonadiabatic_rate(qubit, 0.0, np.eye(2) / 2, ssi).S_ex_dot_weights)


def test_nonadiabatic_rate_examples(qubit):
    ssi = steady_state(qubit, 0.0)
    assert abs(nonadiabatic_rate(qubit, 0.0, ssi.pi, ssi).S_na_dot) < 1e-11
    r = nonadiabatic_rate(qubit, 0.0, np.eye(2) / 2, ssi)
    assert r.S_na_dot == pytest.approx(0.5 * math.log(2), abs=1e-14)
    assert r.S_na_dot == pytest.approx(0.3466, abs=1e-4)
    r = nonadiabatic_rate(qubit, 0.0, np.diag([0.9, 0.1]), ssi)
    assert r.S_na_dot == pytest.approx(1.7 * math.log(18), abs=1e-12)
    assert r.S_na_dot == pytest.approx(4.914, abs=1e-3)
    assert r.S_na_dot - r.S_dot - r.S_ex_dot_relent == 0.0


def test_fd_rate_examples(qubit):
    ssi = steady_state(qubit, 0.0)
    assert abs(fd_relative_entropy_rate(qubit, 0.0, ssi.pi, ssi, h=1e-4)) < 1e-9
    fd = fd_relative_entropy_rate(qubit, 0.0, np.eye(2) / 2, ssi, h=1e-4)
    assert fd == pytest.approx(_sna_closed(0.5), abs=1e-3)


def test_fd_rate_first_order(qubit):
    ssi = steady_state(qubit, 0.0)
    rho = np.diag([0.8, 0.2])
    exact = _sna_closed(0.8)
    devs = [abs(fd_relative_entropy_rate(qubit, 0.0, rho, ssi, h=h) - exact)
            for h in (1e-3, 5e-4, 2.5e-4)]
    assert 1.8 <= devs[0] / devs[1] <= 2.2
    assert 1.8 <= devs[1] / devs[2] <= 2.2


def test_fd_default_step(qubit):
    ssi = steady_state(qubit, 0.0)
    fd = fd_relative_entropy_rate(qubit, 0.0, np.eye(2) / 2, ssi)
    assert fd == pytest.approx(_sna_closed(0.5), abs=1e-3)


def test_vn_derivative_residual():
    assert vn_derivative_residual(lambda t: np.diag([0.3, 0.7]), 0.5, 1e-3) == 0.0
    rho_fn = lambda t: qubit_rho(t, 0.9)  # noqa: E731
    r1 = vn_derivative_residual(rho_fn, 0.5, 1e-3)
    r2 = vn_derivative_residual(rho_fn, 0.5, 2.5e-4)
    assert r1 < 1e-5
    assert 12 <= r1 / r2 <= 20


def test_epsilon_mix():
    out = epsilon_mix(np.diag([1.0, 0.0]), 0.1)
    assert np.allclose(out, np.diag([0.95, 0.05]))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), d=st.integers(2, 5), ramp=st.booleans())
def test_equivalence_and_positivity_property(seed, d, ramp):
    m, _ = generate_consistent_model(d, seed, ramp=ramp)
    rng = np.random.default_rng(seed)
    for t in rng.uniform(0, 1, 3):
        ssi = steady_state(m, t)
        for _ in range(2):
            r = nonadiabatic_rate(m, t, random_density(d, rng), ssi)
            assert r.equivalence_residual <= 1e-9 * (1 + abs(r.S_ex_dot_relent))
            assert r.S_na_dot >= -1e-9


def test_rates_along_qubit(qubit):
    rows = rates_along(qubit, np.eye(2) / 2, 0.0, 5.0, 1e-3, stride=100)
    assert rows[0].S_na_dot == pytest.approx(0.5 * math.log(2), abs=1e-12)
    sna = [r.S_na_dot for r in rows]
    assert all(b <= a for a, b in zip(sna, sna[1:]))
    assert sna[-1] < 1e-10
    assert max(r.equivalence_residual for r in rows) < 1e-12
    for r in rows[::10]:
        assert r.S_na_dot == pytest.approx(_sna_closed(qubit_rho(r.t, 0.5)[0, 0].real), abs=1e-9)
