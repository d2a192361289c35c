import math

import numpy as np
import pytest

from nonadiabat.entropy import relative_entropy
from nonadiabat.errors import InsufficientSamples, StepTooLarge
from nonadiabat.model import (
    LindbladModel, Protocol, SteadyStateInfo, generate_consistent_model, propagate, qubit_model,
    steady_state,
)
from nonadiabat.operators import SIGMA_Z, random_density
from nonadiabat.trajectory import (
    ConditionedState, fluctuation_functional, run_ensemble, run_trajectory,
    sample_initial_pure_state, trajectory_rng, trajectory_step,
)


class _FixedRng:
    def __init__(self, u):
        self.u = u

    def random(self):
        return self.u


@pytest.fixture(scope="module")
def qubit_ensemble():
    m = qubit_model()
    return m, run_ensemble(m, np.eye(2) / 2, 0.0, 2.0, 1e-3, 5000, base_seed=11)


def test_sample_initial_pure_state_pure():
    rng = trajectory_rng(0)
    psi = np.array([0.6, 0.8j])
    rho0 = np.outer(psi, psi.conj())
    for _ in range(20):
        assert np.allclose(sample_initial_pure_state(rho0, rng), rho0)


@pytest.mark.parametrize("pe", [0.5, 1 / 3])
def test_sample_initial_pure_state_frequencies(pe):
    rng = trajectory_rng(5)
    n = 10_000
    hits = sum(sample_initial_pure_state(np.diag([pe, 1 - pe]), rng)[0, 0].real > 0.5
               for _ in range(n))
    sigma = math.sqrt(n * pe * (1 - pe))
    assert abs(hits - n * pe) <= 3 * sigma


def test_step_without_jumps_is_deterministic():
    m = LindbladModel(2, 0.5 * SIGMA_Z, (), (), Protocol({}, (0.0, 1.0)))
    ssi = SteadyStateInfo(np.eye(2) / 2, (), 0.0, 0.0, 0.0)
    psi = np.array([1, 1]) / math.sqrt(2)
    st = ConditionedState(np.outer(psi, psi), np.diag([0.3, 0.7]).astype(complex))
    a, inc_a = trajectory_step(st, m, 0.0, 1e-3, ssi, _FixedRng(0.0))
    b, inc_b = trajectory_step(st, m, 0.0, 1e-3, ssi, _FixedRng(0.99))
    assert inc_a.jump == inc_b.jump == -1
    assert inc_a.ds_ex == 0.0
    assert np.array_equal(a.rho_c, b.rho_c)


def test_step_jump_from_excited():
    m = qubit_model()
    ssi = steady_state(m, 0.0)
    dt = 1e-3
    st = ConditionedState(np.diag([1.0, 0.0]).astype(complex), np.eye(2) / 2)
    # p_minus = 2 dt, p_plus = 0: a variate below 2 dt triggers the down jump
    new, inc = trajectory_step(st, m, 0.0, dt, ssi, _FixedRng(2 * dt * 0.999))
    assert inc.jump == 0
    assert np.allclose(new.rho_c, np.diag([0.0, 1.0]))
    assert inc.ds_ex == pytest.approx(math.log(2), abs=1e-12)
    _, inc = trajectory_step(st, m, 0.0, dt, ssi, _FixedRng(2 * dt * 1.001))
    assert inc.jump == -1


def test_step_too_large():
    m = qubit_model()
    ssi = steady_state(m, 0.0)
    st = ConditionedState(np.diag([1.0, 0.0]).astype(complex), np.eye(2) / 2)
    with pytest.raises(StepTooLarge):
        trajectory_step(st, m, 0.0, 0.05, ssi, _FixedRng(0.5))
    with pytest.raises(StepTooLarge):
        run_ensemble(m, np.diag([1.0, 0.0]), 0.0, 1.0, 0.06, 3, 0, epsilon=1e-3)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_step_function_matches_engine(seed):
    m, ssi = generate_consistent_model(3, 4)
    rho0 = random_density(3, np.random.default_rng(seed))
    dt, n = 2e-3, 500
    rec = run_trajectory(m, rho0, 0.0, n * dt, dt, ssi, seed=seed, checkpoint_stride=n)
    rng = trajectory_rng(seed)
    st = ConditionedState(sample_initial_pure_state(rho0, rng), rho0.astype(complex))
    events, ds, ds_ex = [], 0.0, 0.0
    for i in range(n):
        st, inc = trajectory_step(st, m, i * dt, dt, ssi, rng)
        if inc.jump >= 0:
            events.append(inc.jump)
        ds += inc.ds
        ds_ex += inc.ds_ex
    assert events == [k for _, k in rec.events]
    assert ds_ex == pytest.approx(rec.ds_ex_total, abs=1e-12)
    assert ds == pytest.approx(rec.delta_s, abs=1e-9)
    assert np.allclose(st.rho_c, rec.checkpoint_states[-1], atol=1e-9)


def test_record_bookkeeping_and_determinism(qubit):
    rec = run_trajectory(qubit, np.diag([0.9, 0.1]), 0.0, 1.0, 1e-3, None, seed=42)
    again = run_trajectory(qubit, np.diag([0.9, 0.1]), 0.0, 1.0, 1e-3, None, seed=42)
    assert rec.ds_na_total == (rec.s_series[-1] - rec.s_series[0]) + rec.ds_ex_total
    assert rec.events == again.events
    assert np.array_equal(rec.s_series, again.s_series)
    ssi = steady_state(qubit, 0.0)
    expect = sum(math.log(ssi.weights[k]) for _, k in rec.events)
    assert rec.ds_ex_total == pytest.approx(expect, abs=1e-12)
    # one jump at most per step
    times = [t for t, _ in rec.events]
    assert len(times) == len(set(times))


def test_single_trajectory_ensemble(qubit):
    rec = run_trajectory(qubit, np.diag([0.9, 0.1]), 0.0, 0.5, 1e-3, None, seed=7)
    stats = run_ensemble(qubit, np.diag([0.9, 0.1]), 0.0, 0.5, 1e-3, 1, base_seed=7)
    assert stats.delta_s_na[0] == rec.ds_na_total
    assert stats.ds_ex_total[0] == rec.ds_ex_total


def test_ensemble_independent_of_workers_and_batching(qubit):
    args = (qubit, np.diag([0.9, 0.1]), 0.0, 0.5, 1e-3, 600, 3)
    a = run_ensemble(*args, workers=1, batch_size=128)
    b = run_ensemble(*args, workers=4, batch_size=128)
    c = run_ensemble(*args, workers=3, batch_size=50)
    assert np.array_equal(a.delta_s_na, b.delta_s_na)
    assert a.to_json() == b.to_json()
    assert np.allclose(a.delta_s_na, c.delta_s_na, atol=1e-12, rtol=0)
    assert np.array_equal(a.jump_counts, c.jump_counts)


def test_threads_env_cap(qubit, monkeypatch):
    monkeypatch.setenv("NONADIABAT_THREADS", "1")
    a = run_ensemble(qubit, np.eye(2) / 2, 0.0, 0.2, 1e-3, 300, 0, batch_size=100, workers=8)
    monkeypatch.delenv("NONADIABAT_THREADS")
    b = run_ensemble(qubit, np.eye(2) / 2, 0.0, 0.2, 1e-3, 300, 0, batch_size=100, workers=8)
    assert a.to_json() == b.to_json()


def test_ensemble_mean_state_unbiased(qubit_ensemble):
    _, s = qubit_ensemble
    assert len(s.checkpoint_times) == 5
    assert np.all(s.mean_state_error <= 3 * s.mean_state_stderr)


def test_ensemble_excess_rate(qubit_ensemble):
    _, s = qubit_ensemble
    assert abs(s.mean_ds_ex_rate - s.reference_ds_ex_rate) <= 3 * s.mean_ds_ex_rate_stderr
    dev = np.abs(s.window_ds_ex_rate - s.reference_window_ds_ex_rate)
    assert np.all(dev <= 3 * s.window_ds_ex_rate_stderr)


def test_reference_excess_rate_closed_form(qubit_ensemble):
    # (3a - 1) ln 2 with 3a - 1 = e^(-3t) / 2, averaged over [0, 2]
    _, s = qubit_ensemble
    exact = 0.5 * math.log(2) * (1 - math.exp(-6.0)) / 3.0 / 2.0
    # left-point rule on the dt = 1e-3 grid
    assert s.reference_ds_ex_rate == pytest.approx(exact, abs=2e-4)


def test_ensemble_delta_s_na_matches_integral(qubit_ensemble):
    m, s = qubit_ensemble
    pi = steady_state(m, 0.0).pi
    rho_end = propagate(m, np.eye(2) / 2, 0.0, 2.0, 1e-3)[-1][1]
    oracle = relative_entropy(np.eye(2) / 2, pi) - relative_entropy(rho_end, pi)
    assert s.reference_delta_s_na == pytest.approx(oracle, abs=1e-12)
    assert abs(s.mean_delta_s_na - oracle) <= 3 * s.mean_delta_s_na_stderr
    assert s.mean_delta_s_na >= -3 * s.mean_delta_s_na_stderr


def test_jump_counts_poisson(qubit_ensemble):
    _, s = qubit_ensemble
    sigma = np.sqrt(s.expected_jump_counts)
    assert np.all(np.abs(s.jump_counts - s.expected_jump_counts) <= 3 * sigma)


def test_jump_frequency_over_1e5_steps(qubit):
    # 1000 trajectories x 100 steps from the excited state
    s = run_ensemble(qubit, np.diag([1.0, 0.0]), 0.0, 0.1, 1e-3, 1000, 9,
                     epsilon=1e-6, checkpoint_stride=100)
    expected = s.expected_jump_counts.sum(axis=0)
    got = s.jump_counts.sum(axis=0)
    assert np.all(np.abs(got - expected) <= 3 * np.sqrt(expected))


def test_fluctuation_functional_trivial():
    res = fluctuation_functional(np.zeros(50))
    assert res.value == 1.0 and res.stderr == 0.0
    with pytest.raises(InsufficientSamples):
        fluctuation_functional([0.3])


def test_steady_start_gives_zero_entropy_production(qubit):
    # each jump's system-entropy change cancels its excess term exactly
    pi = steady_state(qubit, 0.0).pi
    s = run_ensemble(qubit, pi, 0.0, 1.0, 1e-3, 500, 1)
    assert np.max(np.abs(s.delta_s_na)) < 1e-12
    res = fluctuation_functional(s.delta_s_na)
    assert res.value == pytest.approx(1.0, abs=1e-12)


def test_fluctuation_theorem_moderate(qubit):
    s = run_ensemble(qubit, np.diag([0.9, 0.1]), 0.0, 1.0, 1e-3, 5000, 21)
    assert abs(s.ft_value - 1.0) <= 3 * s.ft_stderr
    res = fluctuation_functional(s.delta_s_na, n_resamples=300, seed=4)
    assert res.value == pytest.approx(s.ft_value, rel=1e-13)


def test_dt_convergence(qubit):
    a = run_ensemble(qubit, np.diag([0.9, 0.1]), 0.0, 1.0, 2e-3, 3000, 5)
    b = run_ensemble(qubit, np.diag([0.9, 0.1]), 0.0, 1.0, 1e-3, 3000, 5)
    combined = math.hypot(a.mean_delta_s_na_stderr, b.mean_delta_s_na_stderr)
    assert abs(a.mean_delta_s_na - b.mean_delta_s_na) < combined


def test_driven_model_unbiased():
    m, _ = generate_consistent_model(3, 8, ramp=True)
    rho0 = random_density(3, np.random.default_rng(1))
    s = run_ensemble(m, rho0, 0.0, 1.0, 2e-3, 3000, 17, refresh_interval=0.1)
    assert np.all(s.mean_state_error <= 3 * s.mean_state_stderr)
    assert abs(s.mean_ds_ex_rate - s.reference_ds_ex_rate) <= 3 * s.mean_ds_ex_rate_stderr
    assert abs(s.ft_value - 1.0) <= 3 * s.ft_stderr


def test_epsilon_mixing_recorded(qubit):
    s = run_ensemble(qubit, np.diag([1.0, 0.0]), 0.0, 0.2, 1e-3, 50, 0, epsilon=1e-3)
    assert s.epsilon == 1e-3
    assert s.to_json()["epsilon"] == 1e-3
