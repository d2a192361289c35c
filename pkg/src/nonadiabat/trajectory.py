"""Quantum-jump unraveling with stochastic entropy bookkeeping.

Each step of length dt draws one uniform variate u per trajectory. Jump k
fires when u falls in the k-th slot of the cumulative probabilities
p_k = |L_k psi|^2 dt; otherwise the state receives the no-jump kick
(I - i dt H_eff) with H_eff = H - (i/2) sum_k L_k^dag L_k, then is
renormalized. At most one jump happens per step.

Trajectory i of an ensemble draws from its own Philox stream keyed by
``base_seed + i``: the first variate picks the initial eigenstate of rho0,
variate n + 1 drives step n. Results therefore do not depend on how
trajectories are batched or on the number of worker threads.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import os
from typing import NamedTuple, Sequence

import numpy as np

from .entropy import excess_rate_weights, nonadiabatic_rate, relative_entropy
from .errors import InsufficientSamples, MissingWeights, SingularState, StepTooLarge
from .model import LindbladModel, SteadyStateInfo, propagate, steady_state, time_grid
from .operators import LOG_FLOOR, dag, hermitian_eig, trace_distance, validate_density

STEP_GUARD = 0.1
MIN_RESAMPLES = 200
THREADS_ENV = "NONADIABAT_THREADS"


def trajectory_rng(seed: int) -> np.random.Generator:
    """Counter-based generator for one trajectory."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class ConditionedState:
    rho_c: np.ndarray  # conditioned on the jump record
    rho_u: np.ndarray  # unconditioned, deterministic


class StepIncrements(NamedTuple):
    jump: int  # -1 when no jump occurred
    ds: float
    ds_ex: float


@dataclass
class TrajectoryRecord:
    seed: int
    dt: float
    events: list[tuple[float, int]]
    s_times: np.ndarray
    s_series: np.ndarray
    ds_ex_total: float
    ds_na_total: float
    checkpoint_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    checkpoint_states: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)))
    epsilon: float = 0.0

    @property
    def delta_s(self) -> float:
        return float(self.s_series[-1] - self.s_series[0])


class FluctuationResult(NamedTuple):
    value: float
    stderr: float
    mean_delta_s_na: float
    mean_delta_s_na_stderr: float
    min_exponent: float
    max_exponent: float


@dataclass
class EnsembleStats:
    n_traj: int
    base_seed: int
    dt: float
    epsilon: float
    checkpoint_times: np.ndarray
    mean_state_error: np.ndarray
    mean_state_stderr: np.ndarray
    mean_ds_ex_rate: float
    mean_ds_ex_rate_stderr: float
    reference_ds_ex_rate: float
    window_ds_ex_rate: np.ndarray
    window_ds_ex_rate_stderr: np.ndarray
    reference_window_ds_ex_rate: np.ndarray
    ft_value: float
    ft_stderr: float
    mean_delta_s_na: float
    mean_delta_s_na_stderr: float
    reference_delta_s_na: float
    min_exponent: float
    max_exponent: float
    jump_counts: np.ndarray
    expected_jump_counts: np.ndarray
    delta_s_na: np.ndarray = field(repr=False)
    ds_ex_total: np.ndarray = field(repr=False)
    events: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        def fl(a):
            return [float(x) for x in np.ravel(a)]

        return {
            "n_traj": self.n_traj,
            "base_seed": self.base_seed,
            "dt": self.dt,
            "epsilon": self.epsilon,
            "checkpoint_times": fl(self.checkpoint_times),
            "mean_state_error": fl(self.mean_state_error),
            "mean_state_stderr": fl(self.mean_state_stderr),
            "mean_ds_ex_rate": self.mean_ds_ex_rate,
            "mean_ds_ex_rate_stderr": self.mean_ds_ex_rate_stderr,
            "reference_ds_ex_rate": self.reference_ds_ex_rate,
            "window_ds_ex_rate": fl(self.window_ds_ex_rate),
            "window_ds_ex_rate_stderr": fl(self.window_ds_ex_rate_stderr),
            "reference_window_ds_ex_rate": fl(self.reference_window_ds_ex_rate),
            "ft_value": self.ft_value,
            "ft_stderr": self.ft_stderr,
            "mean_delta_s_na": self.mean_delta_s_na,
            "mean_delta_s_na_stderr": self.mean_delta_s_na_stderr,
            "reference_delta_s_na": self.reference_delta_s_na,
            "min_exponent": self.min_exponent,
            "max_exponent": self.max_exponent,
            "jump_counts": self.jump_counts.astype(int).tolist(),
            "expected_jump_counts": self.expected_jump_counts.tolist(),
        }


def _log_full_rank(rho: np.ndarray) -> np.ndarray:
    w, v = hermitian_eig(rho)
    if w[0] <= LOG_FLOOR:
        raise SingularState(
            f"unconditioned state has eigenvalue {w[0]:.3e}; use epsilon mixing")
    return (v * np.log(w)) @ dag(v)


def _pick_eigenstates(rho0: np.ndarray, u: np.ndarray) -> np.ndarray:
    w, v = hermitian_eig(rho0)
    w = np.clip(w, 0.0, None)
    cdf = np.cumsum(w)
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    idx = np.minimum(idx, len(w) - 1)
    return v[:, idx].T  # (B, d)


def sample_initial_pure_state(rho0, rng: np.random.Generator) -> np.ndarray:
    """|p_m><p_m| with probability equal to the eigenvalue P_m of rho0."""
    rho0 = validate_density(rho0)
    psi = _pick_eigenstates(rho0, np.array([rng.random()]))[0]
    return np.outer(psi, psi.conj())


def _entropy_s(rho_c: np.ndarray, log_rho_u: np.ndarray) -> float:
    return float(-np.trace(rho_c @ log_rho_u).real)


def trajectory_step(state: ConditionedState, m: LindbladModel, t: float, dt: float,
                    ssi: SteadyStateInfo, rng: np.random.Generator):
    """Advance one conditioned/unconditioned pair by dt.

    Returns (new state, StepIncrements).

    :raises StepTooLarge: if the total jump probability reaches 0.1.
    """
    h, ls = m.evaluate(t)
    rho = state.rho_c
    probs = np.array([np.trace(dag(c) @ c @ rho).real * dt for c in ls])
    if probs.sum() >= STEP_GUARD:
        raise StepTooLarge(f"total jump probability {probs.sum():.3g} per step")
    u = rng.random()
    k = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    if k < len(ls):
        c = ls[k]
        new = c @ rho @ dag(c)
        if not np.isfinite(ssi.weights[k]):
            raise MissingWeights(f"jump {k} has no privileged weight")
        ds_ex = math.log(ssi.weights[k])
    else:
        k = -1
        h_eff = h - 0.5j * sum((dag(c) @ c for c in ls), np.zeros_like(h))
        kick = np.eye(m.dim) - 1j * dt * h_eff
        new = kick @ rho @ dag(kick)
        ds_ex = 0.0
    new = new / np.trace(new).real
    new = 0.5 * (new + dag(new))
    (_, _), (_, rho_u) = propagate(m, state.rho_u, t, t + dt, dt)
    ds = _entropy_s(new, _log_full_rank(rho_u)) - _entropy_s(rho, _log_full_rank(state.rho_u))
    return ConditionedState(new, rho_u), StepIncrements(k, ds, ds_ex)


@dataclass
class _Grid:
    ts: np.ndarray  # (n+1,)
    rho_u: np.ndarray  # (n+1, d, d)
    log_rho_u: np.ndarray  # (n+1, d, d)
    jumps: np.ndarray  # (n, K, d, d) at the left end of each step
    kicks: np.ndarray  # (n, d, d)
    ln_w: np.ndarray  # (n, K)
    ssis: list  # steady state used on each step
    checkpoints: np.ndarray  # step indices (into ts) of checkpoints

    @property
    def n_steps(self) -> int:
        return len(self.ts) - 1


def _weight_schedule(m: LindbladModel, ts: np.ndarray, ssi, refresh_interval):
    if ssi is not None:
        return [ssi] * (len(ts) - 1)
    if m.protocol.is_constant:
        fixed = steady_state(m, ts[0])
        return [fixed] * (len(ts) - 1)
    if refresh_interval is None:
        return [steady_state(m, t) for t in ts[:-1]]
    refresh = set(np.arange(ts[0], ts[-1], refresh_interval).tolist())
    refresh.update(b for b in m.protocol.breakpoints if ts[0] <= b < ts[-1])
    refresh = np.array(sorted(refresh))
    cache: dict[int, SteadyStateInfo] = {}
    out = []
    for t in ts[:-1]:
        j = int(np.searchsorted(refresh, t + 1e-12, side="right")) - 1
        if j not in cache:
            cache[j] = steady_state(m, refresh[j])
        out.append(cache[j])
    return out


def _build_grid(m, rho0, t0, t1, dt, ssi, refresh_interval, checkpoint_stride) -> _Grid:
    ts = time_grid(t0, t1, dt)
    states = propagate(m, rho0, t0, t1, dt)
    rho_u = np.array([r for _, r in states])
    log_rho_u = np.array([_log_full_rank(r) for r in rho_u])
    n = len(ts) - 1
    d = m.dim
    ssis = _weight_schedule(m, ts, ssi, refresh_interval)
    jumps, kicks, ln_w = [], [], []
    eye = np.eye(d)
    for i in range(n):
        h, ls = m.evaluate(ts[i])
        step = ts[i + 1] - ts[i]
        h_eff = h - 0.5j * sum((dag(c) @ c for c in ls), np.zeros((d, d), complex))
        kicks.append(eye - 1j * step * h_eff)
        jumps.append(np.array(ls) if ls else np.zeros((0, d, d), complex))
        row = []
        for k, (c, w) in enumerate(zip(ls, ssis[i].weights)):
            if np.isfinite(w):
                row.append(math.log(w))
            elif np.linalg.norm(c) == 0:
                row.append(0.0)
            else:
                raise MissingWeights(f"jump {k} has no privileged weight at t = {ts[i]:.6g}")
        ln_w.append(row)
    if checkpoint_stride is None:
        checkpoint_stride = max(n // 5, 1)
    ck = np.arange(checkpoint_stride, n + 1, checkpoint_stride)
    if len(ck) == 0 or ck[-1] != n:
        ck = np.append(ck, n)
    return _Grid(ts, rho_u, log_rho_u, np.array(jumps), np.array(kicks),
                 np.array(ln_w, dtype=float).reshape(n, len(m.jumps)), ssis, ck)


@dataclass
class _BatchResult:
    s0: np.ndarray  # (B,)
    s_ck: np.ndarray  # (B, C)
    ds_ex_ck: np.ndarray  # (B, C) cumulative at checkpoints
    psi_ck: np.ndarray  # (B, C, d)
    counts: np.ndarray  # (C, K) jumps inside each checkpoint window
    events: list  # (batch row, step, k)


def _simulate_batch(grid: _Grid, rho0: np.ndarray, seeds: Sequence[int],
                    record_events: bool) -> _BatchResult:
    n = grid.n_steps
    b = len(seeds)
    n_jumps = grid.ln_w.shape[1]
    u = np.empty((b, n + 1))
    for row, seed in enumerate(seeds):
        u[row] = trajectory_rng(int(seed)).random(n + 1)
    psi = _pick_eigenstates(rho0, u[:, 0])
    s0 = -np.einsum("bi,ij,bj->b", psi.conj(), grid.log_rho_u[0], psi).real
    n_ck = len(grid.checkpoints)
    s_ck = np.empty((b, n_ck))
    ds_ex_ck = np.empty((b, n_ck))
    psi_ck = np.empty((b, n_ck, psi.shape[1]), complex)
    counts = np.zeros((n_ck, n_jumps), dtype=np.int64)
    ds_ex = np.zeros(b)
    events = []
    rows = np.arange(b)
    window = 0
    for i in range(n):
        step = grid.ts[i + 1] - grid.ts[i]
        if n_jumps:
            lpsi = np.einsum("kij,bj->bki", grid.jumps[i], psi)
            cum = np.cumsum(np.sum(np.abs(lpsi) ** 2, axis=2) * step, axis=1)
            if cum[:, -1].max() >= STEP_GUARD:
                raise StepTooLarge(
                    f"total jump probability {cum[:, -1].max():.3g} per step at t = {grid.ts[i]:.6g}")
            k = np.sum(u[:, i + 1, None] >= cum, axis=1)
        else:
            k = np.full(b, 0)
        jumped = k < n_jumps
        new = psi @ grid.kicks[i].T
        if jumped.any():
            jr = rows[jumped]
            new[jr] = lpsi[jr, k[jr]]
            ds_ex[jr] += grid.ln_w[i, k[jr]]
            np.add.at(counts[window], k[jr], 1)
            if record_events:
                events.extend((int(r), i, int(kk)) for r, kk in zip(jr, k[jr]))
        psi = new / np.linalg.norm(new, axis=1, keepdims=True)
        if i + 1 == grid.checkpoints[window]:
            s_ck[:, window] = -np.einsum("bi,ij,bj->b", psi.conj(),
                                         grid.log_rho_u[i + 1], psi).real
            ds_ex_ck[:, window] = ds_ex
            psi_ck[:, window] = psi
            window = min(window + 1, n_ck - 1) if i + 1 < n else window
    return _BatchResult(s0, s_ck, ds_ex_ck, psi_ck, counts, events)


def _worker_count(workers: int | None) -> int:
    if workers is None:
        workers = os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        workers = min(workers, max(int(cap), 1))
    return max(workers, 1)


def _prepare_rho0(rho0, epsilon: float) -> np.ndarray:
    rho0 = validate_density(rho0)
    if epsilon:
        d = rho0.shape[0]
        rho0 = (1.0 - epsilon) * rho0 + epsilon * np.eye(d) / d
    return rho0


def run_trajectory(m: LindbladModel, rho0, t0: float, tau: float, dt: float,
                   ssi: SteadyStateInfo | None, seed: int, epsilon: float = 0.0,
                   checkpoint_stride: int | None = None,
                   refresh_interval: float | None = None) -> TrajectoryRecord:
    """Simulate one trajectory on [t0, t0 + tau]; deterministic in ``seed``."""
    rho0 = _prepare_rho0(rho0, epsilon)
    grid = _build_grid(m, rho0, t0, t0 + tau, dt, ssi, refresh_interval, checkpoint_stride)
    res = _simulate_batch(grid, rho0, [seed], record_events=True)
    events = [(float(grid.ts[i]), k) for _, i, k in res.events]
    s_times = np.concatenate([[grid.ts[0]], grid.ts[grid.checkpoints]])
    s_series = np.concatenate([res.s0, res.s_ck[0]])
    ds_ex_total = float(res.ds_ex_ck[0, -1])
    ds_na_total = float(s_series[-1] - s_series[0]) + ds_ex_total
    psi = res.psi_ck[0]
    states = np.einsum("ci,cj->cij", psi, psi.conj())
    return TrajectoryRecord(int(seed), float(dt), events, s_times, s_series,
                            ds_ex_total, ds_na_total, grid.ts[grid.checkpoints], states,
                            float(epsilon))


def _bootstrap_means(x: np.ndarray, n_resamples: int, rng: np.random.Generator,
                     chunk: int = 25) -> np.ndarray:
    """Resampled column means of x (N, F) using multinomial counts."""
    n = x.shape[0]
    out = np.empty((n_resamples, x.shape[1]), dtype=x.dtype)
    for start in range(0, n_resamples, chunk):
        stop = min(start + chunk, n_resamples)
        counts = np.stack([np.bincount(rng.integers(0, n, n), minlength=n)
                           for _ in range(stop - start)])
        out[start:stop] = counts @ x / n
    return out


def fluctuation_functional(records, n_resamples: int = MIN_RESAMPLES,
                           seed: int = 0) -> FluctuationResult:
    """Sample mean of exp(-Delta s_na) with bootstrap standard error.

    ``records`` may be TrajectoryRecord objects or the Delta s_na values
    themselves.
    """
    vals = np.array([getattr(r, "ds_na_total", r) for r in records], dtype=float)
    if vals.size < 2:
        raise InsufficientSamples("need at least two trajectories")
    n_resamples = max(n_resamples, MIN_RESAMPLES)
    x = np.column_stack([np.exp(-vals), vals])
    boot = _bootstrap_means(x, n_resamples, np.random.default_rng(seed))
    se = boot.std(axis=0, ddof=1)
    return FluctuationResult(float(x[:, 0].mean()), float(se[0]), float(vals.mean()),
                             float(se[1]), float((-vals).min()), float((-vals).max()))


def run_ensemble(m: LindbladModel, rho0, t0: float, tau: float, dt: float, n: int,
                 base_seed: int, ssi: SteadyStateInfo | None = None, epsilon: float = 0.0,
                 checkpoint_stride: int | None = None,
                 refresh_interval: float | None = None,
                 n_resamples: int = MIN_RESAMPLES, workers: int | None = None,
                 batch_size: int = 2048, record_events: bool = False) -> EnsembleStats:
    """Run n trajectories (seeds base_seed + i) and aggregate their statistics.

    Standard errors come from a nonparametric bootstrap over trajectories.
    The reference values are computed from the deterministic unconditioned
    evolution on the same grid.
    """
    if n < 1:
        raise InsufficientSamples("need at least one trajectory")
    rho0 = _prepare_rho0(rho0, epsilon)
    grid = _build_grid(m, rho0, t0, t0 + tau, dt, ssi, refresh_interval, checkpoint_stride)
    seeds = base_seed + np.arange(n)
    batches = [seeds[i:i + batch_size] for i in range(0, n, batch_size)]
    n_workers = min(_worker_count(workers), len(batches))

    def work(batch):
        return _simulate_batch(grid, rho0, batch, record_events)

    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            results = list(pool.map(work, batches))
    else:
        results = [work(bt) for bt in batches]

    s0 = np.concatenate([r.s0 for r in results])
    s_ck = np.concatenate([r.s_ck for r in results])
    ds_ex_ck = np.concatenate([r.ds_ex_ck for r in results])
    psi_ck = np.concatenate([r.psi_ck for r in results])
    counts = sum((r.counts for r in results), np.zeros_like(results[0].counts))
    events = []
    if record_events:
        for offset, r in zip(range(0, n, batch_size), results):
            events.extend((offset + row, float(grid.ts[i]), k, float(grid.ln_w[i, k]))
                          for row, i, k in r.events)

    ck = grid.checkpoints
    ck_times = grid.ts[ck]
    n_ck = len(ck)
    d = m.dim
    delta_s_na = s_ck[:, -1] - s0 + ds_ex_ck[:, -1]
    ds_ex_total = ds_ex_ck[:, -1]
    window_edges = np.concatenate([[grid.ts[0]], ck_times])
    window_len = np.diff(window_edges)
    window_ds_ex = np.diff(np.column_stack([np.zeros(n), ds_ex_ck]), axis=1)

    proj = np.einsum("bci,bcj->bcij", psi_ck, psi_ck.conj()).reshape(n, -1)
    features = np.column_stack([
        proj.real, proj.imag, window_ds_ex, ds_ex_total, delta_s_na, np.exp(-delta_s_na)])
    means = features.mean(axis=0)
    boot_rng = np.random.default_rng([base_seed, 0x5EED])
    boot = _bootstrap_means(features, max(n_resamples, MIN_RESAMPLES), boot_rng)
    q = n_ck * d * d

    def as_states(v):
        return (v[..., :q] + 1j * v[..., q:2 * q]).reshape(v.shape[:-1] + (n_ck, d, d))

    mean_states = as_states(means)
    boot_states = as_states(boot)
    err = np.array([trace_distance(mean_states[c], grid.rho_u[ck[c]]) for c in range(n_ck)])
    se_state = np.array([
        math.sqrt(np.mean([trace_distance(bs[c], mean_states[c]) ** 2 for bs in boot_states]))
        for c in range(n_ck)])
    rest = boot[:, 2 * q:].real
    rest_mean = means[2 * q:].real
    rest_se = rest.std(axis=0, ddof=1) if n > 1 else np.zeros(rest.shape[1])
    w_rate = rest_mean[:n_ck] / window_len
    w_rate_se = rest_se[:n_ck] / window_len
    total_rate = rest_mean[n_ck] / tau
    total_rate_se = rest_se[n_ck] / tau

    # deterministic references on the same grid (left-point rule, like the scheme)
    ref_ex = np.empty(grid.n_steps)
    expected_steps = np.empty((grid.n_steps, len(m.jumps)))
    for i in range(grid.n_steps):
        t = grid.ts[i]
        step = grid.ts[i + 1] - t
        ref_ex[i] = excess_rate_weights(m, t, grid.rho_u[i], grid.ssis[i]) * step
        expected_steps[i] = [np.trace(dag(c) @ c @ grid.rho_u[i]).real * step
                             for c in grid.jumps[i]]
    ref_cum = np.concatenate([[0.0], np.cumsum(ref_ex)])
    ref_window = np.diff(ref_cum[np.concatenate([[0], ck])]) / window_len
    exp_cum = np.vstack([np.zeros(len(m.jumps)), np.cumsum(expected_steps, axis=0)])
    expected_counts = n * np.diff(exp_cum[np.concatenate([[0], ck])], axis=0)
    ref_na = _reference_delta_s_na(m, grid)

    return EnsembleStats(
        n_traj=n, base_seed=int(base_seed), dt=float(dt), epsilon=float(epsilon),
        checkpoint_times=ck_times, mean_state_error=err, mean_state_stderr=se_state,
        mean_ds_ex_rate=float(total_rate), mean_ds_ex_rate_stderr=float(total_rate_se),
        reference_ds_ex_rate=float(ref_cum[-1] / tau),
        window_ds_ex_rate=w_rate, window_ds_ex_rate_stderr=w_rate_se,
        reference_window_ds_ex_rate=ref_window,
        ft_value=float(rest_mean[n_ck + 2]), ft_stderr=float(rest_se[n_ck + 2]),
        mean_delta_s_na=float(rest_mean[n_ck + 1]),
        mean_delta_s_na_stderr=float(rest_se[n_ck + 1]),
        reference_delta_s_na=ref_na,
        min_exponent=float((-delta_s_na).min()), max_exponent=float((-delta_s_na).max()),
        jump_counts=counts, expected_jump_counts=expected_counts,
        delta_s_na=delta_s_na, ds_ex_total=ds_ex_total, events=events,
    )


def _reference_delta_s_na(m: LindbladModel, grid: _Grid) -> float:
    """Deterministic integral of the nonadiabatic rate over the run."""
    ssi0 = grid.ssis[0]
    if m.protocol.is_constant:
        return (relative_entropy(grid.rho_u[0], ssi0.pi)
                - relative_entropy(grid.rho_u[-1], ssi0.pi))
    vals = []
    for i, t in enumerate(grid.ts):
        ssi = grid.ssis[min(i, grid.n_steps - 1)]
        vals.append(nonadiabatic_rate(m, t, grid.rho_u[i], ssi).S_na_dot)
    return float(np.trapezoid(vals, grid.ts))


__all__ = [
    "ConditionedState", "StepIncrements", "TrajectoryRecord", "EnsembleStats",
    "FluctuationResult", "trajectory_rng", "sample_initial_pure_state", "trajectory_step",
    "run_trajectory", "run_ensemble", "fluctuation_functional",
]
