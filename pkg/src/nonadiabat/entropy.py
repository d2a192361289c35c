"""Deterministic entropy functionals and nonadiabatic entropy-production rates.

Units: k_B = 1, entropies in nats, rates per unit of protocol time.
"""
from dataclasses import dataclass
import math

import numpy as np

from .errors import MissingWeights, SingularState
from .model import apply_generator, liouvillian_apply, propagate
from .operators import LOG_FLOOR, dag, hermitian_eig, matrix_log_pd

SUPPORT_WEIGHT = 1e-10


@dataclass(frozen=True)
class EntropyRates:
    t: float
    S: float
    S_dot: float
    S_ex_dot_relent: float
    S_ex_dot_weights: float
    S_na_dot: float

    @property
    def equivalence_residual(self) -> float:
        return abs(self.S_ex_dot_relent - self.S_ex_dot_weights)

    def row(self) -> list[float]:
        return [self.t, self.S, self.S_dot, self.S_ex_dot_relent,
                self.S_ex_dot_weights, self.S_na_dot, self.equivalence_residual]


RATE_COLUMNS = ["t", "S", "S_dot", "S_ex_relent", "S_ex_weights", "S_na",
                "equivalence_residual"]


def _xlogx(w: np.ndarray) -> np.ndarray:
    out = np.zeros_like(w)
    pos = w > LOG_FLOOR
    out[pos] = w[pos] * np.log(w[pos])
    return out


def von_neumann_entropy(rho) -> float:
    """-sum w ln w over the spectrum, with 0 ln 0 = 0."""
    w, _ = hermitian_eig(rho)
    return float(-np.sum(_xlogx(w)))


def relative_entropy(chi, phi) -> float:
    """Tr[chi ln chi] - Tr[chi ln phi]; +inf when supp(chi) is not inside supp(phi)."""
    chi = np.asarray(chi, dtype=complex)
    wp, vp = hermitian_eig(phi)
    # weight of chi on each eigenvector of phi
    overlap = np.einsum("ia,ij,ja->a", vp.conj(), chi, vp).real
    null = wp <= LOG_FLOOR
    if np.any(overlap[null] > SUPPORT_WEIGHT):
        return math.inf
    keep = ~null
    cross = float(np.sum(overlap[keep] * np.log(wp[keep])))
    wc, _ = hermitian_eig(chi)
    return float(np.sum(_xlogx(wc))) - cross


def _log_state(rho) -> np.ndarray:
    w, v = hermitian_eig(rho)
    if w[0] <= LOG_FLOOR:
        raise SingularState(f"state has eigenvalue {w[0]:.3e}; mix it with the identity first")
    return (v * np.log(w)) @ dag(v)


def epsilon_mix(rho, eps: float) -> np.ndarray:
    """(1 - eps) rho + eps I/d."""
    rho = np.asarray(rho, dtype=complex)
    d = rho.shape[0]
    return (1.0 - eps) * rho + eps * np.eye(d) / d


def system_entropy_rate(m, t: float, rho) -> float:
    """-Tr[L(t) rho ln rho]."""
    rho = np.asarray(rho, dtype=complex)
    return float(-np.trace(liouvillian_apply(m, t, rho) @ _log_state(rho)).real)


def excess_rate_relative_entropy(m, t: float, rho, ssi) -> float:
    """Tr[L(t) rho ln pi_t]."""
    rho = np.asarray(rho, dtype=complex)
    return float(np.trace(liouvillian_apply(m, t, rho) @ matrix_log_pd(ssi.pi)).real)


def excess_rate_weights(m, t: float, rho, ssi) -> float:
    """sum_k Tr[L_k^dag L_k rho] ln w_k."""
    _, ls = m.evaluate(t)
    return _weights_rate(ls, np.asarray(rho, dtype=complex), ssi)


def _weights_rate(ls, rho: np.ndarray, ssi) -> float:
    if not ssi.has_weights:
        raise MissingWeights("steady state carries no privileged weights for every jump")
    if not len(ls):
        return 0.0
    c = np.stack(ls)
    # Tr[L^dag L rho] = Tr[L rho L^dag]
    occ = np.einsum("kij,jl,kil->k", c, rho, c.conj()).real
    return float(occ @ np.log(ssi.weights))


def nonadiabatic_rate(m, t: float, rho, ssi) -> EntropyRates:
    """All entropy rates at (t, rho); S_na_dot = S_dot + S_ex_dot_relent.

    S_ex_dot_weights is nan when the weights are unavailable, so the
    equivalence can be audited on models that fail the consistency checks.
    """
    rho = np.asarray(rho, dtype=complex)
    h, ls = m.evaluate(t)
    drho = apply_generator(h, ls, rho)
    w, v = hermitian_eig(rho)
    if w[0] <= LOG_FLOOR:
        raise SingularState(f"state has eigenvalue {w[0]:.3e}; mix it with the identity first")
    s = -float(np.sum(_xlogx(w)))
    s_dot = float(-np.trace(drho @ ((v * np.log(w)) @ dag(v))).real)
    ex_rel = float(np.trace(drho @ matrix_log_pd(ssi.pi)).real)
    try:
        ex_w = _weights_rate(ls, rho, ssi)
    except MissingWeights:
        ex_w = math.nan
    return EntropyRates(float(t), s, s_dot, ex_rel, ex_w, s_dot + ex_rel)


def default_fd_step(m, t: float) -> float:
    """1e-4 times the characteristic time 1/||L(t)||."""
    return 1e-4 / np.linalg.norm(m.liouvillian(t), 2)


def fd_relative_entropy_rate(m, t: float, rho, ssi, h: float | None = None) -> float:
    """(D(rho_t || pi_t) - D(rho_{t+h} || pi_t)) / h with the generator frozen at t."""
    if h is None:
        h = default_fd_step(m, t)
    rho = np.asarray(rho, dtype=complex)
    (_, _), (_, rho_h) = propagate(m, rho, t, t + h, h, frozen_at=t)
    return (relative_entropy(rho, ssi.pi) - relative_entropy(rho_h, ssi.pi)) / h


def vn_derivative_residual(rho_fn, t: float, h: float) -> float:
    """|Tr[rho_t (ln rho_{t+h} - ln rho_{t-h}) / 2h]| for a callable t -> rho_t."""
    rho = np.asarray(rho_fn(t), dtype=complex)
    dlog = (_log_state(rho_fn(t + h)) - _log_state(rho_fn(t - h))) / (2.0 * h)
    return float(abs(np.trace(rho @ dlog)))


def rates_along(m, rho0, t0: float, t1: float, dt: float, stride: int = 1) -> list[EntropyRates]:
    """Propagate from rho0 and evaluate the rates every ``stride`` steps."""
    from .model import steady_state

    traj = propagate(m, rho0, t0, t1, dt)
    idx = list(range(0, len(traj), stride))
    if idx[-1] != len(traj) - 1:
        idx.append(len(traj) - 1)
    out = []
    fixed = None
    for i in idx:
        t, rho = traj[i]
        if m.protocol.is_constant:
            fixed = fixed or steady_state(m, t)
            ssi = fixed
        else:
            ssi = steady_state(m, t)
        out.append(nonadiabatic_rate(m, t, rho, ssi))
    return out


__all__ = [
    "EntropyRates", "RATE_COLUMNS", "von_neumann_entropy", "relative_entropy",
    "epsilon_mix", "system_entropy_rate", "excess_rate_relative_entropy",
    "excess_rate_weights", "nonadiabatic_rate", "default_fd_step",
    "fd_relative_entropy_rate", "vn_derivative_residual", "rates_along",
]
