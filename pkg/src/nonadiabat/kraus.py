"""CPTP maps in Kraus form and the real-number decomposition of their
relative-entropy change with respect to the invariant state.

For Kraus operators obeying pi M_k pi^-1 = mu_k M_k, the change
Delta D = D(E(rho) || pi) - D(rho || pi) equals

    sum_{alpha, m, k} w^k_{alpha m} P_m ln(P'_alpha / (mu_k P_m))

with w^k_{alpha m} = |<e_alpha| M_k |p_m>|^2 in the eigenbases of rho and
E(rho). This module computes both sides.
"""
from dataclasses import dataclass
import math

import numpy as np

from .entropy import relative_entropy
from .errors import (
    DegenerateFixedPoint,
    DimensionMismatch,
    NotPrivileged,
    NotPositiveDefinite,
    SingularState,
)
from .operators import (
    LOG_FLOOR,
    as_matrix,
    dag,
    devectorize,
    hermitian_eig,
    hermitian_part,
    random_orthogonal,
    random_unitary,
    similarity_ratio,
)

TP_TOL = 1e-10
FIXED_POINT_GAP_MIN = 1e-9
CHOI_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class KrausMap:
    kraus: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.kraus:
            raise ValueError("a Kraus map needs at least one operator")
        shape = np.shape(self.kraus[0])
        for m in self.kraus:
            as_matrix(m)
            if np.shape(m) != shape:
                raise DimensionMismatch("Kraus operators differ in shape")

    @classmethod
    def from_list(cls, ops, check_tp: bool = True) -> "KrausMap":
        out = cls(tuple(np.asarray(m, dtype=complex) for m in ops))
        if check_tp:
            res = out.tp_residual()
            if res > TP_TOL:
                raise ValueError(f"sum M^dag M deviates from I by {res:.3e}")
        return out

    @property
    def dim(self) -> int:
        return self.kraus[0].shape[0]

    def tp_residual(self) -> float:
        s = sum(dag(m) @ m for m in self.kraus)
        return float(np.linalg.norm(s - np.eye(self.dim)))

    def superoperator(self) -> np.ndarray:
        return sum(np.kron(m.conj(), m) for m in self.kraus)

    def adjoint(self, x: np.ndarray) -> np.ndarray:
        return sum(dag(m) @ x @ m for m in self.kraus)


@dataclass(frozen=True, eq=False)
class PrivilegedKrausInfo:
    pi: np.ndarray
    mu: tuple[float, ...]
    gap: float = math.nan


@dataclass
class ClassicalDecomposition:
    P: np.ndarray
    P_prime: np.ndarray
    w: np.ndarray  # (K, alpha, m)
    W: np.ndarray  # (alpha, m)
    d_S: float
    d_ex: float
    delta_D: float
    convexity_bound: float
    support_anomaly: bool = False


def apply_map(e: KrausMap, rho) -> np.ndarray:
    """sum_k M_k rho M_k^dag."""
    rho = as_matrix(rho)
    if rho.shape[0] != e.dim:
        raise DimensionMismatch(f"state of dim {rho.shape[0]} for a dim-{e.dim} map")
    return sum(m @ rho @ dag(m) for m in e.kraus)


def invariant_state(e: KrausMap, return_gap: bool = False, unital_fallback: bool = True):
    """Fixed point of the map, from the null space of S - I.

    When the fixed space is degenerate but the map is unital, I/d is
    returned as the canonical invariant state (the gap is still reported).

    :raises DegenerateFixedPoint: if the second-smallest singular value of
        S - I is below 1e-9 and the map is not unital.
    :raises NotPositiveDefinite: if the fixed point is not full rank.
    """
    d = e.dim
    s = e.superoperator() - np.eye(d ** 2)
    _, sv, vh = np.linalg.svd(s)
    gap = float(sv[-2]) if d > 1 else math.inf
    if gap < FIXED_POINT_GAP_MIN:
        mixed = np.eye(d, dtype=complex) / d
        if not (unital_fallback and np.linalg.norm(apply_map(e, mixed) - mixed) <= 1e-12):
            raise DegenerateFixedPoint(f"fixed point is not unique (gap {gap:.3e})")
        pi = mixed
    else:
        pi = devectorize(vh[-1].conj(), d)
        pi = hermitian_part(pi / np.trace(pi))
        pi = pi / np.trace(pi).real
    wmin = np.linalg.eigvalsh(pi)[0]
    if wmin <= 1e-10:
        raise NotPositiveDefinite(f"invariant state has eigenvalue {wmin:.3e}")
    return (pi, gap) if return_gap else pi


def dual_map(e: KrausMap, pi: np.ndarray, x: np.ndarray) -> np.ndarray:
    """pi E^dag(pi^-1 x): the map's dual with respect to pi."""
    pi_inv = np.linalg.inv(pi)
    return pi @ e.adjoint(pi_inv @ x)


def dual_cptp_check(e: KrausMap, pi) -> tuple[bool, float]:
    """Certify the dual map through its Choi matrix.

    Returns (is_cptp, minimum Choi eigenvalue). The dual counts as CPTP when
    its Choi matrix is Hermitian and has no eigenvalue below -1e-9 and the
    dual preserves the trace to within 1e-9.
    """
    pi = as_matrix(pi)
    if np.linalg.eigvalsh(hermitian_part(pi))[0] <= LOG_FLOOR:
        raise SingularState("reference state is not invertible")
    d = e.dim
    choi = np.zeros((d * d, d * d), dtype=complex)
    tp_err = 0.0
    for i in range(d):
        for j in range(d):
            unit = np.zeros((d, d), dtype=complex)
            unit[i, j] = 1.0
            img = dual_map(e, pi, unit)
            choi += np.kron(unit, img)
            tp_err = max(tp_err, abs(np.trace(img) - (1.0 if i == j else 0.0)))
    herm_err = np.linalg.norm(choi - dag(choi)) / max(np.linalg.norm(choi), 1.0)
    min_eig = float(np.linalg.eigvalsh(hermitian_part(choi))[0])
    ok = herm_err <= CHOI_TOL and min_eig >= -CHOI_TOL and tp_err <= CHOI_TOL
    return bool(ok), min_eig


def extract_scaling_factors(e: KrausMap, pi, tol: float = 1e-8) -> list[float]:
    """mu_k with pi M_k pi^-1 = mu_k M_k, by entrywise ratio.

    :raises NotPrivileged: if some Kraus operator has inconsistent ratios.
    """
    pi = as_matrix(pi)
    pi_inv = np.linalg.inv(pi)
    return [similarity_ratio(pi, m, tol, pi_inv=pi_inv) for m in e.kraus]


def privileged_info(e: KrausMap, tol: float = 1e-8) -> PrivilegedKrausInfo:
    pi, gap = invariant_state(e, return_gap=True)
    return PrivilegedKrausInfo(pi, tuple(extract_scaling_factors(e, pi, tol)), gap)


def _eig_desc(rho: np.ndarray):
    w, v = hermitian_eig(rho)
    return w[::-1], v[:, ::-1]


def classical_decomposition(e: KrausMap, info: PrivilegedKrausInfo, rho,
                            rho_eig=None, out_eig=None) -> ClassicalDecomposition:
    """Real-number form of Delta D in the eigenbases of rho and E(rho).

    Eigenvalues are taken in descending order. ``rho_eig`` / ``out_eig``
    may supply (values, column eigenvectors) to fix a particular basis
    inside degenerate eigenspaces.
    """
    rho = as_matrix(rho)
    P, p_vecs = rho_eig if rho_eig is not None else _eig_desc(rho)
    out = apply_map(e, rho)
    Pp, e_vecs = out_eig if out_eig is not None else _eig_desc(out)
    mats = np.array(e.kraus)
    amp = np.einsum("ia,kij,jm->kam", e_vecs.conj(), mats, p_vecs)
    w = np.abs(amp) ** 2
    W = w.sum(axis=0)
    mu = np.asarray(info.mu, dtype=float)

    live_m = P > LOG_FLOOR
    live_a = Pp > LOG_FLOOR
    weight = w * P[None, None, :]  # w^k_{alpha m} P_m
    anomaly = bool(np.any(weight[:, ~live_a, :][:, :, live_m] > 1e-10))
    mask = live_m[None, None, :] & live_a[None, :, None]
    wt = np.where(mask, weight, 0.0)
    lnP = np.log(np.where(live_m, P, 1.0))
    lnPp = np.log(np.where(live_a, Pp, 1.0))
    lnmu = np.log(mu)

    d_S = float(np.sum(wt * lnPp[None, :, None]) - np.sum(wt * lnP[None, None, :]))
    d_ex = float(-np.sum(wt * lnmu[:, None, None]))
    log_ratio = lnPp[None, :, None] - lnmu[:, None, None] - lnP[None, None, :]
    delta_D = float(np.sum(wt * log_ratio))
    ratio = np.where(mask, np.exp(log_ratio), 0.0)
    bound = float(np.sum(wt * (ratio - 1.0)))
    return ClassicalDecomposition(np.asarray(P), np.asarray(Pp), w, W, d_S, d_ex,
                                  delta_D, bound, anomaly)


def delta_D_pair(e: KrausMap, info: PrivilegedKrausInfo, rho) -> tuple[float, float]:
    """(operator value, classical value) of D(E(rho)||pi) - D(rho||pi)."""
    rho = as_matrix(rho)
    op = relative_entropy(apply_map(e, rho), info.pi) - relative_entropy(rho, info.pi)
    return float(op), classical_decomposition(e, info, rho).delta_D


def mu_normalization_check(e: KrausMap, info: PrivilegedKrausInfo, basis=None) -> float:
    """max_alpha |sum_k (1/mu_k) <e_alpha| M_k M_k^dag |e_alpha> - 1|.

    ``basis`` holds the |e_alpha> as columns; the eigenbasis of pi by default.
    """
    if basis is None:
        basis = hermitian_eig(info.pi).eigenvectors
    s = sum(m @ dag(m) / mu for m, mu in zip(e.kraus, info.mu))
    diag = np.einsum("ia,ij,ja->a", basis.conj(), s, basis).real
    return float(np.max(np.abs(diag - 1.0)))


def build_detailed_balance_map(pi_eigs, basis, rates) -> tuple[KrausMap, PrivilegedKrausInfo]:
    """Kraus map from transition probabilities obeying detailed balance.

    ``rates[i, j]`` is the probability of a jump |pi_j> -> |pi_i> (i != j) and
    must satisfy rates[i, j] pi_j = rates[j, i] pi_i with column sums below 1.
    The first Kraus operator is the diagonal remainder; the rest are
    sqrt(rates[i, j]) |pi_i><pi_j| in (i, j) order.
    """
    p = np.asarray(pi_eigs, dtype=float)
    t = np.array(rates, dtype=float)
    d = len(p)
    np.fill_diagonal(t, 0.0)
    flux = t * p[None, :]
    if np.max(np.abs(flux - flux.T)) > 1e-12 * max(flux.max(), 1.0):
        raise ValueError("rates violate detailed balance with respect to pi")
    col = t.sum(axis=0)
    if np.any(col >= 1.0) or np.any(t < 0):
        raise ValueError("transition probabilities must be nonnegative with column sums < 1")
    basis = np.asarray(basis, dtype=complex)
    kets = [basis[:, i] for i in range(d)]
    ops = [sum(math.sqrt(1.0 - col[j]) * np.outer(kets[j], kets[j].conj()) for j in range(d))]
    mu = [1.0]
    for i in range(d):
        for j in range(d):
            if i != j and t[i, j] > 0:
                ops.append(math.sqrt(t[i, j]) * np.outer(kets[i], kets[j].conj()))
                mu.append(p[i] / p[j])
    pi = hermitian_part((basis * p) @ dag(basis))
    e = KrausMap.from_list(ops)
    return e, PrivilegedKrausInfo(pi, tuple(mu))


def generate_detailed_balance_map(d: int, seed: int, complex_basis: bool = True):
    """Random detailed-balance map around a random full-rank pi.

    Returns (KrausMap, PrivilegedKrausInfo) with mu_(i<-j) = pi_i / pi_j.
    """
    if not 2 <= d <= 8:
        raise ValueError("d must lie in [2, 8]")
    rng = np.random.default_rng(seed)
    while True:
        p = rng.uniform(0.2, 1.0, d)
        p /= p.sum()
        if np.min(np.diff(np.sort(p))) > 0.01 / d:
            break
    basis = random_unitary(d, rng) if complex_basis else random_orthogonal(d, rng)
    g = rng.uniform(0.1, 1.0, (d, d))
    g = 0.5 * (g + g.T)
    t = g * p[:, None]  # t_ij pi_j = g_ij pi_i pi_j, symmetric
    np.fill_diagonal(t, 0.0)
    t *= rng.uniform(0.3, 0.95) / t.sum(axis=0).max()
    return build_detailed_balance_map(p, basis, t)


def audit_map(e: KrausMap, states=(), n_random: int = 5, seed: int = 0,
              tol: float = 1e-8) -> dict:
    """Full monotonicity audit of one map, as a JSON-ready dict.

    A degenerate or singular fixed point and a non-privileged Kraus list are
    reported under ``error`` instead of raised.
    """
    from .operators import random_density

    report = {"tp_residual": e.tp_residual()}
    try:
        pi, gap = invariant_state(e, return_gap=True)
    except (DegenerateFixedPoint, NotPositiveDefinite) as exc:
        report["privileged"] = False
        report["error"] = f"{type(exc).__name__}: {exc}"
        return report
    report["fixed_point_gap"] = gap
    report["fixed_point_residual"] = float(np.linalg.norm(apply_map(e, pi) - pi))
    is_cptp, min_eig = dual_cptp_check(e, pi)
    report["dual_cptp"] = is_cptp
    report["dual_choi_min_eigenvalue"] = min_eig
    try:
        mu = extract_scaling_factors(e, pi, tol)
    except NotPrivileged as exc:
        report["privileged"] = False
        report["error"] = f"NotPrivileged: {exc}"
        return report
    report["privileged"] = True
    report["mu"] = mu
    info = PrivilegedKrausInfo(pi, tuple(mu), gap)
    report["mu_normalization_residual"] = mu_normalization_check(e, info)
    rng = np.random.default_rng(seed)
    rhos = [as_matrix(s) for s in states] + [random_density(e.dim, rng) for _ in range(n_random)]
    worst_dd, worst_gap, worst_stoch, worst_push = -math.inf, 0.0, 0.0, 0.0
    for rho in rhos:
        op, cl = delta_D_pair(e, info, rho)
        dec = classical_decomposition(e, info, rho)
        worst_dd = max(worst_dd, op, cl)
        worst_gap = max(worst_gap, abs(op - cl) / (1.0 + abs(op)))
        worst_stoch = max(worst_stoch, float(np.max(np.abs(dec.W.sum(axis=0) - 1.0))))
        worst_push = max(worst_push, float(np.max(np.abs(dec.W @ dec.P - dec.P_prime))))
    report["n_states"] = len(rhos)
    report["max_delta_D"] = worst_dd
    report["max_operator_classical_gap"] = worst_gap
    report["max_stochasticity_residual"] = worst_stoch
    report["max_push_forward_residual"] = worst_push
    return report


__all__ = [
    "KrausMap", "PrivilegedKrausInfo", "ClassicalDecomposition", "apply_map",
    "invariant_state", "dual_map", "dual_cptp_check", "extract_scaling_factors",
    "privileged_info", "classical_decomposition", "delta_D_pair", "mu_normalization_check",
    "build_detailed_balance_map", "generate_detailed_balance_map", "audit_map",
]
