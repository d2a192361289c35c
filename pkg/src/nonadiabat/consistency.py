"""Checks for thermodynamic consistency of a Lindblad model.

Every check returns a report fragment with a residual and a verdict;
nothing here raises on a physics failure, only on malformed input.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import NotPrivileged, UnpairedJump
from .operators import commutator, dag, matrix_log_pd, similarity_ratio

DEFAULT_TOL = 1e-9


def extract_rep_weights(pi, op, tol: float = 1e-8, pi_inv=None) -> float:
    """Scalar w with pi op pi^-1 = w op, by entrywise ratio.

    :raises NotPrivileged: if the entrywise ratios spread by more than ``tol``.
    :raises ZeroOperator: if ``op`` is zero.
    """
    return similarity_ratio(np.asarray(pi, dtype=complex), op, tol, pi_inv=pi_inv)


@dataclass
class CheckResult:
    passed: bool | None  # None means skipped
    residual: float
    tol: float
    detail: dict = field(default_factory=dict)


@dataclass
class ConsistencyReport:
    privileged: CheckResult
    detailed_balance: CheckResult
    time_reversal: CheckResult
    modular: CheckResult
    log_identity: CheckResult
    t: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed is not False for c in self._checks().values())

    def _checks(self) -> dict[str, CheckResult]:
        return {"privileged": self.privileged, "detailed_balance": self.detailed_balance,
                "time_reversal": self.time_reversal, "modular": self.modular,
                "log_identity": self.log_identity}

    def failures(self) -> list[str]:
        out = []
        for name, c in self._checks().items():
            if c.passed is False:
                culprit = c.detail.get("failing")
                out.append(f"{name}: {culprit}" if culprit else name)
        return out

    def to_flat(self) -> dict:
        """Flat mapping of named residuals and verdicts for JSON output."""
        flat = {"t": self.t, "passed": self.passed}
        for name, c in self._checks().items():
            flat[f"{name}_passed"] = c.passed
            flat[f"{name}_residual"] = c.residual
            flat[f"{name}_tol"] = c.tol
            for k, v in c.detail.items():
                flat[f"{name}_{k}"] = v
        return flat


def _rel(num: float, den: float) -> float:
    return num / den if den > 0 else num


def check_privileged(m, t: float, ssi, tol: float = DEFAULT_TOL) -> CheckResult:
    """Residuals of pi L_k pi^-1 = w_k L_k, [H, pi] = 0 and [sum L^dag L, pi] = 0."""
    h, ls = m.evaluate(t)
    pi = ssi.pi
    pi_inv = np.linalg.inv(pi)
    weights, jump_res = [], []
    for c in ls:
        norm = np.linalg.norm(c)
        if norm == 0:
            weights.append(math.nan)
            jump_res.append(0.0)
            continue
        try:
            w = extract_rep_weights(pi, c, tol=1.0, pi_inv=pi_inv)
        except NotPrivileged:
            w = math.nan
        if not np.isfinite(w):
            jump_res.append(math.inf)
        else:
            jump_res.append(float(np.linalg.norm(pi @ c @ pi_inv - w * c) / norm))
        weights.append(w)
    h_comm = float(np.linalg.norm(commutator(h, pi)))
    ltl = sum((dag(c) @ c for c in ls), np.zeros_like(pi))
    ltl_comm = float(np.linalg.norm(commutator(ltl, pi)))
    parts = {"jumps": max(jump_res, default=0.0), "[H,pi]": h_comm, "[sum LdagL,pi]": ltl_comm}
    worst = max(parts.values())
    failing = [k for k, v in parts.items() if not v <= tol]
    detail = {"weights": weights, "jump_residuals": jump_res,
              "h_commutator": h_comm, "ltl_commutator": ltl_comm}
    if failing:
        detail["failing"] = ", ".join(failing)
    return CheckResult(not failing, worst, tol, detail)


def check_local_detailed_balance(m, t: float, tol: float = DEFAULT_TOL) -> CheckResult:
    """Residual of L_k = L_pair^dag exp(ds_k / 2) relative to |L_k|."""
    _, ls = m.evaluate(t)
    res = []
    for k, spec in enumerate(m.jumps):
        if spec.pair is None or not 0 <= spec.pair < len(ls):
            raise UnpairedJump(f"jump {k} has no declared reverse")
        c = ls[k]
        rev = ls[spec.pair]
        diff = np.linalg.norm(c - dag(rev) * math.exp(spec.entropy_flow / 2.0))
        res.append(float(_rel(diff, np.linalg.norm(c))))
    worst = max(res, default=0.0)
    detail = {"pair_residuals": res}
    bad = [m.jumps[k].name or str(k) for k, r in enumerate(res) if not r <= tol]
    if bad:
        detail["failing"] = "jumps " + ", ".join(bad)
    return CheckResult(not bad, worst, tol, detail)


def check_time_reversal(m, t: float, tol: float = DEFAULT_TOL, enabled: bool = True) -> CheckResult:
    """Jumps must be real in the computational basis (Theta = complex conjugation)."""
    if not enabled:
        return CheckResult(None, 0.0, tol, {"skipped": True})
    _, ls = m.evaluate(t)
    res = [float(np.max(np.abs(c.imag), initial=0.0)) for c in ls]
    worst = max(res, default=0.0)
    detail = {"jump_imag_max": res}
    bad = [m.jumps[k].name or str(k) for k, r in enumerate(res) if not r <= tol]
    if bad:
        detail["failing"] = "jumps " + ", ".join(bad)
    return CheckResult(not bad, worst, tol, detail)


def check_modular_commutation(m, t: float, ssi, tol: float = DEFAULT_TOL) -> CheckResult:
    """Commutator of the generator with rho -> pi rho pi^-1, as superoperators."""
    lv = m.liouvillian(t)
    pi = ssi.pi
    mod = np.kron(np.linalg.inv(pi).T, pi)
    comm = np.linalg.norm(lv @ mod - mod @ lv)
    scale = np.linalg.norm(lv) * np.linalg.norm(mod)
    res = float(_rel(comm, scale))
    detail = {"commutator_norm": float(comm)}
    if not res <= tol:
        detail["failing"] = "[L, pi . pi^-1]"
    return CheckResult(res <= tol, res, tol, detail)


def verify_log_intertwining(pi, op, weight: float) -> float:
    """Frobenius norm of ln(pi) L - L ln(w pi)."""
    pi = np.asarray(pi, dtype=complex)
    return float(np.linalg.norm(matrix_log_pd(pi) @ op - op @ matrix_log_pd(weight * pi)))


def check_log_identity(m, t: float, ssi, tol: float = DEFAULT_TOL) -> CheckResult:
    _, ls = m.evaluate(t)
    res = []
    for c, w in zip(ls, ssi.weights):
        if np.linalg.norm(c) == 0:
            res.append(0.0)
        elif not np.isfinite(w):
            res.append(math.inf)
        else:
            res.append(verify_log_intertwining(ssi.pi, c, w))
    worst = max(res, default=0.0)
    detail = {"jump_residuals": res}
    if not worst <= tol:
        detail["failing"] = "ln(pi) L != L ln(w pi)"
    return CheckResult(worst <= tol, worst, tol, detail)


def audit(m, t: float, ssi=None, tolerances: dict | None = None,
          time_reversal: bool = True) -> ConsistencyReport:
    """Run every consistency check at protocol time t."""
    from .model import steady_state

    tols = {"privileged": DEFAULT_TOL, "detailed_balance": DEFAULT_TOL,
            "time_reversal": DEFAULT_TOL, "modular": DEFAULT_TOL,
            "log_identity": 1e-10}
    tols.update(tolerances or {})
    if ssi is None:
        ssi = steady_state(m, t)
    return ConsistencyReport(
        privileged=check_privileged(m, t, ssi, tols["privileged"]),
        detailed_balance=check_local_detailed_balance(m, t, tols["detailed_balance"]),
        time_reversal=check_time_reversal(m, t, tols["time_reversal"], time_reversal),
        modular=check_modular_commutation(m, t, ssi, tols["modular"]),
        log_identity=check_log_identity(m, t, ssi, tols["log_identity"]),
        t=float(t),
    )


def weight_entropy_mismatch(m, ssi) -> list[float]:
    """ln w_k minus the declared entropy flow, per jump."""
    return [math.log(w) - j.entropy_flow if np.isfinite(w) else math.nan
            for w, j in zip(ssi.weights, m.jumps)]


__all__ = [
    "extract_rep_weights", "CheckResult", "ConsistencyReport", "check_privileged",
    "check_local_detailed_balance", "check_time_reversal", "check_modular_commutation",
    "verify_log_intertwining", "check_log_identity", "audit", "weight_entropy_mismatch",
]
