"""Driven Lindblad models, their Liouvillians, steady states and propagation.

A model is H(t) = H0 + sum_j lambda_j(t) H_j with jump operators
L_k(t) = c_k(t) B_k, where every lambda_j and c_k is a piecewise-linear
channel of the protocol (or a constant).
"""
from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np

from .errors import (
    DegenerateSteadyState,
    DimensionMismatch,
    IntegratorDrift,
    NotHermitian,
    NotPositiveDefinite,
    OutOfHorizon,
    UnresolvedReference,
)
from .operators import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_Z,
    dag,
    devectorize,
    hermitian_part,
    random_orthogonal,
    random_unitary,
    vectorize,
)

STEADY_GAP_MIN = 1e-9
STEADY_PD_MIN = 1e-10
DRIFT_TOL = 1e-8


@dataclass(frozen=True)
class Channel:
    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.times) == 0 or len(self.times) != len(self.values):
            raise ValueError("channel needs matching, non-empty breakpoint lists")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("channel breakpoints must be strictly increasing in t")

    @classmethod
    def constant(cls, value: float) -> "Channel":
        return cls((0.0,), (float(value),))

    @property
    def is_constant(self) -> bool:
        return all(v == self.values[0] for v in self.values)

    def __call__(self, t: float) -> float:
        if len(self.times) == 1:
            return self.values[0]
        return float(np.interp(t, self.times, self.values))


@dataclass(frozen=True)
class Protocol:
    channels: dict[str, Channel]
    horizon: tuple[float, float]

    def __post_init__(self):
        if not self.horizon[1] > self.horizon[0]:
            raise ValueError(f"empty horizon {self.horizon}")

    @property
    def is_constant(self) -> bool:
        return all(ch.is_constant for ch in self.channels.values())

    @property
    def breakpoints(self) -> list[float]:
        t0, t1 = self.horizon
        pts = {t for ch in self.channels.values() for t in ch.times if t0 <= t <= t1}
        return sorted(pts)

    def check_time(self, t: float) -> None:
        t0, t1 = self.horizon
        slack = 1e-9 * max(1.0, abs(t0), abs(t1))
        if not (t0 - slack <= t <= t1 + slack):
            raise OutOfHorizon(f"t = {t!r} outside horizon [{t0}, {t1}]")

    def value(self, name: str, t: float) -> float:
        self.check_time(t)
        return self.channels[name](t)


@dataclass(frozen=True)
class JumpSpec:
    """One jump operator L = c(t) * base, paired with its reverse jump.

    ``amplitude`` is either a channel name or a nonnegative constant.
    ``entropy_flow`` is the declared entropy delivered to the environment
    per jump (k_B = 1).
    """
    base: np.ndarray
    amplitude: str | float
    pair: int
    entropy_flow: float
    name: str = ""


@dataclass(frozen=True, eq=False)
class LindbladModel:
    dim: int
    h_base: np.ndarray
    h_terms: tuple[tuple[str, np.ndarray], ...]
    jumps: tuple[JumpSpec, ...]
    protocol: Protocol
    name: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.dim
        mats = [self.h_base] + [m for _, m in self.h_terms] + [j.base for j in self.jumps]
        for m in mats:
            if np.shape(m) != (d, d):
                raise DimensionMismatch(f"matrix of shape {np.shape(m)} in a dim-{d} model")
        for ch, m in self.h_terms:
            if ch not in self.protocol.channels:
                raise UnresolvedReference(f"Hamiltonian term references unknown channel {ch!r}")
        for m in [self.h_base] + [m for _, m in self.h_terms]:
            if np.linalg.norm(m - dag(m)) > 1e-10 * max(1.0, np.linalg.norm(m)):
                raise NotHermitian("Hamiltonian pieces must be Hermitian")
        n = len(self.jumps)
        for k, j in enumerate(self.jumps):
            if isinstance(j.amplitude, str):
                if j.amplitude not in self.protocol.channels:
                    raise UnresolvedReference(
                        f"jump {k} references unknown channel {j.amplitude!r}")
            elif j.amplitude < 0:
                raise ValueError(f"jump {k} has negative amplitude")
            if not 0 <= j.pair < n:
                raise UnresolvedReference(f"jump {k} pairs with missing jump {j.pair}")
            if self.jumps[j.pair].pair != k:
                raise ValueError(f"jump pairing is not an involution at jump {k}")

    def amplitude(self, k: int, t: float) -> float:
        a = self.jumps[k].amplitude
        if isinstance(a, str):
            return self.protocol.value(a, t)
        self.protocol.check_time(t)
        return float(a)

    def evaluate(self, t: float) -> tuple[np.ndarray, list[np.ndarray]]:
        self.protocol.check_time(t)
        h = self.h_base.astype(complex)
        for ch, m in self.h_terms:
            h = h + self.protocol.value(ch, t) * m
        ls = [self.amplitude(k, t) * j.base for k, j in enumerate(self.jumps)]
        return h, ls

    @cached_property
    def _superop_parts(self):
        d = self.dim
        eye = np.eye(d)

        def ham(h):
            return -1j * (np.kron(eye, h) - np.kron(h.T, eye))

        def diss(c):
            ctc = dag(c) @ c
            return np.kron(c.conj(), c) - 0.5 * (np.kron(eye, ctc) + np.kron(ctc.T, eye))

        return (ham(self.h_base),
                [ham(m) for _, m in self.h_terms],
                [diss(j.base) for j in self.jumps])

    def liouvillian(self, t: float) -> np.ndarray:
        h0, hs, ds = self._superop_parts
        out = h0.copy()
        for (ch, _), s in zip(self.h_terms, hs):
            out += self.protocol.value(ch, t) * s
        for k, s in enumerate(ds):
            out += self.amplitude(k, t) ** 2 * s
        return out


@dataclass(frozen=True, eq=False)
class SteadyStateInfo:
    pi: np.ndarray
    weights: tuple[float, ...]  # nan where no privileged weight could be extracted
    gap: float
    residual: float
    t: float

    @property
    def has_weights(self) -> bool:
        return bool(self.weights) and all(np.isfinite(w) for w in self.weights)


def evaluate_model(m: LindbladModel, t: float):
    """Return (H(t), [L_k(t)])."""
    return m.evaluate(t)


def liouvillian_apply(m: LindbladModel, t: float, rho) -> np.ndarray:
    """-i[H, rho] + sum_k D[L_k] rho at protocol time t."""
    h, ls = m.evaluate(t)
    return apply_generator(h, ls, rho)


def apply_generator(h: np.ndarray, ls, rho) -> np.ndarray:
    """-i[H, rho] + sum_k D[L_k] rho for already evaluated operators."""
    rho = np.asarray(rho, dtype=complex)
    out = -1j * (h @ rho - rho @ h)
    if len(ls):
        c = np.stack(ls)
        cd = c.conj().transpose(0, 2, 1)
        ctc = np.sum(cd @ c, axis=0)
        out += np.sum(c @ rho @ cd, axis=0) - 0.5 * (ctc @ rho + rho @ ctc)
    return out


def liouvillian_matrix(m: LindbladModel, t: float) -> np.ndarray:
    """(d^2 x d^2) column-stacking matrix of the generator at time t."""
    return m.liouvillian(t)


def steady_state(m: LindbladModel, t: float, weight_tol: float = 1e-8) -> SteadyStateInfo:
    """Kernel of the Liouvillian via SVD, with privileged weights attached.

    The second-smallest singular value is reported as the uniqueness gap.

    :raises DegenerateSteadyState: if the gap is below 1e-9.
    :raises NotPositiveDefinite: if the fixed point has an eigenvalue <= 1e-10.
    """
    from .consistency import extract_rep_weights

    lv = liouvillian_matrix(m, t)
    _, s, vh = np.linalg.svd(lv)
    gap = float(s[-2])
    if gap < STEADY_GAP_MIN:
        raise DegenerateSteadyState(f"Liouvillian kernel is not one-dimensional (gap {gap:.3e})")
    pi = devectorize(vh[-1].conj(), m.dim)
    pi = hermitian_part(pi / np.trace(pi))
    pi = pi / np.trace(pi).real
    wmin = np.linalg.eigvalsh(pi)[0]
    if wmin <= STEADY_PD_MIN:
        raise NotPositiveDefinite(f"steady state has eigenvalue {wmin:.3e}")
    residual = float(np.linalg.norm(lv @ vectorize(pi)))
    _, ls = m.evaluate(t)
    pi_inv = np.linalg.inv(pi)
    weights = []
    for c in ls:
        try:
            weights.append(extract_rep_weights(pi, c, weight_tol, pi_inv=pi_inv))
        except ValueError:
            weights.append(math.nan)
    return SteadyStateInfo(pi, tuple(weights), gap, residual, float(t))


def _certify_step(rho: np.ndarray, t: float) -> np.ndarray:
    rho = hermitian_part(rho)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > DRIFT_TOL:
        raise IntegratorDrift(f"trace drifted to {tr!r} at t = {t:.6g}")
    rho = rho / tr
    wmin = np.linalg.eigvalsh(rho)[0]
    if wmin < -DRIFT_TOL:
        raise IntegratorDrift(f"eigenvalue {wmin:.3e} at t = {t:.6g}")
    return rho


def time_grid(t0: float, t1: float, dt: float) -> np.ndarray:
    """Uniform grid from t0 to t1 with spacing dt; the last step may be short."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    n = max(int(math.ceil((t1 - t0) / dt - 1e-9)), 0)
    ts = t0 + dt * np.arange(n + 1)
    ts[-1] = t1
    return ts


def propagate(m: LindbladModel, rho0, t0: float, t1: float, dt: float,
              frozen_at: float | None = None) -> list[tuple[float, np.ndarray]]:
    """Classical fourth-order Runge-Kutta integration of rho' = L(t) rho.

    Every stored state is symmetrized and trace-renormalized; drift beyond
    1e-8 raises :class:`IntegratorDrift`. With ``frozen_at`` the generator is
    held at that protocol time.
    """
    m.protocol.check_time(t0)
    m.protocol.check_time(t1)
    ts = time_grid(t0, t1, dt)
    rho = _certify_step(np.asarray(rho0, dtype=complex), t0)
    d = m.dim
    out = [(float(ts[0]), rho)]
    if frozen_at is not None or m.protocol.is_constant:
        fixed = m.liouvillian(t0 if frozen_at is None else frozen_at)
        gen = lambda t: fixed  # noqa: E731
    else:
        gen = m.liouvillian
    l_left = gen(ts[0])
    for a, b in zip(ts[:-1], ts[1:]):
        h = b - a
        l_mid = gen(a + 0.5 * h)
        l_right = gen(b)
        v = vectorize(rho)
        k1 = l_left @ v
        k2 = l_mid @ (v + 0.5 * h * k1)
        k3 = l_mid @ (v + 0.5 * h * k2)
        k4 = l_right @ (v + h * k3)
        v = v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = _certify_step(devectorize(v, d), float(b))
        out.append((float(b), rho))
        l_left = l_right
    return out


def qubit_model(omega: float = 1.0, gamma: float = 1.0, nbar: float = 1.0,
                horizon: tuple[float, float] = (0.0, 10.0)) -> LindbladModel:
    """Thermally damped two-level system in the (|e>, |g>) basis.

    H = (omega/2) sigma_z, L- = sqrt(gamma (nbar+1)) sigma_-,
    L+ = sqrt(gamma nbar) sigma_+.
    """
    ds = math.log((nbar + 1.0) / nbar)
    jumps = (
        JumpSpec(SIGMA_MINUS, math.sqrt(gamma * (nbar + 1.0)), 1, ds, "minus"),
        JumpSpec(SIGMA_PLUS, math.sqrt(gamma * nbar), 0, -ds, "plus"),
    )
    return LindbladModel(2, 0.5 * omega * SIGMA_Z, (), jumps,
                         Protocol({}, tuple(horizon)), name="qubit")


def _distinct_spectrum(d: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        p = rng.uniform(0.5, 2.0, d)
        p /= p.sum()
        p.sort()
        if d == 1 or np.min(np.diff(p)) > 0.02 / d:
            return p


def generate_consistent_model(d: int, seed: int, ramp: bool = False,
                              horizon: tuple[float, float] = (0.0, 1.0),
                              complex_basis: bool = False):
    """Random model that satisfies every thermodynamic-consistency check.

    pi has distinct eigenvalues in a Haar-random basis {|pi_i>}; H is diagonal
    in that basis; each pair i<j carries jumps sqrt(g_ij)|pi_j><pi_i| and its
    reverse with rates obeying g_ij pi_i = g_ji pi_j. The basis is real
    orthogonal unless ``complex_basis`` (which fails the time-reversal check
    by design). With ``ramp`` an extra
    diagonal Hamiltonian term and a common amplitude scaling are driven
    linearly over the horizon, which leaves pi fixed.

    Returns (model, steady-state info).
    """
    if not 2 <= d <= 8:
        raise ValueError("d must lie in [2, 8]")
    rng = np.random.default_rng(seed)
    p = _distinct_spectrum(d, rng)
    u = random_unitary(d, rng) if complex_basis else random_orthogonal(d, rng)
    kets = [u[:, i] for i in range(d)]
    h0 = (u * rng.uniform(-1.0, 1.0, d)) @ dag(u)
    h0 = hermitian_part(h0)
    channels: dict[str, Channel] = {}
    h_terms: tuple = ()
    amp: str | None = None
    t0, t1 = horizon
    if ramp:
        channels["drive"] = Channel((t0, t1), (0.0, 1.0))
        channels["rate_scale"] = Channel((t0, t1), (1.0, 1.5))
        h1 = hermitian_part((u * rng.uniform(-1.0, 1.0, d)) @ dag(u))
        h_terms = (("drive", h1),)
        amp = "rate_scale"
    jumps = []
    for i in range(d):
        for j in range(i + 1, d):
            g = rng.uniform(0.2, 1.5)
            fwd = math.sqrt(g * math.sqrt(p[j] / p[i]))
            bwd = math.sqrt(g * math.sqrt(p[i] / p[j]))
            k = len(jumps)
            ds = math.log(p[j] / p[i])
            # base already carries the rate; the ramp multiplies both of a pair
            jumps.append(JumpSpec(fwd * np.outer(kets[j], kets[i].conj()),
                                  amp if amp else 1.0, k + 1, ds, f"{i}->{j}"))
            jumps.append(JumpSpec(bwd * np.outer(kets[i], kets[j].conj()),
                                  amp if amp else 1.0, k, -ds, f"{j}->{i}"))
    model = LindbladModel(d, h0, h_terms, tuple(jumps), Protocol(channels, horizon),
                          name=f"consistent-d{d}-s{seed}",
                          metadata={"pi_eigenvalues": p, "pi_basis": u})
    return model, steady_state(model, t0)


def constructed_pi(model: LindbladModel) -> np.ndarray:
    """The steady state a generated model was built around."""
    p = model.metadata["pi_eigenvalues"]
    u = model.metadata["pi_basis"]
    return hermitian_part((u * p) @ dag(u))


__all__ = [
    "Channel", "Protocol", "JumpSpec", "LindbladModel", "SteadyStateInfo",
    "evaluate_model", "liouvillian_apply", "liouvillian_matrix", "steady_state",
    "propagate", "time_grid", "qubit_model", "generate_consistent_model",
    "constructed_pi",
]
