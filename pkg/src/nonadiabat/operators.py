"""Dense complex-matrix helpers shared by every other module.

Vectorization uses column stacking throughout:

    A = [[a, b],
         [c, d]]   ->   vec(A) = (a, c, b, d)^T

so that vec(A X B) = (B^T kron A) vec(X).
"""
from typing import NamedTuple

import numpy as np

from .errors import (
    DimensionMismatch,
    NotHermitian,
    NotNormalized,
    NotPositive,
    SingularOperand,
    ZeroOperator,
    NotPrivileged,
)

TOL_HERM = 1e-10
LOG_FLOOR = 1e-13


class HermitianEigenSystem(NamedTuple):
    eigenvalues: np.ndarray  # real, ascending
    eigenvectors: np.ndarray  # orthonormal columns


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def dag(m: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(m, -1, -2))


def hermitian_part(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + dag(m))


def _check_hermitian(m: np.ndarray, tol: float = TOL_HERM) -> None:
    scale = max(np.linalg.norm(m), 1.0)
    err = np.linalg.norm(m - dag(m))
    if err > tol * scale:
        raise NotHermitian(f"||M - M^dag||_F = {err:.3e} exceeds {tol:.1e}*{scale:.3e}")


def hermitian_eig(m, tol: float = TOL_HERM) -> HermitianEigenSystem:
    """Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.

    The anti-Hermitian residue (below ``tol``) is discarded before the solve.
    """
    m = as_matrix(m)
    _check_hermitian(m, tol)
    w, v = np.linalg.eigh(hermitian_part(m))
    return HermitianEigenSystem(w, v)


def matrix_log_pd(m, floor: float = LOG_FLOOR) -> np.ndarray:
    """Principal logarithm V diag(ln w) V^dag of a positive-definite matrix.

    :raises SingularOperand: if any eigenvalue is at or below ``floor``.
    """
    w, v = hermitian_eig(m)
    if w[0] <= floor:
        raise SingularOperand(f"eigenvalue {w[0]:.3e} <= floor {floor:.1e}")
    return (v * np.log(w)) @ dag(v)


def matrix_func_herm(m, func) -> np.ndarray:
    """Apply a scalar function to a Hermitian matrix through its spectrum."""
    w, v = hermitian_eig(m)
    return (v * func(w)) @ dag(v)


def vectorize(m: np.ndarray) -> np.ndarray:
    return np.asarray(m).reshape(-1, order="F")


def devectorize(v: np.ndarray, dim: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    if dim is None:
        dim = int(round(np.sqrt(v.size)))
    if dim * dim != v.size:
        raise DimensionMismatch(f"vector of length {v.size} is not a square matrix")
    return v.reshape(dim, dim, order="F")


def build_left_right_superop(a, b) -> np.ndarray:
    """Superoperator of rho -> A rho B in the column-stacking convention."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"A is {a.shape}, B is {b.shape}")
    return np.kron(b.T, a)


def apply_superop(s: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return devectorize(s @ vectorize(rho), rho.shape[0])


def validate_density(rho, tol: float = TOL_HERM) -> np.ndarray:
    """Symmetrize and certify a density matrix.

    Returns (rho + rho^dag)/2 after checking Hermiticity, unit trace and
    positivity to within ``tol``.
    """
    rho = as_matrix(rho)
    _check_hermitian(rho, tol)
    rho = hermitian_part(rho)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > tol:
        raise NotNormalized(f"trace {tr!r} differs from 1 by more than {tol:.1e}")
    wmin = np.linalg.eigvalsh(rho)[0]
    if wmin < -tol:
        raise NotPositive(f"minimum eigenvalue {wmin:.3e} below -{tol:.1e}")
    return rho


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Half the trace norm of a - b for Hermitian a, b."""
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(hermitian_part(a - b)))))


def similarity_ratio(pi: np.ndarray, op: np.ndarray, tol: float,
                     pi_inv: np.ndarray | None = None) -> float:
    """Scalar c with pi op pi^-1 = c op, extracted entrywise.

    Ratios (pi op pi^-1)_ij / op_ij are taken over entries with
    |op_ij| > 1e-10 * max|op|; their mean is returned. The largest relative
    deviation of any ratio from the mean must not exceed ``tol``.

    :raises ZeroOperator: if ``op`` vanishes.
    :raises NotPrivileged: if the ratios disagree.
    """
    op = as_matrix(op)
    big = np.max(np.abs(op))
    if big == 0.0:
        raise ZeroOperator("operator is identically zero")
    if pi_inv is None:
        pi_inv = np.linalg.inv(pi)
    conj = pi @ op @ pi_inv
    mask = np.abs(op) > 1e-10 * big
    ratios = conj[mask] / op[mask]
    mean = ratios.mean()
    spread = float(np.max(np.abs(ratios - mean)) / abs(mean)) if mean != 0 else np.inf
    if spread > tol or abs(mean.imag) > tol * abs(mean) or mean.real <= 0:
        raise NotPrivileged(
            f"entrywise ratios disagree: relative spread {spread:.3e}, "
            f"mean {mean:.6g}"
        )
    return float(mean.real)


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random density matrix G G^dag / Tr with complex Ginibre G."""
    rank = dim if rank is None else rank
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = g @ dag(g)
    return hermitian_part(rho / np.trace(rho).real)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a complex Ginibre matrix."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random real orthogonal matrix, as a complex array."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return (q * np.sign(np.diag(r))).astype(complex)


# Two-level conventions: basis ordering (|e>, |g>).
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)  # |g><e|
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)  # |e><g|
