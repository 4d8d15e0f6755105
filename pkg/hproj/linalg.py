"""
Dense float64 matrix primitives shared by every other module

A ``Matrix`` is a two dimensional float64 numpy array, row-major.
"""

import logging
from typing import List, NamedTuple, Tuple

import numpy as np

from .calculate import first_largest
from .const import (
    JACOBI_MAX_SWEEPS,
    JACOBI_RANK_TOL,
    JACOBI_TOL,
    PSD_CLAMP_TOL,
    PSD_ERROR_TOL,
    SYMMETRY_TOL,
)
from .errors import ConvergenceError, NonFiniteError, NotPSDError, NotSymmetricError, ShapeError

Matrix = np.ndarray

logger = logging.getLogger("hproj")


class SvdResult(NamedTuple):
    """
    Full singular value decomposition A = U diag(S) V^T

    Args:
        U: rows x rows orthogonal matrix
        S: min(rows, cols) singular values, nonincreasing
        V: cols x cols orthogonal matrix
    """

    U: Matrix
    S: np.ndarray
    V: Matrix

    def reconstruct(self) -> Matrix:
        k = len(self.S)
        return (self.U[:, :k] * self.S) @ self.V[:, :k].T


def as_matrix(a, name: str = "matrix") -> Matrix:
    """
    Validate and convert to a finite 2-D float64 array
    """
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be two dimensional, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return m


def _require_square(m: Matrix, name: str = "matrix") -> None:
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {m.shape}")


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a, b = as_matrix(a, "a"), as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"Cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm(a: Matrix) -> float:
    return float(np.linalg.norm(as_matrix(a)))


def orthogonality_error(m: Matrix) -> float:
    """
    ||M^T M - I||_F, the Gram matrix is taken on the smaller dimension
    """
    m = as_matrix(m)
    gram = m.T @ m if m.shape[0] >= m.shape[1] else m @ m.T
    return float(np.linalg.norm(gram - np.eye(gram.shape[0])))


def _check_symmetric(s: Matrix) -> None:
    scale = max(1.0, float(np.max(np.abs(s), initial=0.0)))
    asym = float(np.max(np.abs(s - s.T), initial=0.0))
    if asym > SYMMETRY_TOL * scale:
        raise NotSymmetricError(f"Matrix is not symmetric, max asymmetry {asym:.3e}")


def _fix_signs(vectors: Matrix) -> np.ndarray:
    """
    Signs that make the largest-magnitude entry of every column nonnegative
    """
    signs = np.ones(vectors.shape[1])
    for j in range(vectors.shape[1]):
        if vectors[first_largest(vectors[:, j]), j] < 0:
            signs[j] = -1.0
    return signs


def sym_eig(s: Matrix) -> Tuple[np.ndarray, Matrix]:
    """
    Eigen decomposition of a symmetric matrix

    Eigenvalues are returned in descending order, eigenvectors as columns with
    the largest-magnitude component made nonnegative (lowest index wins ties).
    """
    s = as_matrix(s)
    _require_square(s)
    _check_symmetric(s)
    try:
        values, vectors = np.linalg.eigh((s + s.T) / 2.0)
    except np.linalg.LinAlgError as e:
        raise ConvergenceError(f"Symmetric eigen solver did not converge: {e}", sweeps=0) from e
    values = values[::-1].copy()
    vectors = vectors[:, ::-1].copy()
    vectors *= _fix_signs(vectors)
    return values, vectors


def _round_robin(n: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Parallel ordering: every round is a set of disjoint column pairs, one sweep covers all pairs
    """
    players = list(range(n)) + ([-1] if n % 2 else [])
    k = len(players)
    rounds = []
    for _ in range(k - 1):
        pairs = [(players[i], players[k - 1 - i]) for i in range(k // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        if pairs:
            rounds.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _complete_basis(q: Matrix, m: int) -> Matrix:
    """
    Extend orthonormal columns q (m x r) to an m x m orthogonal matrix
    """
    r = q.shape[1]
    if r == m:
        return q
    if r == 0:
        return np.eye(m)
    full, _ = np.linalg.qr(q, mode="complete")
    return np.hstack([q, full[:, r:]])


def _jacobi_tall(a: Matrix) -> SvdResult:
    m, n = a.shape
    g = a.copy()
    v = np.eye(n)
    fro = float(np.linalg.norm(a))
    floor = (JACOBI_RANK_TOL * fro) ** 2
    rounds = _round_robin(n)

    for sweep in range(1, JACOBI_MAX_SWEEPS + 1):
        rotated = False
        for p, q in rounds:
            gp, gq = g[:, p], g[:, q]
            alpha = np.einsum("ij,ij->j", gp, gp)
            beta = np.einsum("ij,ij->j", gq, gq)
            gamma = np.einsum("ij,ij->j", gp, gq)
            active = (alpha > floor) & (beta > floor) & (np.abs(gamma) > JACOBI_TOL * np.sqrt(alpha * beta))
            if not active.any():
                continue
            rotated = True
            zeta = (beta - alpha) / (2.0 * np.where(active, gamma, 1.0))
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = np.where(active, 1.0 / np.sqrt(1.0 + t * t), 1.0)
            s = np.where(active, c * t, 0.0)
            vp, vq = v[:, p], v[:, q]
            g[:, p], g[:, q] = c * gp - s * gq, s * gp + c * gq
            v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            logger.debug(f"jacobi svd {a.shape} converged after {sweep} sweeps")
            break
    else:
        raise ConvergenceError(f"Jacobi SVD did not converge within {JACOBI_MAX_SWEEPS} sweeps", JACOBI_MAX_SWEEPS)

    sigma = np.linalg.norm(g, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, g, v = sigma[order], g[:, order], v[:, order]

    signs = _fix_signs(v)
    v *= signs
    g *= signs

    rank = int(np.count_nonzero(sigma > JACOBI_RANK_TOL * fro)) if fro > 0 else 0
    u = _complete_basis(g[:, :rank] / sigma[:rank], m)
    return SvdResult(U=u, S=sigma, V=v)


def svd(a: Matrix) -> SvdResult:
    """
    Full SVD by one-sided Jacobi rotations

    Wide matrices are decomposed through their transpose.
    """
    a = as_matrix(a)
    rows, cols = a.shape
    if rows < 1 or cols < 1:
        raise ShapeError(f"svd needs a non-empty matrix, got shape {a.shape}")
    if rows >= cols:
        return _jacobi_tall(a)
    res = _jacobi_tall(a.T)
    return SvdResult(U=res.V, S=res.S, V=res.U)


def sqrtm_psd(s: Matrix) -> Matrix:
    """
    Symmetric square root of a positive semidefinite matrix
    """
    values, vectors = sym_eig(s)
    scale = max(1.0, float(np.max(np.abs(values), initial=0.0)))
    lowest = float(values.min(initial=0.0))
    if lowest < -PSD_ERROR_TOL * scale:
        raise NotPSDError(lowest)
    if lowest < -PSD_CLAMP_TOL * scale:
        logger.warning(f"clamping negative eigenvalue {lowest:.3e} to 0 in sqrtm_psd")
    root = (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T
    return (root + root.T) / 2.0
