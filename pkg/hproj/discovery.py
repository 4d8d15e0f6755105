"""
Closed-form latent direction discovery and traversal

The directions maximizing |A n|^2 under n^T n = 1 are the eigenvectors of
A^T A; the eigenvalues are the variation magnitudes.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import const
from .calculate import as_vector
from .errors import DirectionIndexError, DomainError, NonFiniteError, NonUnitDirectionError, ShapeError
from .linalg import Matrix, as_matrix, sym_eig

logger = logging.getLogger("hproj")

# a generator maps one latent vector to one output vector
Generator = Callable[[np.ndarray], np.ndarray]


def check_unit(n: np.ndarray, label: str = "direction") -> None:
    norm = float(np.linalg.norm(n))
    if abs(norm - 1.0) > const.UNIT_NORM_TOL:
        raise NonUnitDirectionError(f"{label} must have unit norm, got {norm:.12f}")


@dataclass(frozen=True)
class DirectionSet:
    """
    Orthonormal latent directions with their variation magnitudes

    Args:
        directions: d x k matrix, column i is direction n_i
        magnitudes: k values |A n_i|^2 sorted descending, None when unknown
            (e.g. directions loaded from a file)
    """

    directions: Matrix
    magnitudes: Optional[np.ndarray] = None

    def __post_init__(self):
        n = as_matrix(self.directions, "directions").copy()
        for i in range(n.shape[1]):
            check_unit(n[:, i], f"direction {i}")
        gram = n.T @ n
        off = float(np.max(np.abs(gram - np.eye(n.shape[1])), initial=0.0))
        if off > const.ORTHOGONALITY_TOL:
            raise DomainError(f"Directions are not orthogonal, max |n_i^T n_j| = {off:.3e}")
        n.setflags(write=False)
        object.__setattr__(self, "directions", n)

        if self.magnitudes is not None:
            mags = as_vector(self.magnitudes, "magnitudes", n.shape[1]).copy()
            if np.any(np.diff(mags) > 0) or np.any(mags < -1e-12):
                raise DomainError("magnitudes must be nonincreasing and nonnegative")
            mags.setflags(write=False)
            object.__setattr__(self, "magnitudes", mags)

    @property
    def dim(self) -> int:
        return self.directions.shape[0]

    @property
    def k(self) -> int:
        return self.directions.shape[1]

    def direction(self, index: int) -> np.ndarray:
        if not 0 <= index < self.k:
            raise DirectionIndexError(f"Direction index {index} out of range, set holds {self.k}")
        return self.directions[:, index]


@dataclass(frozen=True)
class TraversalSpec:
    """
    Edit G(z + alpha n) of one direction over a grid of strengths

    Args:
        index: direction index in the DirectionSet
        strengths: alpha values, in output order
        base: latent code z
    """

    index: int
    strengths: Sequence[float]
    base: np.ndarray

    def __post_init__(self):
        strengths = as_vector(self.strengths, "strengths")
        if not np.all(np.isfinite(strengths)):
            raise NonFiniteError("Traversal strengths must be finite")
        object.__setattr__(self, "strengths", tuple(float(a) for a in strengths))
        object.__setattr__(self, "base", as_vector(self.base, "base"))


def sefa_directions(a: Matrix, top_k: Optional[int] = None) -> DirectionSet:
    """
    Top-k eigenvectors of A^T A by descending eigenvalue

    Args:
        a: weight matrix mapping latent codes to features
        top_k: number of directions, all in_dim when None
    """
    a = as_matrix(a, "weight")
    in_dim = a.shape[1]
    top_k = in_dim if top_k is None else top_k
    if not 1 <= top_k <= in_dim:
        raise ShapeError(f"top_k must be in [1, {in_dim}], got {top_k}")
    values, vectors = sym_eig(a.T @ a)
    # A^T A is PSD, only rounding makes eigenvalues negative
    magnitudes = np.maximum(values[:top_k], 0.0)
    logger.debug(f"sefa on {a.shape}: top magnitudes {magnitudes[:3]}")
    return DirectionSet(vectors[:, :top_k], magnitudes)


def variation_magnitude(a: Matrix, n) -> float:
    """
    |A n|^2 for a unit direction n
    """
    a = as_matrix(a, "weight")
    n = as_vector(n, "direction", a.shape[1])
    check_unit(n)
    y = a @ n
    return float(y @ y)


def eigen_clusters(directions: DirectionSet, tol: float = const.EIGEN_CLUSTER_TOL) -> List[List[int]]:
    """
    Group directions of (numerically) equal magnitude

    Directions inside one group span a degenerate eigenspace, so any rotation
    of them is an equally valid answer.
    """
    if directions.magnitudes is None:
        return [[i] for i in range(directions.k)]
    clusters: List[List[int]] = []
    for i, value in enumerate(directions.magnitudes):
        if clusters:
            head = directions.magnitudes[clusters[-1][0]]
            if abs(head - value) <= tol * max(1.0, abs(head)):
                clusters[-1].append(i)
                continue
        clusters.append([i])
    return clusters


def slerp(w1, w2, t: float) -> np.ndarray:
    """
    Spherical interpolation of direction, linear interpolation of norm

    Args:
        w1: start latent
        w2: end latent
        t: position, [0, 1] interpolates and values outside extrapolate
    """
    w1 = as_vector(w1, "w1")
    w2 = as_vector(w2, "w2", w1.shape[0])
    n1, n2 = float(np.linalg.norm(w1)), float(np.linalg.norm(w2))
    if n1 == 0.0 or n2 == 0.0:
        raise DomainError("slerp needs nonzero vectors")
    if t == 0.0:
        return w1.copy()
    if t == 1.0:
        return w2.copy()
    u1, u2 = w1 / n1, w2 / n2
    omega = math.acos(min(1.0, max(-1.0, float(u1 @ u2))))
    if omega < const.SLERP_MIN_ANGLE:
        logger.warning(f"slerp angle {omega:.3e} below {const.SLERP_MIN_ANGLE}, interpolating linearly")
        return (1.0 - t) * w1 + t * w2
    if math.pi - omega < const.SLERP_MIN_ANGLE:
        raise DomainError("slerp is undefined for antipodal vectors")
    sin_omega = math.sin(omega)
    direction = (math.sin((1.0 - t) * omega) * u1 + math.sin(t * omega) * u2) / sin_omega
    return direction * ((1.0 - t) * n1 + t * n2)


def traverse(g: Generator, spec: TraversalSpec, directions: DirectionSet) -> List[np.ndarray]:
    """
    Outputs G(z + alpha_j n) for every strength, in order
    """
    n = directions.direction(spec.index)
    if spec.base.shape[0] != directions.dim:
        raise ShapeError(f"Latent code has length {spec.base.shape[0]}, directions live in {directions.dim}")
    return [np.asarray(g(spec.base + alpha * n), dtype=np.float64) for alpha in spec.strengths]
