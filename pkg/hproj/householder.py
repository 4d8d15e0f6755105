"""
Householder reflectors and reflector chains

A reflector is stored as its raw vector h, H = I - 2 h h^T / |h|^2; the
normalization happens inside every apply so gradient steps act on raw h.
"""

import logging
import math
import pathlib
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .calculate import as_vector, parallel_map, split_ranges
from .codec import PathLike, decode_matrix, dump, encode_matrix
from .const import ORTHOGONALITY_TOL, REFLECTOR_NORM_MIN
from .errors import DegenerateReflectorError, MalformedFileError, NonFiniteError, NotOrthogonalError, ShapeError
from .linalg import Matrix, as_matrix, orthogonality_error

logger = logging.getLogger("hproj")


@dataclass(frozen=True)
class ReflectorChain:
    """
    Ordered Householder vectors whose product H_1 H_2 ... H_m is orthogonal

    Args:
        dim: dimension d of every vector
        vectors: m x d array, row i is h_i
        identity: m flags marking identity placeholders (stored as zero rows)
    """

    dim: int
    vectors: np.ndarray
    identity: np.ndarray

    def __post_init__(self):
        assert self.dim >= 1, "dim must be greater than or equal to 1"
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.size == 0:
            vectors = vectors.reshape(0, self.dim)
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise ShapeError(f"Reflector vectors must be m x {self.dim}, got shape {vectors.shape}")
        identity = np.array(self.identity, dtype=bool).reshape(-1)
        if identity.shape[0] != vectors.shape[0]:
            raise ShapeError(f"{vectors.shape[0]} vectors but {identity.shape[0]} identity flags")
        if not np.all(np.isfinite(vectors)):
            raise NonFiniteError("Reflector vectors contain NaN or Inf")
        norms = np.linalg.norm(vectors, axis=1)
        for i in np.flatnonzero(~identity & (norms < REFLECTOR_NORM_MIN)):
            raise DegenerateReflectorError(float(norms[i]), int(i))
        vectors[identity] = 0.0
        vectors.setflags(write=False)
        identity.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "identity", identity)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    def __len__(self) -> int:
        return self.count

    def replace(self, vectors: np.ndarray) -> "ReflectorChain":
        """
        Same placeholders, new vectors
        """
        return ReflectorChain(self.dim, vectors, self.identity)


def chain_from_vectors(vectors, dim: Optional[int] = None) -> ReflectorChain:
    """
    Build a chain, all-zero rows become identity placeholders
    """
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2:
        if dim is None or v.size:
            raise ShapeError(f"Reflector vectors must be an m x d array, got shape {v.shape}")
        v = v.reshape(0, dim)
    return ReflectorChain(v.shape[1], v, ~np.any(v != 0.0, axis=1))


def identity_chain(dim: int, count: int = 0) -> ReflectorChain:
    return ReflectorChain(dim, np.zeros((count, dim)), np.ones(count, dtype=bool))


def reflector_apply(h, x, identity: bool = False) -> np.ndarray:
    """
    Compute H x as the rank-1 update x - (2/|h|^2) h (h^T x)

    Args:
        h: Householder vector of length d
        x: vector of length d or d x k matrix
        identity: treat h as an identity placeholder
    """
    h = as_vector(h, "h")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != h.shape[0]:
        raise ShapeError(f"Reflector of length {h.shape[0]} cannot act on {x.shape[0]} rows")
    if identity:
        return x.copy()
    nsq = float(h @ h)
    if math.sqrt(nsq) < REFLECTOR_NORM_MIN:
        raise DegenerateReflectorError(math.sqrt(nsq))
    if x.ndim == 1:
        return x - (2.0 / nsq) * float(h @ x) * h
    return x - (2.0 / nsq) * np.outer(h, h @ x)


def apply_chain(chain: ReflectorChain, x) -> np.ndarray:
    """
    H_1 H_2 ... H_m x, the last reflector acts first
    """
    y = np.asarray(x, dtype=np.float64)
    for i in range(chain.count - 1, -1, -1):
        y = reflector_apply(chain.vectors[i], y, bool(chain.identity[i]))
    return y


def apply_chain_transpose(chain: ReflectorChain, x) -> np.ndarray:
    """
    (H_1 ... H_m)^T x = H_m ... H_1 x, the first reflector acts first
    """
    y = np.asarray(x, dtype=np.float64)
    for i in range(chain.count):
        y = reflector_apply(chain.vectors[i], y, bool(chain.identity[i]))
    return y


def chain_accumulate(chain: ReflectorChain, workers: int = 1) -> Matrix:
    """
    Dense product H_1 H_2 ... H_m, identity for an empty chain

    Args:
        chain: reflector chain
        workers: column blocks accumulated in parallel
    """
    eye = np.eye(chain.dim)
    if workers == 1:
        return apply_chain(chain, eye)
    blocks = parallel_map(
        lambda cols: apply_chain(chain, eye[:, cols.start : cols.stop]), split_ranges(chain.dim, workers), workers
    )
    return np.hstack(blocks)


def decompose_orthogonal(m: Matrix) -> ReflectorChain:
    """
    Decompose an orthogonal matrix into exactly d reflectors

    Reflector i maps the remaining part of column i onto e_i, so that
    H_d ... H_1 M = I and M = H_1 ... H_d. Columns already equal to e_i give
    identity placeholders.
    """
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"Only square matrices can be decomposed, got shape {m.shape}")
    error = orthogonality_error(m)
    if error > ORTHOGONALITY_TOL:
        raise NotOrthogonalError(error)

    d = m.shape[0]
    r = m.copy()
    vectors = np.zeros((d, d))
    identity = np.zeros(d, dtype=bool)
    for i in range(d):
        x = r[i:, i]
        rest = float(x[1:] @ x[1:])
        norm = math.sqrt(float(x[0]) ** 2 + rest)
        v = np.zeros(d)
        v[i + 1 :] = x[1:]
        # x - |x| e_i without cancellation when x already points along e_i
        v[i] = -rest / (x[0] + norm) if x[0] > 0 else x[0] - norm
        vnorm = float(np.linalg.norm(v))
        if vnorm < REFLECTOR_NORM_MIN:
            identity[i] = True
            continue
        v /= vnorm
        vectors[i] = v
        r[i:, :] -= 2.0 * np.outer(v[i:], v[i:] @ r[i:, :])
    logger.debug(f"decomposed {d}x{d} orthogonal matrix, {int(identity.sum())} identity placeholders")
    return ReflectorChain(d, vectors, identity)


def symmetric_orthogonal_chain(eigvecs: Matrix, signs) -> ReflectorChain:
    """
    Chain of Q diag(signs) Q^T for orthonormal Q and signs in {-1, 1}

    Only eigenvectors with eigenvalue -1 contribute a reflector (h = u_j).
    """
    q = as_matrix(eigvecs, "eigvecs")
    signs = as_vector(signs, "signs", q.shape[1])
    if not np.all(np.isin(signs, (-1.0, 1.0))):
        raise ValueError("signs must be -1 or 1")
    return chain_from_vectors(q[:, signs < 0].T, dim=q.shape[0])


def chain_vjp(chain: ReflectorChain, upstream: Matrix) -> np.ndarray:
    """
    Gradient of a scalar loss with respect to every reflector vector

    Args:
        chain: reflector chain with accumulated product M
        upstream: dL/dM, d x d

    Returns:
        m x d array, row i is dL/dh_i; identity placeholders get zero rows
    """
    g = as_matrix(upstream, "upstream")
    d = chain.dim
    if g.shape != (d, d):
        raise ShapeError(f"upstream must be {d}x{d}, got {g.shape}")

    grads = np.zeros((chain.count, d))
    # t = P_k^T (G M^T) P_k with P_k = H_1 ... H_{k-1}
    t = g @ chain_accumulate(chain).T
    for k in range(chain.count):
        if chain.identity[k]:
            continue
        h = chain.vectors[k]
        nsq = float(h @ h)
        # dL/dH_k
        gk = t - (2.0 / nsq) * np.outer(t @ h, h)
        gh = gk @ h
        quad = float(h @ gh)
        grads[k] = -(2.0 / nsq) * (gh + gk.T @ h) + (4.0 / nsq**2) * quad * h
        t = gk - (2.0 / nsq) * np.outer(h, h @ gk)
    return grads


@dump
def encode_chain(chain: ReflectorChain) -> bytes:
    """
    MATF m x d block, identity placeholders as zero rows
    """
    return encode_matrix(chain.vectors)


def decode_chain(buffer: bytes, offset: int = 0) -> Tuple[ReflectorChain, int]:
    vectors, end = decode_matrix(buffer, offset)
    if vectors.shape[1] < 1:
        raise MalformedFileError("Reflector chain block has zero columns")
    return chain_from_vectors(vectors, dim=vectors.shape[1]), end


def read_chain(path: PathLike) -> ReflectorChain:
    buffer = pathlib.Path(path).read_bytes()
    chain, end = decode_chain(buffer)
    if end != len(buffer):
        raise MalformedFileError(f"{path}: trailing bytes after reflector chain")
    return chain
