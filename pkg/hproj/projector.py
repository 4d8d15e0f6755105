"""
Householder projector: low-rank orthogonal weight A = U S V^T

U and V are reflector chains, S = diag(1 x N, 0 x rest) is fixed by code and
never stored, so every parameter value yields exactly N unit singular values.
"""

import json
import logging
import pathlib
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import const
from .codec import PathLike, dump
from .errors import (
    DegenerateReflectorError,
    InvalidRankError,
    InvariantError,
    MalformedFileError,
    NonFiniteError,
    ShapeError,
)
from .householder import (
    ReflectorChain,
    apply_chain,
    apply_chain_transpose,
    chain_vjp,
    decode_chain,
    decompose_orthogonal,
    encode_chain,
)
from .linalg import Matrix, as_matrix, svd, sym_eig
from .wy import wy_apply, wy_from_chain

logger = logging.getLogger("hproj")


class ProjectorGrads(NamedTuple):
    """dL/du_i and dL/dv_i, one row per reflector"""

    u: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class ProjectorParams:
    """
    Learnable parameters of a Householder projector

    Args:
        out_dim: rows of A
        in_dim: columns of A
        rank: number N of unit singular values
        u_chain: reflectors of U in dimension out_dim
        v_chain: reflectors of V in dimension in_dim
        truncated: chains hold only N reflectors per side
    """

    out_dim: int
    in_dim: int
    rank: int
    u_chain: ReflectorChain
    v_chain: ReflectorChain
    truncated: bool = False

    def __post_init__(self):
        _check_rank(self.out_dim, self.in_dim, self.rank)
        if self.u_chain.dim != self.out_dim or self.v_chain.dim != self.in_dim:
            raise ShapeError(
                f"Chains of dim ({self.u_chain.dim}, {self.v_chain.dim}) "
                f"do not fit a {self.out_dim}x{self.in_dim} projector"
            )
        expected_u, expected_v = _chain_lengths(self.out_dim, self.in_dim, self.rank, self.truncated)
        if (self.u_chain.count, self.v_chain.count) != (expected_u, expected_v):
            raise ShapeError(
                f"Expected ({expected_u}, {expected_v}) reflectors, "
                f"got ({self.u_chain.count}, {self.v_chain.count})"
            )

    @property
    def shape(self):
        return self.out_dim, self.in_dim


def _check_rank(out_dim: int, in_dim: int, rank: int) -> None:
    if out_dim < 1 or in_dim < 1:
        raise ShapeError(f"Projector dims must be positive, got {out_dim}x{in_dim}")
    if not 1 <= rank <= min(out_dim, in_dim):
        raise InvalidRankError(f"rank must be in [1, {min(out_dim, in_dim)}], got {rank}")


def _chain_lengths(out_dim: int, in_dim: int, rank: int, truncated: bool):
    if truncated:
        return rank, rank
    return out_dim, in_dim


def projector_new(out_dim: int, in_dim: int, rank: int = const.DEFAULT_RANK, seed: int = 0, truncated: bool = False):
    """
    Randomly initialized projector, reflector vectors i.i.d. standard normal

    Args:
        out_dim: rows of A
        in_dim: columns of A
        rank: number of unit singular values
        seed: random seed, U vectors are drawn before V vectors
        truncated: keep only rank reflectors per side
    """
    _check_rank(out_dim, in_dim, rank)
    rng = np.random.default_rng(seed)
    count_u, count_v = _chain_lengths(out_dim, in_dim, rank, truncated)
    u = rng.standard_normal((count_u, out_dim))
    v = rng.standard_normal((count_v, in_dim))
    return ProjectorParams(
        out_dim,
        in_dim,
        rank,
        ReflectorChain(out_dim, u, np.zeros(count_u, dtype=bool)),
        ReflectorChain(in_dim, v, np.zeros(count_v, dtype=bool)),
        truncated,
    )


def nearest_orthogonal(a: Matrix) -> Matrix:
    """
    Frobenius-nearest (semi-)orthogonal matrix, the polar factor U V^T of the SVD
    """
    a = as_matrix(a)
    res = svd(a)
    k = min(a.shape)
    return res.U[:, :k] @ res.V[:, :k].T


def orthogonal_distance(a: Matrix) -> float:
    """|A - UV^T|_F, distance to the nearest (semi-)orthogonal matrix"""
    a = as_matrix(a)
    return float(np.linalg.norm(a - nearest_orthogonal(a)))


def _truncate(chain: ReflectorChain, count: int) -> ReflectorChain:
    """
    First reflectors of a decomposition; the rest leave e_1..e_count untouched
    """
    return ReflectorChain(chain.dim, chain.vectors[:count], chain.identity[:count])


def projector_from_pretrained(a: Matrix, rank: int = const.DEFAULT_RANK, truncated: bool = False) -> ProjectorParams:
    """
    Initialize from a pretrained weight by nearest-orthogonal mapping

    The singular vectors of ``a`` are decomposed into reflectors, so the
    full-rank reconstruction U V^T is the nearest orthogonal matrix to ``a``.
    """
    a = as_matrix(a, "pretrained weight")
    out_dim, in_dim = a.shape
    _check_rank(out_dim, in_dim, rank)
    res = svd(a)
    u_chain = decompose_orthogonal(res.U)
    v_chain = decompose_orthogonal(res.V)
    if truncated:
        u_chain, v_chain = _truncate(u_chain, rank), _truncate(v_chain, rank)
    p = ProjectorParams(out_dim, in_dim, rank, u_chain, v_chain, truncated)
    distance = float(np.linalg.norm(a - projector_forward(p)))
    logger.debug(f"nearest-orthogonal init {out_dim}x{in_dim} rank {rank}: |A - P|_F = {distance:.4f}")
    return p


def _frames(p: ProjectorParams, workers: int = 1):
    """U[:, :N] and V[:, :N] through the WY form"""
    u = wy_apply(wy_from_chain(p.u_chain, workers), np.eye(p.out_dim, p.rank))
    v = wy_apply(wy_from_chain(p.v_chain, workers), np.eye(p.in_dim, p.rank))
    return u, v


def projector_forward(p: ProjectorParams, workers: int = 1) -> Matrix:
    """
    Dense out_dim x in_dim matrix A = U S V^T
    """
    u, v = _frames(p, workers)
    return u @ v.T


def projector_apply(p: ProjectorParams, z) -> np.ndarray:
    """
    A z by chained rank-1 applies, A is never formed

    Args:
        p: projector
        z: vector of length in_dim, or in_dim x k matrix of column vectors
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != p.in_dim:
        raise ShapeError(f"Projector takes {p.in_dim} inputs, got {z.shape[0]}")
    y = apply_chain_transpose(p.v_chain, z)
    s = np.zeros((p.out_dim,) + z.shape[1:])
    s[: p.rank] = y[: p.rank]
    return apply_chain(p.u_chain, s)


def projector_backward(p: ProjectorParams, dA: Matrix) -> ProjectorGrads:
    """
    Gradients of a scalar loss w.r.t. every reflector vector

    Args:
        p: projector
        dA: dL/dA, out_dim x in_dim
    """
    dA = as_matrix(dA, "dA")
    if dA.shape != p.shape:
        raise ShapeError(f"dA must be {p.out_dim}x{p.in_dim}, got {dA.shape}")
    u = apply_chain(p.u_chain, np.eye(p.out_dim))
    v = apply_chain(p.v_chain, np.eye(p.in_dim))
    n = p.rank
    # dL/dU = dA V S^T, dL/dV = dA^T U S
    grad_u = np.zeros((p.out_dim, p.out_dim))
    grad_u[:, :n] = dA @ v[:, :n]
    grad_v = np.zeros((p.in_dim, p.in_dim))
    grad_v[:, :n] = dA.T @ u[:, :n]
    return ProjectorGrads(chain_vjp(p.u_chain, grad_u), chain_vjp(p.v_chain, grad_v))


def _step_chain(chain: ReflectorChain, grad: np.ndarray, lr: float, rng: np.random.Generator, side: str):
    vectors = chain.vectors - lr * grad
    vectors[chain.identity] = 0.0
    norms = np.linalg.norm(vectors, axis=1)
    for i in np.flatnonzero(~chain.identity & (norms < const.REFLECTOR_NORM_MIN)):
        logger.warning(f"{side} reflector {i} collapsed to norm {norms[i]:.3e}, re-drawing it")
        vectors[i] = rng.standard_normal(chain.dim)
    return chain.replace(vectors)


def gradient_step(
    p: ProjectorParams, grads: ProjectorGrads, lr: float, rng: Optional[np.random.Generator] = None
) -> ProjectorParams:
    """
    Plain gradient descent h <- h - lr g on every reflector vector

    Orthogonality of U and V holds for any vector values, so the new projector
    keeps its spectrum exactly. Identity placeholders stay placeholders.

    Args:
        p: projector
        grads: gradients from projector_backward
        lr: learning rate, 0 leaves the parameters unchanged
        rng: generator for re-drawing collapsed vectors
    """
    if lr < 0:
        raise ValueError(f"lr must be nonnegative, got {lr}")
    gu, gv = np.asarray(grads.u, dtype=np.float64), np.asarray(grads.v, dtype=np.float64)
    if gu.shape != p.u_chain.vectors.shape or gv.shape != p.v_chain.vectors.shape:
        raise ShapeError(f"Gradient shapes {gu.shape}, {gv.shape} do not match the projector")
    if not (np.all(np.isfinite(gu)) and np.all(np.isfinite(gv))):
        raise NonFiniteError("Gradients contain NaN or Inf")
    if lr == 0:
        return p
    rng = rng if rng is not None else np.random.default_rng(0)
    return ProjectorParams(
        p.out_dim,
        p.in_dim,
        p.rank,
        _step_chain(p.u_chain, gu, lr, rng, "u"),
        _step_chain(p.v_chain, gv, lr, rng, "v"),
        p.truncated,
    )


def projector_spectrum(p: ProjectorParams) -> np.ndarray:
    """
    Eigenvalues of the smaller Gram matrix of A, descending
    """
    a = projector_forward(p)
    gram = a.T @ a if p.in_dim <= p.out_dim else a @ a.T
    values, _ = sym_eig((gram + gram.T) / 2.0)
    return values


def spectral_error(p: ProjectorParams) -> float:
    """
    Largest deviation of the Gram spectrum from (1 x N, 0 x rest)
    """
    values = projector_spectrum(p)
    target = np.zeros_like(values)
    target[: p.rank] = 1.0
    return float(np.max(np.abs(values - target)))


@dump
def encode_projector(p: ProjectorParams) -> bytes:
    """
    .hproj container: one JSON header line, then the U and V chains as MATF blocks
    """
    header = {
        "out_dim": p.out_dim,
        "in_dim": p.in_dim,
        "rank": p.rank,
        "truncated": p.truncated,
        "version": const.CONTAINER_VERSION,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    return head + encode_chain(p.u_chain) + encode_chain(p.v_chain)


def decode_projector(buffer: bytes) -> ProjectorParams:
    line_end = buffer.find(b"\n")
    if line_end < 0:
        raise MalformedFileError("Missing projector header")
    try:
        header = json.loads(buffer[:line_end].decode("utf-8"))
        out_dim, in_dim, rank = int(header["out_dim"]), int(header["in_dim"]), int(header["rank"])
        version, truncated = int(header["version"]), bool(header.get("truncated", False))
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as e:
        raise MalformedFileError(f"Bad projector header: {e}") from e
    if version != const.CONTAINER_VERSION:
        raise MalformedFileError(f"Unsupported projector container version {version}")

    try:
        u_chain, offset = decode_chain(buffer, line_end + 1)
        v_chain, offset = decode_chain(buffer, offset)
    except (NonFiniteError, DegenerateReflectorError) as e:
        raise InvariantError(f"Loaded reflector vectors are invalid: {e}") from e
    if offset != len(buffer):
        raise MalformedFileError(f"{len(buffer) - offset} trailing bytes after projector")
    try:
        return ProjectorParams(out_dim, in_dim, rank, u_chain, v_chain, truncated)
    except (ShapeError, InvalidRankError) as e:
        raise InvariantError(f"Loaded projector violates its invariants: {e}") from e


def projector_save(p: ProjectorParams, path: PathLike) -> None:
    encode_projector(p, path=path)


def projector_load(path: PathLike) -> ProjectorParams:
    return decode_projector(pathlib.Path(path).read_bytes())
