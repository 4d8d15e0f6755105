"""
Compact WY representation H_1 ... H_m = I - 2 W Y^T

The factor 2 stays outside W (some references fold it into W).
"""

import json
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass
from typing import Dict, List, Tuple

import numpy as np

from . import const
from .calculate import as_vector, checksum, parallel_map
from .errors import DegenerateReflectorError, ShapeError
from .householder import ReflectorChain, chain_accumulate, chain_from_vectors
from .linalg import Matrix

logger = logging.getLogger("hproj")


@dataclass(frozen=True)
class WYForm:
    """
    Block reflector I - 2 W Y^T

    Args:
        dim: dimension d
        W: d x m matrix
        Y: d x m matrix
    """

    dim: int
    W: Matrix
    Y: Matrix

    def __post_init__(self):
        for name in ("W", "Y"):
            value = np.array(getattr(self, name), dtype=np.float64)
            if value.ndim == 1:
                value = value[:, None]
            if value.ndim != 2 or value.shape[0] != self.dim:
                raise ShapeError(f"{name} must have {self.dim} rows, got shape {value.shape}")
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        if self.W.shape != self.Y.shape:
            raise ShapeError(f"W {self.W.shape} and Y {self.Y.shape} differ")

    @property
    def size(self) -> int:
        """block size m"""
        return self.W.shape[1]


def wy_identity(dim: int) -> WYForm:
    return WYForm(dim, np.zeros((dim, 0)), np.zeros((dim, 0)))


def wy_from_reflector(h) -> WYForm:
    h = as_vector(h, "h")
    norm = float(np.linalg.norm(h))
    if norm < const.REFLECTOR_NORM_MIN:
        raise DegenerateReflectorError(norm)
    u = (h / norm)[:, None]
    return WYForm(h.shape[0], u, u)


def wy_merge(left: WYForm, right: WYForm) -> WYForm:
    """
    (I - 2 W_L Y_L^T)(I - 2 W_R Y_R^T) as one block

    W = [W_L | W_R - 2 W_L (Y_L^T W_R)], Y = [Y_L | Y_R]
    """
    if left.dim != right.dim:
        raise ShapeError(f"Cannot merge WY forms of dim {left.dim} and {right.dim}")
    if left.size == 0:
        return right
    if right.size == 0:
        return left
    w_right = right.W - 2.0 * left.W @ (left.Y.T @ right.W)
    return WYForm(left.dim, np.hstack([left.W, w_right]), np.hstack([left.Y, right.Y]))


def _merge_tree(n: int) -> List[List[Tuple[int, int, int]]]:
    """
    Midpoint split of n leaves grouped by node height

    Returns levels of (lo, mid, hi) merges; every merge of a level only needs
    results from lower levels.
    """
    levels: Dict[int, List[Tuple[int, int, int]]] = {}

    def visit(lo: int, hi: int) -> int:
        if hi - lo <= 1:
            return 0
        mid = (lo + hi) // 2
        height = 1 + max(visit(lo, mid), visit(mid, hi))
        levels.setdefault(height, []).append((lo, mid, hi))
        return height

    visit(0, n)
    return [levels[h] for h in sorted(levels)]


def wy_from_chain(chain: ReflectorChain, workers: int = 1) -> WYForm:
    """
    Build the WY form of a chain by balanced split-and-merge

    Leaves are single reflectors (identity placeholders are skipped); the merge
    tree only depends on the chain length, so the result does not depend on
    the worker count.

    Args:
        chain: reflector chain
        workers: thread count for leaf conversion and for merges of one level
    """
    assert workers >= 1, "workers must be greater than or equal to 1"
    active = [chain.vectors[i] for i in range(chain.count) if not chain.identity[i]]
    if not active:
        return wy_identity(chain.dim)

    nodes: Dict[Tuple[int, int], WYForm] = {}
    leaves = parallel_map(wy_from_reflector, active, workers)
    for i, form in enumerate(leaves):
        nodes[(i, i + 1)] = form

    for depth, merges in enumerate(_merge_tree(len(active)), start=1):
        results = parallel_map(lambda node: wy_merge(nodes[node[:2]], nodes[node[1:]]), merges, workers)
        for (lo, mid, hi), form in zip(merges, results):
            del nodes[(lo, mid)], nodes[(mid, hi)]
            nodes[(lo, hi)] = form
        logger.debug(f"wy merge level {depth}: {len(merges)} merges")
    return nodes[(0, len(active))]


def wy_apply(form: WYForm, x) -> np.ndarray:
    """
    x - 2 W (Y^T x) without forming the d x d matrix
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != form.dim:
        raise ShapeError(f"WY form of dim {form.dim} cannot act on {x.shape[0]} rows")
    if form.size == 0:
        return x.copy()
    return x - 2.0 * form.W @ (form.Y.T @ x)


def wy_to_dense(form: WYForm) -> Matrix:
    return np.eye(form.dim) - 2.0 * form.W @ form.Y.T


def accumulate(chain: ReflectorChain, method: str = const.METHOD_WY, workers: int = 1) -> Matrix:
    """
    Dense accumulation with the selected method

    Args:
        chain: reflector chain
        method: naive (sequential rank-1 updates) | wy
        workers: worker count
    """
    if method == const.METHOD_NAIVE:
        return chain_accumulate(chain)
    if method == const.METHOD_WY:
        return wy_to_dense(wy_from_chain(chain, workers))
    raise ValueError(f"Unknown accumulation method {method}, expected one of {const.METHODS}")


@dataclass(frozen=True)
class BenchReport:
    d: int
    m: int
    method: str
    workers: int
    ms_median: float
    reps: int
    checksum: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def bench_chain(d: int, m: int, seed: int) -> ReflectorChain:
    """
    Seeded standard normal chain used by the benchmark
    """
    rng = np.random.default_rng(seed)
    return chain_from_vectors(rng.standard_normal((m, d)))


def bench_accumulation(d: int, m: int, method: str, workers: int = 1, reps: int = 5, seed: int = 0) -> BenchReport:
    """
    Time full accumulation of a seeded chain to a dense matrix

    A warm-up run is discarded, then the median of ``reps`` monotonic-clock
    timings is reported.
    """
    assert reps >= const.BENCH_MIN_REPS, f"reps must be greater than or equal to {const.BENCH_MIN_REPS}"
    assert d >= 1 and m >= 0, "d must be positive and m nonnegative"
    assert method in const.METHODS, f"method must be one of {const.METHODS}"
    chain = bench_chain(d, m, seed)

    result = accumulate(chain, method, workers)
    timings = []
    for _ in range(reps):
        start = time.perf_counter()
        result = accumulate(chain, method, workers)
        timings.append((time.perf_counter() - start) * 1000.0)
    ms = max(statistics.median(timings), math.ulp(0.0))
    logger.debug(f"bench d={d} m={m} {method} workers={workers}: {ms:.3f}ms")
    return BenchReport(d=d, m=m, method=method, workers=workers, ms_median=ms, reps=reps, checksum=checksum(result))
