import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np

from .const import CHECKSUM_DIGITS, ENV_WORKERS
from .errors import ShapeError

T = TypeVar("T")
R = TypeVar("R")


def derive_rng(seed: int, index: int) -> np.random.Generator:
    """
    Random generator for one Monte-Carlo sample, depends only on (seed, index)
    """
    return np.random.default_rng([seed, index])


def checksum(a: np.ndarray) -> float:
    """
    Sum of all entries rounded to 1e-6
    """
    return round(float(np.sum(a)), CHECKSUM_DIGITS)


def default_workers() -> int:
    """
    Worker count from HPROJ_WORKERS, 1 if unset
    """
    value = os.environ.get(ENV_WORKERS, "")
    try:
        workers = int(value)
    except ValueError:
        return 1
    return max(workers, 1)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """
    Map in order, on a thread pool when workers > 1

    Results keep the order of items whatever the worker count.
    """
    assert workers >= 1, "workers must be greater than or equal to 1"
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def split_ranges(n: int, parts: int) -> List[range]:
    """
    Split range(n) into at most ``parts`` contiguous blocks
    """
    parts = max(1, min(parts, n)) if n else 1
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [range(bounds[i], bounds[i + 1]) for i in range(parts) if bounds[i] < bounds[i + 1]]


def first_largest(v: np.ndarray, rel_tol: float = 1e-12) -> int:
    """
    Index of the largest-magnitude entry, lowest index among ties
    """
    mags = np.abs(v)
    top = mags.max(initial=0.0)
    return int(np.flatnonzero(mags >= top * (1.0 - rel_tol))[0])


def standard_error(values: np.ndarray) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(n))


def as_vector(x, name: str = "vector", length: Optional[int] = None) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be one dimensional, got shape {v.shape}")
    if length is not None and v.shape[0] != length:
        raise ShapeError(f"{name} must have length {length}, got {v.shape[0]}")
    return v
