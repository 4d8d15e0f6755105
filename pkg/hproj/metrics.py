"""
Quantitative metrics: path lengths, Frechet distance and attribute correlation
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, List

import numpy as np

from . import const
from .calculate import as_vector, derive_rng, parallel_map, split_ranges, standard_error
from .discovery import DirectionSet, Generator, TraversalSpec, check_unit, slerp, traverse
from .errors import DomainError, NotPSDError, NotSymmetricError, ShapeError, UndefinedCorrelationError
from .linalg import as_matrix, sqrtm_psd, sym_eig

logger = logging.getLogger("hproj")

# a distance compares two generator outputs
Distance = Callable[[np.ndarray, np.ndarray], float]


def squared_l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.sum(diff * diff))


def mse_distance(a: np.ndarray, b: np.ndarray) -> float:
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(diff * diff))


class RandomProjectionDistance:
    """
    Squared distance between fixed random tanh features

    A stand-in for a perceptual network: outputs are projected by a seeded
    Gaussian matrix, squashed by tanh, then compared in feature space.
    """

    def __init__(self, dim: int, features: int = 64, seed: int = 0):
        assert dim >= 1 and features >= 1, "dim and features must be positive"
        self.dim = dim
        self.features = features
        rng = np.random.default_rng(seed)
        self.weight = rng.standard_normal((features, dim)) / math.sqrt(dim)

    def embed(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.dim:
            raise ShapeError(f"Distance built for outputs of length {self.dim}, got {x.shape[0]}")
        return np.tanh(self.weight @ x)

    def __call__(self, a: np.ndarray, b: np.ndarray) -> float:
        return squared_l2_distance(self.embed(a), self.embed(b))


@dataclass(frozen=True)
class MetricResult:
    value: float
    stderr: float
    samples: int
    eps: float
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def _check_estimator(eps: float, samples: int) -> None:
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    assert samples >= 1, "samples must be greater than or equal to 1"


def _monte_carlo(sample: Callable[[int], float], samples: int, workers: int) -> np.ndarray:
    """
    Evaluate sample(i) for every index, blocks run on the pool

    The concatenation order is the index order whatever the worker count.
    """
    blocks = parallel_map(
        lambda r: np.array([sample(i) for i in r], dtype=np.float64), split_ranges(samples, workers), workers
    )
    return np.concatenate(blocks)


def _result(values: np.ndarray, eps: float, seed: int, name: str) -> MetricResult:
    result = MetricResult(float(np.mean(values)), standard_error(values), len(values), eps, seed)
    logger.debug(f"{name}: {result.value:.6g} +- {result.stderr:.3g} over {result.samples} samples")
    return result


def ppl(
    g: Generator,
    dist: Distance,
    latent_dim: int,
    eps: float = const.PPL_EPS,
    samples: int = const.METRIC_SAMPLES,
    seed: int = 0,
    workers: int = 1,
) -> MetricResult:
    """
    Perceptual path length

    Mean of d(G(slerp(w1, w2, t)), G(slerp(w1, w2, t + eps))) / eps^2 over seeded
    pairs w1, w2 ~ N(0, I) and t ~ U(0, 1); slerp extends past t = 1 for the second point.

    Args:
        g: generator
        dist: distance between two outputs
        latent_dim: length of latent codes
        eps: interpolation step
        samples: Monte-Carlo sample count
        seed: random seed, sample i only depends on (seed, i)
        workers: thread count
    """
    _check_estimator(eps, samples)
    if eps >= 1:
        raise DomainError(f"ppl eps must be below 1, got {eps}")

    def sample(i: int) -> float:
        rng = derive_rng(seed, i)
        w1 = rng.standard_normal(latent_dim)
        w2 = rng.standard_normal(latent_dim)
        t = rng.uniform(0.0, 1.0)
        return dist(g(slerp(w1, w2, t)), g(slerp(w1, w2, t + eps))) / eps**2

    return _result(_monte_carlo(sample, samples, workers), eps, seed, "ppl")


def pipl(
    g: Generator,
    dist: Distance,
    directions: DirectionSet,
    eps: float = const.PIPL_EPS,
    samples: int = const.METRIC_SAMPLES,
    seed: int = 0,
    workers: int = 1,
) -> MetricResult:
    """
    Perceptual path length along interpretable directions

    The second point is the interpolated latent perturbed by eps n, with n drawn
    uniformly from ``directions`` for every sample.
    """
    _check_estimator(eps, samples)
    if directions.k == 0:
        raise DomainError("pipl needs at least one direction")
    for i in range(directions.k):
        check_unit(directions.directions[:, i], f"direction {i}")

    def sample(i: int) -> float:
        rng = derive_rng(seed, i)
        w1 = rng.standard_normal(directions.dim)
        w2 = rng.standard_normal(directions.dim)
        t = rng.uniform(0.0, 1.0)
        n = directions.directions[:, rng.integers(directions.k)]
        w = slerp(w1, w2, t)
        return dist(g(w), g(w + eps * n)) / eps**2

    return _result(_monte_carlo(sample, samples, workers), eps, seed, "pipl")


@dataclass(frozen=True)
class GaussianStats:
    """
    Feature distribution N(mean, cov)
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = as_vector(self.mean, "mean")
        cov = as_matrix(self.cov, "cov")
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ShapeError(f"cov must be {mean.shape[0]}x{mean.shape[0]}, got {cov.shape}")
        if float(np.max(np.abs(cov - cov.T), initial=0.0)) > const.SYMMETRY_TOL:
            raise NotSymmetricError("Covariance is not symmetric")
        values, _ = sym_eig(cov)
        if values.size and values[-1] < -const.FRECHET_RADICAND_TOL:
            raise NotPSDError(float(values[-1]))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_samples(cls, x) -> "GaussianStats":
        """
        Args:
            x: n x k matrix, one sample per row
        """
        x = as_matrix(x, "samples")
        if x.shape[0] < 2:
            raise ShapeError(f"Need at least 2 samples to estimate a covariance, got {x.shape[0]}")
        cov = np.atleast_2d(np.cov(x, rowvar=False))
        return cls(x.mean(axis=0), (cov + cov.T) / 2.0)


def frechet_distance(p: GaussianStats, q: GaussianStats) -> float:
    """
    sqrt(|mu - mu'|^2 + tr(S + S' - 2 (S^1/2 S' S^1/2)^1/2))
    """
    if p.dim != q.dim:
        raise ShapeError(f"Cannot compare Gaussians of dim {p.dim} and {q.dim}")
    root = sqrtm_psd(p.cov)
    inner = root @ q.cov @ root
    cross = sqrtm_psd((inner + inner.T) / 2.0)
    diff = p.mean - q.mean
    radicand = float(diff @ diff + np.trace(p.cov) + np.trace(q.cov) - 2.0 * np.trace(cross))
    if radicand < -const.FRECHET_RADICAND_TOL:
        raise DomainError(f"Negative Frechet radicand {radicand:.3e}")
    return math.sqrt(max(radicand, 0.0))


def pearson_correlation(steps, preds) -> float:
    """
    Pearson coefficient, clipped to [-1, 1]
    """
    x = as_vector(steps, "steps")
    y = as_vector(preds, "preds", x.shape[0])
    if x.shape[0] < 2:
        raise ShapeError(f"Correlation needs at least 2 points, got {x.shape[0]}")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("Correlation is undefined for a constant series")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def traversal_correlation(
    g: Generator, spec: TraversalSpec, directions: DirectionSet, predictor: Callable[[np.ndarray], float]
) -> float:
    """
    Correlation between traversal strengths and an attribute predicted on the outputs
    """
    preds: List[float] = [float(predictor(out)) for out in traverse(g, spec, directions)]
    return pearson_correlation(spec.strengths, preds)
