"""
Toy disentanglement experiment

A small layered generator whose modulation weights are Householder projectors
is fit to a synthetic linear factor model by plain gradient descent, then the
closed-form directions of its first layer are matched against the true factors.
The same run with an unconstrained dense first layer is the baseline.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import const
from .calculate import as_vector, derive_rng
from .discovery import DirectionSet, eigen_clusters, sefa_directions
from .errors import DomainError, ShapeError, TrainingError
from .householder import chain_accumulate
from .linalg import Matrix, as_matrix, orthogonality_error
from .projector import (
    ProjectorParams,
    gradient_step,
    projector_backward,
    projector_forward,
    projector_from_pretrained,
    projector_new,
    spectral_error,
)

logger = logging.getLogger("hproj")


@dataclass(frozen=True)
class GroundTruthFactors:
    """
    Linear factor model y = M z + b + noise

    Args:
        directions: d x n_true orthonormal factor directions
        gains: n_true positive factor gains
        mixing: out_dim x d mixing map M
        bias: out_dim offset b
        noise: standard deviation of the additive Gaussian noise
    """

    directions: Matrix
    gains: np.ndarray
    mixing: Matrix
    bias: np.ndarray
    noise: float = 0.0

    def __post_init__(self):
        directions = as_matrix(self.directions, "directions")
        gains = as_vector(self.gains, "gains", directions.shape[1])
        mixing = as_matrix(self.mixing, "mixing")
        bias = as_vector(self.bias, "bias", mixing.shape[0])
        if mixing.shape[1] != directions.shape[0]:
            raise ShapeError(f"mixing map takes {mixing.shape[1]} inputs, directions live in {directions.shape[0]}")
        if orthogonality_error(directions) > 1e-10:
            raise DomainError("Factor directions must be orthonormal")
        if np.any(gains <= 0):
            raise DomainError("Factor gains must be positive")
        if self.noise < 0:
            raise DomainError(f"noise must be nonnegative, got {self.noise}")
        for name, value in (("directions", directions), ("gains", gains), ("mixing", mixing), ("bias", bias)):
            value = value.copy()
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def latent_dim(self) -> int:
        return self.directions.shape[0]

    @property
    def n_true(self) -> int:
        return self.directions.shape[1]

    @property
    def out_dim(self) -> int:
        return self.mixing.shape[0]

    def target(self, z) -> np.ndarray:
        """Noise-free M z + b, z holds one latent per row"""
        return np.asarray(z, dtype=np.float64) @ self.mixing.T + self.bias

    def sample(self, count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        z = rng.standard_normal((count, self.latent_dim))
        y = self.target(z)
        if self.noise > 0:
            y = y + self.noise * rng.standard_normal(y.shape)
        return z, y


def make_ground_truth(
    d: int, n_true: int, out_dim: int = const.TOY_OUT_DIM, seed: int = 0, noise: float = 0.0
) -> GroundTruthFactors:
    """
    Seeded factor model whose data variance lives on the factor directions

    Directions come from the QR factor of a Gaussian matrix, gains are spaced
    logarithmically over GAIN_RANGE and M = Q diag(gains) F^T for an orthonormal
    output frame Q, so the right singular vectors of M are the factors.

    Args:
        d: latent dimension
        n_true: number of factors
        out_dim: output dimension
        seed: random seed
        noise: additive noise level
    """
    if not 1 <= n_true <= d:
        raise ShapeError(f"n_true must be in [1, {d}], got {n_true}")
    if n_true > out_dim:
        raise ShapeError(f"n_true {n_true} factors do not fit {out_dim} outputs")
    rng = np.random.default_rng(seed)
    directions, _ = np.linalg.qr(rng.standard_normal((d, d)))
    directions = directions[:, :n_true]
    gains = np.geomspace(const.GAIN_RANGE[0], const.GAIN_RANGE[1], n_true)
    frame, _ = np.linalg.qr(rng.standard_normal((out_dim, out_dim)))
    mixing = (frame[:, :n_true] * gains) @ directions.T
    bias = const.TOY_BIAS_SCALE * rng.standard_normal(out_dim)
    return GroundTruthFactors(directions, gains, mixing, bias, noise)


@dataclass(frozen=True)
class ToyLayer:
    """
    nonlinearity(A x + b) with A a Householder projector

    A layer built with ``projector=None`` and a ``weight`` matrix is the
    unconstrained dense baseline.
    """

    projector: Optional[ProjectorParams]
    bias: np.ndarray
    nonlinearity: str = const.NONLINEARITY_IDENTITY
    weight: Optional[Matrix] = None

    def __post_init__(self):
        assert self.nonlinearity in const.NONLINEARITIES, f"nonlinearity must be one of {const.NONLINEARITIES}"
        if (self.projector is None) == (self.weight is None):
            raise ShapeError("A layer takes either a projector or a dense weight")
        if self.weight is not None:
            weight = as_matrix(self.weight, "weight").copy()
            weight.setflags(write=False)
            object.__setattr__(self, "weight", weight)
        bias = as_vector(self.bias, "bias", self.shape[0]).copy()
        bias.setflags(write=False)
        object.__setattr__(self, "bias", bias)

    @property
    def dense(self) -> bool:
        return self.projector is None

    @property
    def shape(self) -> Tuple[int, int]:
        if self.dense:
            return self.weight.shape
        return self.projector.shape

    def matrix(self) -> Matrix:
        if self.dense:
            return self.weight
        return projector_forward(self.projector)


@dataclass(frozen=True)
class ToyGenerator:
    """
    Projector layers followed by an optional free dense head

    Args:
        layers: projector layers, the first one is the layer under study
        head_weight: out x hidden synthesis weight, None for no head
        head_bias: synthesis bias
    """

    layers: Tuple[ToyLayer, ...]
    head_weight: Optional[Matrix] = None
    head_bias: Optional[np.ndarray] = None

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("A toy generator needs at least one layer")
        for prev, layer in zip(layers, layers[1:]):
            if layer.shape[1] != prev.shape[0]:
                raise ShapeError(f"Layer takes {layer.shape[1]} inputs but the previous layer has {prev.shape[0]}")
        object.__setattr__(self, "layers", layers)
        if (self.head_weight is None) != (self.head_bias is None):
            raise ShapeError("head_weight and head_bias go together")
        if self.head_weight is not None:
            weight = as_matrix(self.head_weight, "head_weight").copy()
            if weight.shape[1] != layers[-1].shape[0]:
                raise ShapeError(f"Head takes {weight.shape[1]} inputs, layers emit {layers[-1].shape[0]}")
            bias = as_vector(self.head_bias, "head_bias", weight.shape[0]).copy()
            weight.setflags(write=False)
            bias.setflags(write=False)
            object.__setattr__(self, "head_weight", weight)
            object.__setattr__(self, "head_bias", bias)

    @property
    def latent_dim(self) -> int:
        return self.layers[0].shape[1]

    @property
    def out_dim(self) -> int:
        if self.head_weight is not None:
            return self.head_weight.shape[0]
        return self.layers[-1].shape[0]

    @property
    def projector(self) -> Optional[ProjectorParams]:
        """first-layer projector, None for a dense first layer"""
        return self.layers[0].projector


def _activate(tag: str, x: np.ndarray) -> np.ndarray:
    if tag == const.NONLINEARITY_TANH:
        return np.tanh(x)
    return x


def _activate_grad(tag: str, act: np.ndarray) -> np.ndarray:
    if tag == const.NONLINEARITY_TANH:
        return 1.0 - act * act
    return np.ones_like(act)


def _forward_batch(g: ToyGenerator, z: np.ndarray, weights: Sequence[Matrix]):
    """
    Returns the output and the input of every layer plus the head input
    """
    inputs = []
    x = z
    for layer, a in zip(g.layers, weights):
        inputs.append(x)
        x = _activate(layer.nonlinearity, x @ a.T + layer.bias)
    inputs.append(x)
    if g.head_weight is not None:
        x = x @ g.head_weight.T + g.head_bias
    return x, inputs


def toygen_forward(g: ToyGenerator, z) -> np.ndarray:
    """
    Apply every layer in order

    Args:
        g: generator
        z: latent vector, or n x latent_dim batch with one latent per row
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    batch = z[None, :] if single else z
    if batch.ndim != 2 or batch.shape[1] != g.latent_dim:
        raise ShapeError(f"Generator takes latents of length {g.latent_dim}, got shape {z.shape}")
    out, _ = _forward_batch(g, batch, [layer.matrix() for layer in g.layers])
    return out[0] if single else out


@dataclass(frozen=True)
class TrainConfig:
    """
    Args:
        seed: random seed of data, initialization and batches
        steps: gradient steps
        lr: learning rate, 0 freezes every parameter
        batch_size: mini-batch size, 0 for full batch
        loss: loss tag
        rank: rank N of the first-layer projector
        init: random | nearest (nearest-orthogonal map of the true mixing map)
        layer: projector | dense, the weight of the first layer
        hidden_dims: widths of extra projector layers before the output layer
        nonlinearity: activation of every projector layer
        head: train a free dense head after the projector layers
        train_size: number of fixed training latents
    """

    seed: int = 0
    steps: int = 500
    lr: float = 0.1
    batch_size: int = 0
    loss: str = const.LOSS_MSE
    rank: int = 3
    init: str = const.INIT_RANDOM
    layer: str = const.LAYER_PROJECTOR
    hidden_dims: Tuple[int, ...] = ()
    nonlinearity: str = const.NONLINEARITY_IDENTITY
    head: bool = True
    train_size: int = const.TOY_TRAIN_SIZE

    def __post_init__(self):
        assert self.steps >= 1, "steps must be greater than or equal to 1"
        assert self.lr >= 0, "lr must be greater than or equal to 0"
        assert self.batch_size >= 0, "batch_size must be greater than or equal to 0"
        assert self.loss == const.LOSS_MSE, f"only the {const.LOSS_MSE} loss is supported"
        assert self.init in const.INITS, f"init must be one of {const.INITS}"
        assert self.layer in const.LAYERS, f"layer must be one of {const.LAYERS}"
        assert not (
            self.layer == const.LAYER_DENSE and self.init == const.INIT_NEAREST
        ), "a dense first layer only supports random init"
        assert self.nonlinearity in const.NONLINEARITIES, f"nonlinearity must be one of {const.NONLINEARITIES}"
        assert self.train_size >= 1, "train_size must be greater than or equal to 1"
        assert all(w >= 1 for w in self.hidden_dims), "hidden_dims must be positive"
        object.__setattr__(self, "hidden_dims", tuple(int(w) for w in self.hidden_dims))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


@dataclass
class TrainHistory:
    """
    Traces recorded before training (index 0) and after every step

    Args:
        loss: full training set loss
        orthogonality: orthogonality error of U of the first layer
        spectral: spectral error of the first-layer projector

    The last two stay empty when the first layer is dense.
    """

    loss: List[float] = field(default_factory=list)
    orthogonality: List[float] = field(default_factory=list)
    spectral: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def init_generator(gt: GroundTruthFactors, cfg: TrainConfig) -> ToyGenerator:
    """
    Build the untrained generator of a config
    """
    widths = cfg.hidden_dims + (gt.out_dim,)
    rng = derive_rng(cfg.seed, 1)
    if cfg.init == const.INIT_NEAREST:
        assert widths[0] == gt.out_dim, "nearest init needs the first layer to emit out_dim features"
        first = ToyLayer(projector_from_pretrained(gt.mixing, cfg.rank), np.zeros(widths[0]), cfg.nonlinearity)
    elif cfg.layer == const.LAYER_DENSE:
        # entries of variance 1 / latent_dim
        weight = np.random.default_rng(int(rng.integers(2**32))).standard_normal((widths[0], gt.latent_dim))
        first = ToyLayer(None, np.zeros(widths[0]), cfg.nonlinearity, weight / np.sqrt(gt.latent_dim))
    else:
        p = projector_new(widths[0], gt.latent_dim, cfg.rank, seed=int(rng.integers(2**32)))
        first = ToyLayer(p, np.zeros(widths[0]), cfg.nonlinearity)
    layers = [first]
    for in_dim, out_dim in zip(widths, widths[1:]):
        p = projector_new(out_dim, in_dim, min(in_dim, out_dim), seed=int(rng.integers(2**32)))
        layers.append(ToyLayer(p, np.zeros(out_dim), cfg.nonlinearity))
    layers = tuple(layers)
    if not cfg.head:
        return ToyGenerator(layers)
    head_weight = const.TOY_HEAD_SCALE * rng.standard_normal((gt.out_dim, widths[-1]))
    return ToyGenerator(layers, head_weight, np.zeros(gt.out_dim))


class ToyTrainer:
    def __init__(self, gt: GroundTruthFactors, cfg: TrainConfig, logger: logging.Logger = None):
        """
        Fit a toy generator to a ground truth factor model

        Args:
            gt: ground truth factor model
            cfg: training config
            logger: logger, "hproj" by default
        """
        # Check Params
        if cfg.init == const.INIT_NEAREST:
            first = cfg.hidden_dims[0] if cfg.hidden_dims else gt.out_dim
            assert first == gt.out_dim, "nearest init needs hidden_dims[0] == out_dim"

        # Params
        self.gt = gt
        self.cfg = cfg
        self.logger = logger or logging.getLogger("hproj")

        # Need to init
        self.alive = False
        self.generator: Optional[ToyGenerator] = None
        self.history = TrainHistory()
        self.listeners = {
            const.EVENT_INIT: [],
            const.EVENT_STEP: [],
            const.EVENT_FINISH: [],
        }

    def __loss(self, g: ToyGenerator, z: np.ndarray, y: np.ndarray) -> float:
        out = toygen_forward(g, z)
        return float(np.mean((out - y) ** 2))

    def __record(self, g: ToyGenerator, z: np.ndarray, y: np.ndarray) -> float:
        loss = self.__loss(g, z, y)
        self.history.loss.append(loss)
        if g.projector is not None:
            self.history.orthogonality.append(orthogonality_error(chain_accumulate(g.projector.u_chain)))
            self.history.spectral.append(spectral_error(g.projector))
        return loss

    def __step(self, g: ToyGenerator, z: np.ndarray, y: np.ndarray, rng: np.random.Generator, step: int):
        weights = [layer.matrix() for layer in g.layers]
        out, inputs = _forward_batch(g, z, weights)
        err = out - y
        loss = float(np.mean(err * err))
        if not np.isfinite(loss):
            raise TrainingError(f"Loss diverged to {loss} at step {step}", step)
        if self.cfg.lr == 0:
            return g
        lr = self.cfg.lr

        d_act = 2.0 * err / err.size
        head_weight, head_bias = g.head_weight, g.head_bias
        if head_weight is not None:
            grad_w = d_act.T @ inputs[-1]
            grad_b = d_act.sum(axis=0)
            d_act = d_act @ head_weight
            head_weight = head_weight - lr * grad_w
            head_bias = head_bias - lr * grad_b

        layers: List[ToyLayer] = []
        for i in range(len(g.layers) - 1, -1, -1):
            layer = g.layers[i]
            d_pre = d_act * _activate_grad(layer.nonlinearity, inputs[i + 1])
            grad_a = d_pre.T @ inputs[i]
            d_act = d_pre @ weights[i]
            bias = layer.bias - lr * d_pre.sum(axis=0)
            if layer.dense:
                layers.insert(0, ToyLayer(None, bias, layer.nonlinearity, layer.weight - lr * grad_a))
                continue
            try:
                projector = gradient_step(layer.projector, projector_backward(layer.projector, grad_a), lr, rng)
            except DomainError as e:
                raise TrainingError(f"Step {step} failed: {e}", step) from e
            layers.insert(0, ToyLayer(projector, bias, layer.nonlinearity))
        return ToyGenerator(tuple(layers), head_weight, head_bias)

    def run(self) -> Tuple[ToyGenerator, TrainHistory]:
        """
        Train for cfg.steps steps, or until stop() is called from a listener
        """
        assert self.alive is False

        cfg = self.cfg
        z, y = self.gt.sample(cfg.train_size, derive_rng(cfg.seed, 0))
        step_rng = derive_rng(cfg.seed, 2)
        g = init_generator(self.gt, cfg)
        self.history = TrainHistory()
        initial = self.__record(g, z, y)
        self.logger.debug(f"toy training {cfg.layer} {cfg.init} init, rank {cfg.rank}: initial loss {initial:.6f}")

        self.alive = True
        self.__send_to_listeners(const.EVENT_INIT, g)
        for step in range(1, cfg.steps + 1):
            if not self.alive:
                break
            if cfg.batch_size == 0 or cfg.batch_size >= cfg.train_size:
                batch = slice(None)
            else:
                batch = step_rng.permutation(cfg.train_size)[: cfg.batch_size]
            g = self.__step(g, z[batch], y[batch], step_rng, step)
            loss = self.__record(g, z, y)
            if not np.isfinite(loss):
                raise TrainingError(f"Loss diverged to {loss} at step {step}", step)
            self.logger.debug(f"step {step}: loss {loss:.6f}")
            self.__send_to_listeners(const.EVENT_STEP, step, g, loss)

        self.alive = False
        self.generator = g
        self.__send_to_listeners(const.EVENT_FINISH, g, self.history)
        return g, self.history

    def stop(self) -> None:
        """
        Stop training after the current step
        """
        self.alive = False

    def add_listener(self, cls: str, listener: Callable[..., Any]) -> None:
        """
        Add a training listener

        Args:
            cls: Listener category, support: init, step, finish
            listener: init gets the generator; step gets (step, generator, loss);
                finish gets (generator, history)
        """
        self.listeners[cls].append(listener)

    def remove_listener(self, cls: str, listener: Callable[..., Any]) -> None:
        self.listeners[cls].remove(listener)

    def __send_to_listeners(self, cls: str, *args, **kwargs) -> None:
        for fun in self.listeners[cls]:
            fun(*args, **kwargs)


def train_toy(
    gt: GroundTruthFactors, cfg: TrainConfig, logger: logging.Logger = None
) -> Tuple[ToyGenerator, TrainHistory]:
    return ToyTrainer(gt, cfg, logger).run()


@dataclass(frozen=True)
class AlignmentReport:
    """
    Factor recovery of one discovered direction set

    Args:
        per_factor: best |cos| of every true factor, 0 when left unmatched
        matched: eigen-cluster index matched to every factor, -1 when unmatched
        clusters: direction indices of every eigen-cluster
        mean: mean of per_factor
    """

    per_factor: Tuple[float, ...]
    matched: Tuple[int, ...]
    clusters: Tuple[Tuple[int, ...], ...]
    mean: float

    def to_dict(self) -> dict:
        return {
            "per_factor": list(self.per_factor),
            "matched": list(self.matched),
            "clusters": [list(c) for c in self.clusters],
            "mean": self.mean,
        }


def match_factors(directions: DirectionSet, factors: Matrix) -> AlignmentReport:
    """
    Greedy matching of true factors to discovered directions without replacement

    Directions of equal magnitude form one eigen-cluster; a factor matched to a
    cluster with basis B scores |B^T f| and uses one of its slots, which is
    plain |cos| for single-direction clusters. Pairs are taken by descending
    score.
    """
    factors = as_matrix(factors, "factors")
    if factors.shape[0] != directions.dim:
        raise ShapeError(f"Factors live in {factors.shape[0]}, directions in {directions.dim}")
    clusters = eigen_clusters(directions)
    scores = np.array(
        [[float(np.linalg.norm(directions.directions[:, c].T @ f)) for c in clusters] for f in factors.T]
    ).reshape(factors.shape[1], len(clusters))
    capacity = [len(c) for c in clusters]

    per_factor = [0.0] * factors.shape[1]
    matched = [-1] * factors.shape[1]
    order = sorted(np.ndindex(*scores.shape), key=lambda fc: (-scores[fc], fc))
    for f, c in order:
        if matched[f] >= 0 or capacity[c] == 0:
            continue
        matched[f] = c
        per_factor[f] = min(1.0, scores[f, c])
        capacity[c] -= 1
    mean = float(np.mean(per_factor)) if per_factor else 0.0
    return AlignmentReport(tuple(per_factor), tuple(matched), tuple(tuple(c) for c in clusters), mean)


def evaluate_recovery(g: ToyGenerator, gt: GroundTruthFactors, top: Optional[int] = None) -> AlignmentReport:
    """
    Match the top closed-form directions of the first layer to the true factors

    Args:
        g: generator
        gt: factor model
        top: number of directions, the projector rank by default, n_true for a dense layer
    """
    first = g.layers[0]
    if g.latent_dim != gt.latent_dim:
        raise ShapeError(f"Generator latent dim {g.latent_dim} differs from the factor model's {gt.latent_dim}")
    if top is None:
        top = gt.n_true if first.dense else first.projector.rank
    report = match_factors(sefa_directions(first.matrix(), top), gt.directions)
    logger.debug(f"factor recovery mean |cos| {report.mean:.4f}")
    return report


def steps_to_reach(history: TrainHistory, level: float) -> Optional[int]:
    """
    First recorded step whose loss is at or below level, None if never reached
    """
    for step, loss in enumerate(history.loss):
        if loss <= level:
            return step
    return None


def random_subspace_baseline(d: int, n_true: int, rank: int, draws: int = 1000, seed: int = 0) -> float:
    """
    Monte-Carlo expectation of the recovery mean for a uniformly random rank-N subspace

    Args:
        d: latent dimension
        n_true: number of factors
        rank: discovered subspace dimension
        draws: Monte-Carlo draws
        seed: random seed
    """
    assert draws >= 1, "draws must be greater than or equal to 1"
    assert 1 <= n_true <= d and 1 <= rank <= d, "n_true and rank must be in [1, d]"
    means = []
    for i in range(draws):
        rng = derive_rng(seed, i)
        factors, _ = np.linalg.qr(rng.standard_normal((d, n_true)))
        basis, _ = np.linalg.qr(rng.standard_normal((d, rank)))
        means.append(match_factors(DirectionSet(basis, np.ones(rank)), factors).mean)
    return float(np.mean(means))
