import logging
import math

import numpy as np
import pytest

from hproj import (
    DirectionIndexError,
    DirectionSet,
    DomainError,
    NonFiniteError,
    NonUnitDirectionError,
    ShapeError,
    TraversalSpec,
    eigen_clusters,
    projector_forward,
    projector_new,
    sefa_directions,
    slerp,
    svd,
    traverse,
    variation_magnitude,
)
from tests.utils import identity_generator, power_directions, random_orthogonal


def test_sefa_diagonal():
    ds = sefa_directions(np.diag([3.0, 1.0]))
    assert np.allclose(ds.magnitudes, [9.0, 1.0])
    assert np.allclose(ds.directions, np.eye(2))
    assert (ds.dim, ds.k) == (2, 2)


def test_sefa_orthogonal():
    q = random_orthogonal(5, np.random.default_rng(0))
    ds = sefa_directions(q, top_k=3)
    assert ds.k == 3
    assert np.allclose(ds.magnitudes, np.ones(3), atol=1e-12)


def test_sefa_random():
    a = np.random.default_rng(1).standard_normal((8, 5))
    ds = sefa_directions(a, top_k=3)
    expected = power_directions(a.T @ a, 3)
    for i in range(3):
        assert abs(ds.direction(i) @ expected[:, i]) > 1 - 1e-8
        assert variation_magnitude(a, ds.direction(i)) == pytest.approx(ds.magnitudes[i], rel=1e-10)
    assert np.all(np.diff(ds.magnitudes) <= 0)

    with pytest.raises(ShapeError):
        sefa_directions(a, top_k=0)
    with pytest.raises(ShapeError):
        sefa_directions(a, top_k=6)


def test_sefa_squared_singular_values():
    rng = np.random.default_rng(3)
    for shape in ((8, 5), (5, 5), (3, 6), (16, 8)):
        for _ in range(5):
            a = rng.standard_normal(shape)
            ds = sefa_directions(a)
            s = svd(a).S
            k = len(s)
            assert np.max(np.abs(ds.magnitudes[:k] - s**2)) < 1e-9
            assert np.max(np.abs(ds.magnitudes[:k] - np.linalg.svd(a, compute_uv=False) ** 2)) < 1e-9
            # a wide map has a null space of dimension cols - rows
            assert np.all(ds.magnitudes[k:] < 1e-9)


def test_projector_vs_gaussian():
    projector = projector_forward(projector_new(8, 8, 3, seed=2))
    balanced = sefa_directions(projector)
    assert np.allclose(balanced.magnitudes[:3], np.ones(3), atol=1e-9)
    assert np.all(balanced.magnitudes[3:] < 1e-9)
    assert eigen_clusters(balanced) == [[0, 1, 2], [3, 4, 5, 6, 7]]

    gaussian = sefa_directions(np.random.default_rng(3).standard_normal((8, 8)), top_k=3)
    assert gaussian.magnitudes[0] / gaussian.magnitudes[2] > 1.1
    assert len(eigen_clusters(gaussian)) == 3


def test_eigen_clusters_unknown_magnitudes():
    ds = DirectionSet(np.eye(3)[:, :2])
    assert ds.magnitudes is None
    assert eigen_clusters(ds) == [[0], [1]]


def test_direction_set_checks():
    with pytest.raises(NonUnitDirectionError):
        DirectionSet(np.array([[2.0], [0.0]]))
    skew = np.array([[1.0, math.sqrt(0.5)], [0.0, math.sqrt(0.5)]])
    with pytest.raises(DomainError):
        DirectionSet(skew)
    with pytest.raises(DomainError):
        DirectionSet(np.eye(2), [1.0, 2.0])

    ds = DirectionSet(np.eye(3), [3.0, 2.0, 1.0])
    with pytest.raises(DirectionIndexError):
        ds.direction(3)
    with pytest.raises(DirectionIndexError):
        ds.direction(-1)


def test_variation_magnitude():
    a = np.diag([3.0, 1.0])
    assert variation_magnitude(a, [1.0, 0.0]) == 9.0
    assert variation_magnitude(a, [0.6, 0.8]) == pytest.approx(0.36 * 9 + 0.64)
    with pytest.raises(NonUnitDirectionError):
        variation_magnitude(a, [1.0, 1.0])


def test_slerp():
    w1, w2 = np.array([1.0, 0.0]), np.array([0.0, 3.0])
    assert np.array_equal(slerp(w1, w2, 0.0), w1)
    assert np.array_equal(slerp(w1, w2, 1.0), w2)
    # halfway in angle and in norm
    mid = slerp(w1, w2, 0.5)
    assert np.allclose(mid, 2.0 * np.array([1.0, 1.0]) / math.sqrt(2), atol=1e-12)

    rng = np.random.default_rng(4)
    a, b = rng.standard_normal(6), rng.standard_normal(6)
    for t in (0.1, 0.37, 0.9):
        w = slerp(a, b, t)
        assert np.linalg.norm(w) == pytest.approx((1 - t) * np.linalg.norm(a) + t * np.linalg.norm(b))


def test_slerp_degenerate(caplog):
    w = np.array([1.0, 2.0, 3.0])
    with caplog.at_level(logging.WARNING, logger="hproj"):
        near = slerp(w, 2.0 * w, 0.5)
    assert np.allclose(near, 1.5 * w)
    assert "interpolating linearly" in caplog.text

    with pytest.raises(DomainError):
        slerp(w, -w, 0.5)
    with pytest.raises(DomainError):
        slerp(np.zeros(3), w, 0.5)
    with pytest.raises(ShapeError):
        slerp(w, np.ones(2), 0.5)


def test_traverse():
    ds = DirectionSet(np.eye(3), [3.0, 2.0, 1.0])
    base = np.array([0.5, -1.0, 2.0])
    outputs = traverse(identity_generator, TraversalSpec(1, [-2.0, 0.0, 3.0], base), ds)
    assert len(outputs) == 3
    assert np.array_equal(outputs[0], [0.5, -3.0, 2.0])
    assert np.array_equal(outputs[1], base)
    assert np.array_equal(outputs[2], [0.5, 2.0, 2.0])

    with pytest.raises(DirectionIndexError):
        traverse(identity_generator, TraversalSpec(5, [1.0], base), ds)
    with pytest.raises(ShapeError):
        traverse(identity_generator, TraversalSpec(0, [1.0], np.zeros(4)), ds)
    with pytest.raises(NonFiniteError):
        TraversalSpec(0, [1.0, float("nan")], base)


def test_traverse_projector():
    # every top direction moves the projected output by exactly alpha
    p = projector_forward(projector_new(6, 4, 2, seed=5))
    ds = sefa_directions(p, top_k=2)
    base = np.random.default_rng(6).standard_normal(4)
    outputs = traverse(lambda z: p @ z, TraversalSpec(0, [0.0, 2.5], base), ds)
    assert np.linalg.norm(outputs[1] - outputs[0]) == pytest.approx(2.5, abs=1e-9)
