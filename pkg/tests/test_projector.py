import json
import logging

import numpy as np
import pytest

from hproj import (
    InvalidRankError,
    InvariantError,
    MalformedFileError,
    NonFiniteError,
    ProjectorGrads,
    ProjectorParams,
    ReflectorChain,
    ShapeError,
    chain_accumulate,
    gradient_step,
    nearest_orthogonal,
    orthogonal_distance,
    orthogonality_error,
    projector_apply,
    projector_backward,
    projector_forward,
    projector_from_pretrained,
    projector_load,
    projector_new,
    projector_save,
    projector_spectrum,
    spectral_error,
    svd,
    sym_eig,
)
from hproj.codec import encode_matrix
from tests.utils import finite_difference, givens_grid, random_orthogonal, relative_error


def with_vectors(p, u, v):
    return ProjectorParams(
        p.out_dim,
        p.in_dim,
        p.rank,
        ReflectorChain(p.out_dim, u, p.u_chain.identity),
        ReflectorChain(p.in_dim, v, p.v_chain.identity),
        p.truncated,
    )


def check_spectrum(p, tol=1e-9):
    values = projector_spectrum(p)
    assert np.all(np.abs(values[: p.rank] - 1.0) < tol)
    assert np.all(np.abs(values[p.rank :]) < tol)


def test_projector_new():
    p = projector_new(4, 4, 4, seed=3)
    a = projector_forward(p)
    assert np.linalg.norm(a.T @ a - np.eye(4)) < 1e-12
    assert p.u_chain.count == 4 and p.v_chain.count == 4

    again = projector_new(4, 4, 4, seed=3)
    assert again.u_chain.vectors.tobytes() == p.u_chain.vectors.tobytes()
    assert again.v_chain.vectors.tobytes() == p.v_chain.vectors.tobytes()
    assert projector_new(4, 4, 4, seed=4).u_chain.vectors.tobytes() != p.u_chain.vectors.tobytes()


def test_projector_rank_errors():
    for rank in (0, 4):
        with pytest.raises(InvalidRankError):
            projector_new(5, 3, rank)
    with pytest.raises(ShapeError):
        projector_new(0, 3, 1)
    with pytest.raises(InvalidRankError):
        projector_from_pretrained(np.eye(2), 3)


@pytest.mark.slow
def test_projector_default_rank_large():
    p = projector_new(512, 512, 10, seed=0)
    check_spectrum(p)


def test_projector_forward():
    p = projector_new(6, 6, 6, seed=1)
    assert orthogonality_error(projector_forward(p)) < 1e-12

    a = projector_forward(projector_new(5, 4, 1, seed=2))
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
    s = svd(a).S
    assert s[0] == pytest.approx(1.0, abs=1e-12) and np.all(s[1:] < 1e-12)

    s = svd(projector_forward(projector_new(8, 6, 3, seed=3))).S
    assert np.max(np.abs(s - [1.0, 1.0, 1.0, 0.0, 0.0, 0.0])) < 1e-9


def test_projector_forward_workers():
    p = projector_new(40, 30, 7, seed=4)
    assert np.max(np.abs(projector_forward(p, workers=4) - projector_forward(p))) < 1e-12


def test_spectral_contract_shapes():
    for seed, (out_dim, in_dim, rank) in enumerate([(3, 3, 1), (7, 4, 2), (4, 7, 4), (16, 16, 10), (1, 5, 1)]):
        p = projector_new(out_dim, in_dim, rank, seed=seed)
        check_spectrum(p)
        assert spectral_error(p) < 1e-9


def test_variation_equality():
    p = projector_new(9, 6, 3, seed=5)
    a = projector_forward(p)
    values, vectors = sym_eig(a.T @ a)
    for i in range(6):
        magnitude = float(np.sum((a @ vectors[:, i]) ** 2))
        if i < 3:
            assert magnitude == pytest.approx(1.0, abs=1e-9)
        else:
            assert magnitude < 1e-9


def test_projector_apply():
    p = projector_new(7, 5, 3, seed=6)
    assert np.array_equal(projector_apply(p, np.zeros(5)), np.zeros(7))

    z = np.random.default_rng(0).standard_normal((5, 4))
    a = projector_forward(p)
    assert np.max(np.abs(projector_apply(p, z) - a @ z)) < 1e-10
    assert np.max(np.abs(projector_apply(p, z[:, 0]) - a @ z[:, 0])) < 1e-10

    q = projector_new(6, 6, 6, seed=7)
    x = np.random.default_rng(1).standard_normal(6)
    assert np.linalg.norm(projector_apply(q, x)) == pytest.approx(np.linalg.norm(x), abs=1e-10)

    with pytest.raises(ShapeError):
        projector_apply(p, np.zeros(7))


def test_nearest_orthogonal():
    q = random_orthogonal(4, np.random.default_rng(2))
    assert np.linalg.norm(projector_forward(projector_from_pretrained(q, 4)) - q) < 1e-9
    assert np.linalg.norm(nearest_orthogonal(q) - q) < 1e-9

    a = projector_forward(projector_from_pretrained(np.diag([2.0, 3.0]), 2))
    assert np.max(np.abs(a - np.eye(2))) < 1e-12
    assert orthogonal_distance(np.diag([2.0, 3.0])) == pytest.approx(np.sqrt(5.0))

    # semi-orthogonal for non-square input
    r = nearest_orthogonal(np.random.default_rng(3).standard_normal((6, 3)))
    assert orthogonality_error(r) < 1e-10


@pytest.mark.parametrize("d, points", [(2, 5000), (3, 18)])
def test_nearest_orthogonal_optimal(d, points):
    a = np.random.default_rng(d).standard_normal((d, d))
    best = min(np.linalg.norm(r - a) for r in givens_grid(d, points))
    full = projector_forward(projector_from_pretrained(a, d))
    assert np.linalg.norm(full - a) <= best + 1e-8
    assert np.linalg.norm(full - nearest_orthogonal(a)) < 1e-9


def test_truncated_matches_full():
    a = np.random.default_rng(4).standard_normal((8, 6))
    full = projector_from_pretrained(a, 3)
    short = projector_from_pretrained(a, 3, truncated=True)
    assert short.u_chain.count == 3 and short.v_chain.count == 3
    assert np.max(np.abs(projector_forward(full) - projector_forward(short))) < 1e-12

    p = projector_new(8, 6, 2, seed=8, truncated=True)
    check_spectrum(p)
    with pytest.raises(ShapeError):
        ProjectorParams(8, 6, 2, full.u_chain, full.v_chain, truncated=True)


def test_backward_zero():
    p = projector_new(5, 4, 2, seed=9)
    grads = projector_backward(p, np.zeros((5, 4)))
    assert np.array_equal(grads.u, np.zeros((5, 5)))
    assert np.array_equal(grads.v, np.zeros((4, 4)))
    with pytest.raises(ShapeError):
        projector_backward(p, np.zeros((4, 5)))


def check_backward(p, upstream):
    def loss_u(u):
        return float(np.sum(upstream * projector_forward(with_vectors(p, u, p.v_chain.vectors))))

    def loss_v(v):
        return float(np.sum(upstream * projector_forward(with_vectors(p, p.u_chain.vectors, v))))

    grads = projector_backward(p, upstream)
    expected_u = finite_difference(loss_u, p.u_chain.vectors)
    expected_v = finite_difference(loss_v, p.v_chain.vectors)
    expected = np.concatenate([expected_u.ravel(), expected_v.ravel()])
    assert relative_error(np.concatenate([grads.u.ravel(), grads.v.ravel()]), expected) < 1e-5


def test_backward_2x2():
    upstream = np.zeros((2, 2))
    upstream[0, 0] = 1.0
    check_backward(projector_new(2, 2, 2, seed=10), upstream)


def test_backward_rank3():
    rng = np.random.default_rng(5)
    check_backward(projector_new(8, 8, 3, seed=11), rng.standard_normal((8, 8)))
    check_backward(projector_new(6, 4, 2, seed=12), rng.standard_normal((6, 4)))


@pytest.mark.slow
def test_backward_random_configs():
    rng = np.random.default_rng(6)
    for case in range(50):
        out_dim, in_dim = (int(x) for x in rng.integers(1, 17, size=2))
        rank = int(rng.integers(1, min(out_dim, in_dim) + 1))
        p = projector_new(out_dim, in_dim, rank, seed=case)
        check_backward(p, rng.standard_normal((out_dim, in_dim)))


def test_gradient_step_zero_lr():
    p = projector_new(5, 4, 2, seed=13)
    grads = projector_backward(p, np.ones((5, 4)))
    assert gradient_step(p, grads, 0.0) is p


def test_gradient_step_errors():
    p = projector_new(5, 4, 2, seed=14)
    grads = projector_backward(p, np.ones((5, 4)))
    with pytest.raises(ValueError):
        gradient_step(p, grads, -0.1)
    bad = ProjectorGrads(np.full_like(grads.u, np.nan), grads.v)
    with pytest.raises(NonFiniteError):
        gradient_step(p, bad, 0.1)
    with pytest.raises(ShapeError):
        gradient_step(p, ProjectorGrads(grads.u[:2], grads.v), 0.1)


def test_gradient_step_keeps_spectrum():
    rng = np.random.default_rng(7)
    p = projector_new(7, 5, 3, seed=15)
    for _ in range(10):
        grads = ProjectorGrads(rng.standard_normal((7, 7)), rng.standard_normal((5, 5)))
        p = gradient_step(p, grads, 0.5, rng)
        check_spectrum(p)


@pytest.mark.parametrize("d", [8, 32, pytest.param(128, marks=pytest.mark.slow)])
def test_gradient_trajectory(d):
    rng = np.random.default_rng(d)
    p = projector_new(d, d, 4, seed=d)
    for _ in range(100):
        grads = projector_backward(p, rng.standard_normal((d, d)))
        p = gradient_step(p, grads, 0.05, rng)
        assert orthogonality_error(chain_accumulate(p.u_chain)) < 1e-10
        check_spectrum(p)


def test_gradient_step_redraws_collapsed(caplog):
    p = projector_new(4, 3, 2, seed=16)
    u_grad = np.zeros((4, 4))
    u_grad[2] = p.u_chain.vectors[2] / 0.5
    grads = ProjectorGrads(u_grad, np.zeros((3, 3)))
    with caplog.at_level(logging.WARNING, logger="hproj"):
        q = gradient_step(p, grads, 0.5, np.random.default_rng(0))
    assert np.linalg.norm(q.u_chain.vectors[2]) > 1e-3
    assert "re-drawing" in caplog.text
    check_spectrum(q)


def test_gradient_step_placeholders_frozen():
    p = projector_from_pretrained(np.eye(4), 2)
    assert p.u_chain.identity.all()
    grads = ProjectorGrads(np.ones((4, 4)), np.ones((4, 4)))
    q = gradient_step(p, grads, 0.1)
    assert q.u_chain.identity.all()
    assert np.array_equal(q.u_chain.vectors, np.zeros((4, 4)))


def test_save_load(tmp_path):
    path = tmp_path / "p.hproj"
    for p in (projector_new(6, 4, 3, seed=17), projector_from_pretrained(np.eye(3), 1, truncated=True)):
        projector_save(p, path)
        q = projector_load(path)
        assert (q.out_dim, q.in_dim, q.rank, q.truncated) == (p.out_dim, p.in_dim, p.rank, p.truncated)
        assert q.u_chain.vectors.tobytes() == p.u_chain.vectors.tobytes()
        assert q.v_chain.vectors.tobytes() == p.v_chain.vectors.tobytes()
        assert np.array_equal(q.u_chain.identity, p.u_chain.identity)

    header = json.loads(path.read_bytes().split(b"\n")[0])
    assert header == {"in_dim": 3, "out_dim": 3, "rank": 1, "truncated": True, "version": 1}


def test_load_malformed(tmp_path):
    path = tmp_path / "p.hproj"
    projector_save(projector_new(4, 3, 2, seed=18), path)
    data = path.read_bytes()

    path.write_bytes(data[:-8])
    with pytest.raises(MalformedFileError):
        projector_load(path)
    path.write_bytes(b"not json\n" + data.split(b"\n", 1)[1])
    with pytest.raises(MalformedFileError):
        projector_load(path)
    path.write_bytes(data.replace(b'"version": 1', b'"version": 9'))
    with pytest.raises(MalformedFileError):
        projector_load(path)

    header = json.dumps({"in_dim": 3, "out_dim": 4, "rank": 5, "truncated": False, "version": 1}).encode()
    path.write_bytes(header + b"\n" + encode_matrix(np.eye(4)) + encode_matrix(np.eye(3)))
    with pytest.raises(InvariantError):
        projector_load(path)

    # reflector vectors are validated while loading
    header = json.dumps({"in_dim": 3, "out_dim": 4, "rank": 2, "truncated": False, "version": 1}).encode()
    nan = np.eye(4)
    nan[1, 2] = np.nan
    tiny = np.eye(4)
    tiny[3] = [1e-14, 0.0, 0.0, 0.0]
    for u in (nan, tiny):
        path.write_bytes(header + b"\n" + encode_matrix(u) + encode_matrix(np.eye(3)))
        with pytest.raises(InvariantError):
            projector_load(path)
