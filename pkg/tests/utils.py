import itertools

import numpy as np


def random_orthogonal(d, rng):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def finite_difference(loss, vectors, step=1e-6):
    """Central differences of loss(vectors) w.r.t. every entry of an m x d array"""
    vectors = np.array(vectors, dtype=np.float64)
    grad = np.zeros_like(vectors)
    for index in np.ndindex(*vectors.shape):
        plus, minus = vectors.copy(), vectors.copy()
        plus[index] += step
        minus[index] -= step
        grad[index] = (loss(plus) - loss(minus)) / (2 * step)
    return grad


def relative_error(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _rotation(axis_a, axis_b, angle, d):
    g = np.eye(d)
    c, s = np.cos(angle), np.sin(angle)
    g[axis_a, axis_a] = g[axis_b, axis_b] = c
    g[axis_a, axis_b], g[axis_b, axis_a] = -s, s
    return g


def givens_grid(d, points):
    """Orthogonal candidates built from Givens angles on a regular grid, both determinants"""
    planes = list(itertools.combinations(range(d), 2))
    angles = np.linspace(-np.pi, np.pi, points, endpoint=False)
    flip = np.eye(d)
    flip[-1, -1] = -1.0
    for combo in itertools.product(angles, repeat=len(planes)):
        r = np.eye(d)
        for (a, b), angle in zip(planes, combo):
            r = r @ _rotation(a, b, angle, d)
        yield r
        yield r @ flip


def power_directions(s, k, iters=5000):
    """Top-k eigenvectors of a symmetric PSD matrix by power iteration with deflation"""
    s = np.array(s, dtype=np.float64)
    rng = np.random.default_rng(1234)
    vectors = []
    for _ in range(k):
        v = rng.standard_normal(s.shape[0])
        for _ in range(iters):
            v = s @ v
            for u in vectors:
                v -= (u @ v) * u
            v /= np.linalg.norm(v)
        vectors.append(v)
    return np.array(vectors).T


def identity_generator(z):
    return np.array(z, dtype=np.float64)


def constant_generator(z):
    return np.ones(3)


def path_length_oracle(dim, eps, samples, seed):
    """
    Path length of the identity generator from one vectorized draw

    Returns (mean, standard error).
    """
    rng = np.random.default_rng(seed)
    w1 = rng.standard_normal((samples, dim))
    w2 = rng.standard_normal((samples, dim))
    t = rng.uniform(0.0, 1.0, (samples, 1))
    n1 = np.linalg.norm(w1, axis=1, keepdims=True)
    n2 = np.linalg.norm(w2, axis=1, keepdims=True)
    u1, u2 = w1 / n1, w2 / n2
    omega = np.arccos(np.clip(np.sum(u1 * u2, axis=1, keepdims=True), -1.0, 1.0))

    def path(s):
        direction = (np.sin((1.0 - s) * omega) * u1 + np.sin(s * omega) * u2) / np.sin(omega)
        return direction * ((1.0 - s) * n1 + s * n2)

    values = np.sum((path(t + eps) - path(t)) ** 2, axis=1) / eps**2
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(samples))
