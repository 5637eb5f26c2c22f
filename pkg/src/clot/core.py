"""Numeric primitives shared by the solver, the model and the evaluation code.

Matrices are plain 2-D ``float64`` numpy arrays. Randomness always comes from
an explicit :class:`numpy.random.Generator` built with :func:`make_rng`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ClotError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ClotError, ValueError):
    pass


class ParameterError(ClotError, ValueError):
    pass


class InputError(ClotError, ValueError):
    pass


class StateError(ClotError, RuntimeError):
    pass


class FormatError(ClotError, ValueError):
    pass


Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """Seeded PCG64 stream; the same seed always yields the same bits."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def logsumexp_rows(m) -> np.ndarray:
    m = as_matrix(m)
    if m.size == 0:
        raise DimensionError("logsumexp_rows of an empty matrix")
    mx = m.max(axis=1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return (mx + np.log(np.exp(m - mx).sum(axis=1, keepdims=True)))[:, 0]


def softmax_rows(m, temperature: float = 1.0) -> np.ndarray:
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    z = as_matrix(m) / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def row_normalize(m) -> np.ndarray:
    """Rows scaled to unit norm; zero rows stay zero."""
    m = as_matrix(m)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


def cosine_matrix(a, b) -> np.ndarray:
    a, b = as_matrix(a, "a"), as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"inner dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    return np.clip(row_normalize(a) @ row_normalize(b).T, -1.0, 1.0)


def kl_divergence(p, q) -> float:
    """Generalized KL for unnormalized measures, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise DimensionError(f"length mismatch: {p.shape} vs {q.shape}")
    if np.any(q <= 0):
        raise ParameterError("q must be strictly positive")
    if np.any(p < 0):
        raise ParameterError("p must be nonnegative")
    pos = p > 0
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])) - p.sum() + q.sum())


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_history: tuple[float, ...] = ()


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (
        (points**2).sum(1)[:, None]
        - 2.0 * points @ centroids.T
        + (centroids**2).sum(1)[None, :]
    )
    return np.maximum(d, 0.0)


def _kmeanspp(points: np.ndarray, k: int, rng: Rng) -> np.ndarray:
    n = points.shape[0]
    idx = [int(rng.integers(n))]
    closest = _sq_dists(points, points[idx])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # all remaining points coincide with a centroid
            choice = int(rng.integers(n))
        else:
            choice = int(rng.choice(n, p=closest / total))
        idx.append(choice)
        closest = np.minimum(closest, _sq_dists(points, points[[choice]])[:, 0])
    return points[idx].copy()


def kmeans(points, k: int, rng: Rng, max_iter: int = 100) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeding.

    Iterates until the assignment stops changing or ``max_iter`` is hit. A
    cluster that loses all its points is reseeded with the point farthest
    from its current centroid.
    """
    points = as_matrix(points, "points")
    n = points.shape[0]
    if k < 1 or n < k:
        raise ParameterError(f"need n >= k >= 1, got n={n}, k={k}")
    centroids = _kmeanspp(points, k, rng)
    assign = None
    history = []
    for _ in range(max_iter):
        d = _sq_dists(points, centroids)
        new_assign = d.argmin(axis=1)
        history.append(float(d[np.arange(n), new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = assign == j
            if members.any():
                centroids[j] = points[members].mean(axis=0)
        for j in range(k):
            if not (assign == j).any():
                far = int(d[np.arange(n), assign].argmax())
                centroids[j] = points[far]
                assign[far] = j
                d = _sq_dists(points, centroids)
    d = _sq_dists(points, centroids)
    assign = d.argmin(axis=1)
    inertia = float(d[np.arange(n), assign].sum())
    return KMeansResult(centroids, assign, inertia, tuple(history))
