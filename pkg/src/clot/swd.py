"""Sliced-Wasserstein discrepancy between frame vectors and action vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionError, ParameterError, Rng, as_matrix


@dataclass(frozen=True)
class ProjectionSet:
    directions: np.ndarray  # (M, d), unit rows
    p_factor: int

    @property
    def m(self) -> int:
        return self.directions.shape[0]

    @property
    def dim(self) -> int:
        return self.directions.shape[1]


def sample_projections(d: int, p_factor: int, rng: Rng) -> ProjectionSet:
    """Draw ``p_factor * d`` directions uniformly on the unit sphere."""
    if d < 1 or p_factor < 1:
        raise ParameterError(f"need d >= 1 and p_factor >= 1, got {d}, {p_factor}")
    m = p_factor * d
    g = rng.standard_normal((m, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # a zero Gaussian draw has probability zero, but guard it anyway
    while np.any(norms == 0):
        bad = norms[:, 0] == 0
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
    return ProjectionSet(g / norms, p_factor)


def swd_matrix(x, a, proj: ProjectionSet, p: int = 1) -> np.ndarray:
    """Mean squared gap of the 1-D projections, raised to ``1/p``.

    Entry ``(i, j)`` is ``(mean_m (theta_m . x_i - theta_m . a_j)^2) ** (1/p)``.
    """
    x, a = as_matrix(x, "x"), as_matrix(a, "a")
    if x.shape[1] != a.shape[1] or x.shape[1] != proj.dim:
        raise DimensionError(
            f"dimension mismatch: x {x.shape}, a {a.shape}, projections {proj.directions.shape}"
        )
    if p < 1:
        raise ParameterError(f"p must be >= 1, got {p}")
    px = x @ proj.directions.T  # (N, M)
    pa = a @ proj.directions.T  # (K, M)
    out = np.empty((x.shape[0], a.shape[0]))
    step = max(1, 2_000_000 // max(1, a.shape[0] * proj.m))
    for lo in range(0, x.shape[0], step):
        gap = px[lo : lo + step, None, :] - pa[None, :, :]
        out[lo : lo + step] = (gap * gap).mean(axis=2)
    return out if p == 1 else out ** (1.0 / p)
