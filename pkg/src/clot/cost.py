"""Cost and structure matrices for the three transport problems."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import DimensionError, ParameterError, as_matrix, cosine_matrix
from .swd import ProjectionSet, swd_matrix


@dataclass(frozen=True)
class CostBundle:
    """One transport instance: the linear cost and the two structure matrices.

    ``c_rows`` may be a dense array or a scipy sparse matrix (the banded frame
    adjacency is stored sparse for long videos).
    """

    c_kot: np.ndarray
    c_rows: np.ndarray | sp.spmatrix
    c_cols: np.ndarray

    def __post_init__(self):
        n, m = self.c_kot.shape
        if self.c_rows.shape != (n, n) or self.c_cols.shape != (m, m):
            raise DimensionError(
                f"bundle shapes disagree: c_kot {self.c_kot.shape}, "
                f"c_rows {self.c_rows.shape}, c_cols {self.c_cols.shape}"
            )
        if not np.all(np.isfinite(self.c_kot)):
            raise DimensionError("c_kot has non-finite entries")


def temporal_prior(n: int, k: int) -> np.ndarray:
    """``Z[i, j] = |(i+1)/n - (j+1)/k|``: relative position of frame vs action rank."""
    if n < 1 or k < 1:
        raise ParameterError(f"sizes must be positive, got n={n}, k={k}")
    i = (np.arange(n) + 1.0) / n
    j = (np.arange(k) + 1.0) / k
    return np.abs(i[:, None] - j[None, :])


def _cosine_cost(x, a, rho: float) -> np.ndarray:
    x, a = as_matrix(x, "x"), as_matrix(a, "a")
    if x.shape[1] != a.shape[1]:
        raise DimensionError(f"feature dims differ: {x.shape[1]} vs {a.shape[1]}")
    if rho < 0:
        raise ParameterError(f"rho must be nonnegative, got {rho}")
    return 1.0 - cosine_matrix(x, a) + rho * temporal_prior(x.shape[0], a.shape[0])


def frame_kot_cost(x, a, rho: float, proj: ProjectionSet | None) -> np.ndarray:
    """``1 + SWD(x_i, a_j) - (cos(x_i, a_j) - rho Z_ij)``.

    With ``proj=None`` the sliced term is dropped.
    """
    cost = _cosine_cost(x, a, rho)
    if proj is not None:
        cost = cost + swd_matrix(x, a, proj, p=1)
    return cost


def segment_kot_cost(s, a, rho_s: float) -> np.ndarray:
    return _cosine_cost(s, a, rho_s)


def refined_kot_cost(f_r, a, rho: float, proj: ProjectionSet | None = None) -> np.ndarray:
    return frame_kot_cost(f_r, a, rho, proj)


def neighbor_radius(n: int, radius_fraction: float) -> int:
    if not 0 < radius_fraction <= 1:
        raise ParameterError(f"radius fraction must be in (0, 1], got {radius_fraction}")
    return min(math.ceil(radius_fraction * n), max(n - 1, 0))


def banded_adjacency(n: int, radius: int, sparse: bool = False):
    """0/1 matrix with ones where ``0 < |i - k| <= radius``."""
    if radius < 0:
        raise ParameterError(f"radius must be nonnegative, got {radius}")
    radius = min(radius, max(n - 1, 0))
    offsets = [o for o in range(-radius, radius + 1) if o != 0]
    if sparse:
        if not offsets:
            return sp.csr_matrix((n, n))
        diags = [np.ones(n - abs(o)) for o in offsets]
        return sp.diags(diags, offsets, shape=(n, n), format="csr")
    idx = np.arange(n)
    gap = np.abs(idx[:, None] - idx[None, :])
    return ((gap > 0) & (gap <= radius)).astype(np.float64)


def distinct_actions(k: int) -> np.ndarray:
    return 1.0 - np.eye(k)


def structure_matrices(n: int, k: int, radius_fraction: float, sparse: bool = False):
    """Frame adjacency within ``ceil(radius_fraction * n)`` and action distinctness."""
    if n < 1 or k < 1:
        raise ParameterError(f"sizes must be positive, got n={n}, k={k}")
    r = neighbor_radius(n, radius_fraction)
    return banded_adjacency(n, r, sparse=sparse), distinct_actions(k)
