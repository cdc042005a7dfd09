from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on the reference simplex.

    `points` are barycentric coordinates of shape (nq, dim + 1); `weights` sum
    to the reference measure (1 for the unit interval, 1/2 for the unit
    triangle).
    """

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    @property
    def dim(self) -> int:
        return self.points.shape[1] - 1

    @property
    def reference_measure(self) -> float:
        return 1.0 / math.factorial(self.dim)


def gauss_interval(n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on [0, 1] with weights summing to 1."""
    if n_points < 1:
        raise ValueError(f"n_points must be >= 1, got {n_points}")
    nodes, weights = leggauss(n_points)
    return 0.5 * (nodes + 1.0), 0.5 * weights


@lru_cache(maxsize=None)
def get_quadrature(dim: int, degree: int) -> QuadratureRule:
    """Return a rule exact for polynomials of total degree <= `degree`.

    Args:
        dim (int): 1 (interval) or 2 (triangle).
        degree (int): Required exactness degree.

    Returns:
        QuadratureRule: Cached, read-only rule.
    """
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    if dim == 1:
        n = max(1, math.ceil((degree + 1) / 2))
        x, w = gauss_interval(n)
        points = np.column_stack([1.0 - x, x])
        weights = w
    elif dim == 2:
        # Collapsed (Duffy) rule: x = u, y = v (1 - u), Jacobian (1 - u).
        n = max(1, math.ceil((degree + 2) / 2))
        s, ws = gauss_interval(n)
        u, v = np.meshgrid(s, s, indexing="ij")
        wu, wv = np.meshgrid(ws, ws, indexing="ij")
        x = u.ravel()
        y = (v * (1.0 - u)).ravel()
        weights = (wu * wv * (1.0 - u)).ravel()
        points = np.column_stack([1.0 - x - y, x, y])
    else:
        raise ValueError(f"only dim 1 and 2 are supported, got {dim}")
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(points=points, weights=weights, exactness_degree=degree)


def map_to_cells(
    cell_vertices: np.ndarray, measures: np.ndarray, rule: QuadratureRule
) -> tuple[np.ndarray, np.ndarray]:
    """Physical quadrature points (nc, nq, d) and weights (nc, nq) for every cell."""
    points = np.einsum("qi,cid->cqd", rule.points, cell_vertices)
    weights = np.outer(measures / rule.reference_measure, rule.weights)
    return points, weights
