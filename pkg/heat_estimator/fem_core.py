from __future__ import annotations

from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from heat_estimator.errors import NumericFailure
from heat_estimator.log import logger
from heat_estimator.mesh import Mesh, locate_points, uniform_refine
from heat_estimator.quadrature import get_quadrature, map_to_cells

SparseOperator = sp.csr_matrix
SpatialFunction = Callable[[np.ndarray], np.ndarray]

DEFAULT_QUADRATURE_DEGREE = 6


class FeSpace:
    """Conforming P1 space on `mesh` with homogeneous Dirichlet conditions.

    Degrees of freedom are the interior vertices in ascending order.
    `dof_map[c, i]` is the dof of local vertex `i` of cell `c`, or -1 on
    the boundary.
    """

    def __init__(self, mesh: Mesh, degree: int = 1):
        if degree != 1:
            raise ValueError(f"only degree 1 is supported, got {degree}")
        self.mesh = mesh
        self.degree = degree
        self.interior_vertices = mesh.interior_vertices
        vertex_to_dof = np.full(mesh.n_vertices, -1, dtype=np.int64)
        vertex_to_dof[self.interior_vertices] = np.arange(len(self.interior_vertices))
        self.vertex_to_dof = vertex_to_dof
        self.dof_map = vertex_to_dof[mesh.cells]
        self.n_dofs = len(self.interior_vertices)

    @cached_property
    def local_stiffness(self) -> np.ndarray:
        grads = self.mesh.barycentric_gradients
        return np.einsum("cid,cjd->cij", grads, grads) * self.mesh.cell_measures[:, None, None]

    @cached_property
    def local_mass(self) -> np.ndarray:
        d = self.mesh.dim
        reference = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
        return self.mesh.cell_measures[:, None, None] * reference[None, :, :]

    def _assemble(self, local: np.ndarray) -> SparseOperator:
        cells = self.mesh.cells
        n = self.mesh.n_vertices
        rows = np.broadcast_to(cells[:, :, None], local.shape).ravel()
        cols = np.broadcast_to(cells[:, None, :], local.shape).ravel()
        full = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        interior = self.interior_vertices
        return full[interior][:, interior].tocsr()

    @cached_property
    def stiffness(self) -> SparseOperator:
        return self._assemble(self.local_stiffness)

    @cached_property
    def mass(self) -> SparseOperator:
        return self._assemble(self.local_mass)

    def to_nodal(self, coefficients: np.ndarray) -> np.ndarray:
        """Values at all mesh vertices, zero on the boundary."""
        nodal = np.zeros(self.mesh.n_vertices)
        nodal[self.interior_vertices] = coefficients
        return nodal

    def cell_values(self, coefficients: np.ndarray) -> np.ndarray:
        """Local nodal values, shape (nc, d + 1)."""
        return self.to_nodal(coefficients)[self.mesh.cells]

    def cell_gradients(self, coefficients: np.ndarray) -> np.ndarray:
        """Constant gradient per cell, shape (nc, d)."""
        return np.einsum(
            "ci,cid->cd", self.cell_values(coefficients), self.mesh.barycentric_gradients
        )

    def evaluate_at(self, coefficients: np.ndarray, bary: np.ndarray) -> np.ndarray:
        """Values at reference barycentric points in every cell, shape (nc, nq)."""
        return self.cell_values(coefficients) @ bary.T

    def _scatter(self, local: np.ndarray) -> np.ndarray:
        full = np.bincount(
            self.mesh.cells.ravel(), weights=local.ravel(), minlength=self.mesh.n_vertices
        )
        return full[self.interior_vertices]

    def assemble_load(
        self, f: SpatialFunction, degree: int = DEFAULT_QUADRATURE_DEGREE
    ) -> np.ndarray:
        """b_i = (f, phi_i) by cellwise quadrature."""
        rule = get_quadrature(self.mesh.dim, degree)
        points, weights = map_to_cells(self.mesh.cell_vertices, self.mesh.cell_measures, rule)
        nc, nq, d = points.shape
        values = np.asarray(f(points.reshape(-1, d)), dtype=float).reshape(nc, nq)
        local = np.einsum("cq,qi->ci", values * weights, rule.points)
        return self._scatter(local)

    def assemble_broken_load(self, cell_values: np.ndarray) -> np.ndarray:
        """b_i = (g, phi_i) for a broken P1 field given by per-cell nodal values."""
        local = np.einsum("cij,cj->ci", self.local_mass, cell_values)
        return self._scatter(local)


def assemble_stiffness(space: FeSpace) -> SparseOperator:
    """A_ij = (grad phi_j, grad phi_i) over interior hat functions, cached on the space."""
    return space.stiffness


def assemble_mass(space: FeSpace) -> SparseOperator:
    """M_ij = (phi_j, phi_i) over interior hat functions, cached on the space."""
    return space.mass


def broken_p1_project(
    mesh: Mesh, f: SpatialFunction, degree: int = DEFAULT_QUADRATURE_DEGREE
) -> np.ndarray:
    """Cellwise L2 projection onto discontinuous P1, returned as (nc, d + 1) nodal values."""
    d = mesh.dim
    rule = get_quadrature(d, degree)
    points, weights = map_to_cells(mesh.cell_vertices, mesh.cell_measures, rule)
    nc, nq, _ = points.shape
    values = np.asarray(f(points.reshape(-1, d)), dtype=float).reshape(nc, nq)
    moments = np.einsum("cq,qi->ci", values * weights, rule.points)
    reference = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    return np.linalg.solve(reference, (moments / mesh.cell_measures[:, None]).T).T


def solve_spd(
    op,
    rhs: np.ndarray,
    tol: float = 1e-12,
    max_iters: int | None = None,
) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients.

    Args:
        op: Symmetric positive definite matrix (sparse or dense).
        rhs (np.ndarray): Right-hand side.
        tol (float): Relative residual target ||op x - rhs|| / ||rhs||.
        max_iters (int, optional): Defaults to 10 n.

    Returns:
        np.ndarray: The solution.

    Raises:
        NumericFailure: If the tolerance is not met within `max_iters`.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    if max_iters is None:
        max_iters = 10 * max(n, 1)
    rhs_norm = float(np.linalg.norm(rhs))
    x = np.zeros(n)
    if rhs_norm == 0.0:
        return x
    diagonal = np.asarray(op.diagonal(), dtype=float)
    if np.any(diagonal <= 0.0):
        raise ValueError("operator must have a positive diagonal")
    inv_diagonal = 1.0 / diagonal

    r = rhs.copy()
    z = inv_diagonal * r
    p = z.copy()
    rz = float(r @ z)
    residual = 1.0
    for iteration in range(1, max_iters + 1):
        q = op @ p
        curvature = float(p @ q)
        if curvature <= 0.0:
            raise NumericFailure(
                "operator is not positive definite", residual=residual, iterations=iteration
            )
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * q
        residual = float(np.linalg.norm(r)) / rhs_norm
        if residual <= tol:
            r = rhs - op @ x
            residual = float(np.linalg.norm(r)) / rhs_norm
            if residual <= tol:
                logger.debug(f"CG converged in {iteration} iterations, residual {residual:.3e}")
                return x
            # drifted recursive residual: restart from the true one
            z = inv_diagonal * r
            p = z.copy()
            rz = float(r @ z)
            continue
        z = inv_diagonal * r
        rz_next = float(r @ z)
        p = z + (rz_next / rz) * p
        rz = rz_next
    raise NumericFailure(
        f"CG did not reach tolerance {tol:.1e} in {max_iters} iterations "
        f"(residual {residual:.3e})",
        residual=residual,
        iterations=max_iters,
    )


def l2_project(
    space: FeSpace,
    f: SpatialFunction,
    degree: int = DEFAULT_QUADRATURE_DEGREE,
    tol: float = 1e-12,
    max_iters: int | None = None,
) -> np.ndarray:
    """Coefficients of Pi_h f, solving M x = (f, phi_i)."""
    return solve_spd(space.mass, space.assemble_load(f, degree), tol=tol, max_iters=max_iters)


def prolongation(coarse: FeSpace, fine: FeSpace) -> SparseOperator:
    """Matrix mapping coarse coefficients to fine coefficients by nodal evaluation."""
    points = fine.mesh.vertices[fine.interior_vertices]
    cells, bary = locate_points(coarse.mesh, points)
    dofs = coarse.dof_map[cells]
    rows = np.repeat(np.arange(len(points)), dofs.shape[1])
    cols = dofs.ravel()
    values = bary.ravel()
    keep = (cols >= 0) & (np.abs(values) > 1e-14)
    return sp.coo_matrix(
        (values[keep], (rows[keep], cols[keep])), shape=(fine.n_dofs, coarse.n_dofs)
    ).tocsr()


def estimate_projection_stability(
    space: FeSpace,
    n_refinements: int,
    max_iters: int = 500,
    rtol: float = 1e-10,
    seed: int = 0,
) -> float:
    """Lower estimate of C_Pi = sup ||grad Pi_h v|| / ||grad v||.

    The supremum is taken over the P1 space on the `n_refinements`-times
    refined mesh, by power iteration on A_f^{-1} S with
    S = T^T A_c T and T = M_c^{-1} P^T M_f. The result is at least 1.
    """
    if n_refinements < 1:
        raise ValueError(f"n_refinements must be >= 1, got {n_refinements}")
    if space.n_dofs == 0:
        logger.warning("Coarse space has no degrees of freedom; reporting C_Pi = 1")
        return 1.0
    fine_mesh = space.mesh
    for _ in range(n_refinements):
        fine_mesh = uniform_refine(fine_mesh)
    fine = FeSpace(fine_mesh)
    transfer = prolongation(space, fine)
    solve_coarse_mass = factorized(space.mass.tocsc())
    solve_fine_stiffness = factorized(fine.stiffness.tocsc())
    mass_f, stiff_f, stiff_c = fine.mass, fine.stiffness, space.stiffness

    def apply_s(v: np.ndarray) -> np.ndarray:
        projected = solve_coarse_mass(transfer.T @ (mass_f @ v))
        return mass_f @ (transfer @ solve_coarse_mass(stiff_c @ projected))

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(fine.n_dofs)
    v /= np.sqrt(v @ (stiff_f @ v))
    best = 0.0
    previous = np.inf
    for iteration in range(1, max_iters + 1):
        sv = apply_s(v)
        rayleigh = float(v @ sv)
        best = max(best, rayleigh)
        if abs(rayleigh - previous) <= rtol * max(abs(rayleigh), 1.0):
            logger.debug(f"Projection stability converged after {iteration} iterations")
            break
        previous = rayleigh
        w = solve_fine_stiffness(sv)
        norm = np.sqrt(w @ (stiff_f @ w))
        if norm == 0.0:
            break
        v = w / norm
    else:
        logger.warning(
            f"Power iteration stagnated after {max_iters} iterations; "
            f"last Rayleigh quotient {best:.6g}"
        )
    return max(1.0, float(np.sqrt(best)))
