from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from heat_estimator.errors import IntegrityError
from heat_estimator.log import logger
from heat_estimator.mesh import Mesh, VertexPatch, vertex_patches
from heat_estimator.multi_task_dispatch import TaskManager, dispatch
from heat_estimator.quadrature import gauss_interval, get_quadrature
from heat_estimator.rtn import RtnCellBasis, monomial_exponents, monomials
from heat_estimator.timestepper import SpaceTimeSolution, TimeGrid, time_derivative_affine

COMPATIBILITY_RTOL = 1e-8
PIVOT_RTOL = 1e-13


class KktFactorization:
    """Dense symmetric-indefinite LDL^T factorization with symmetric pivoting."""

    def __init__(self, matrix: np.ndarray, label: str = "KKT"):
        lu, d, perm = sla.ldl(matrix, lower=True)
        pivots = np.linalg.eigvalsh(d)
        largest = float(np.abs(pivots).max()) if len(pivots) else 0.0
        if len(pivots) and float(np.abs(pivots).min()) <= PIVOT_RTOL * largest:
            raise IntegrityError(
                f"{label} matrix is singular (pivot ratio "
                f"{np.abs(pivots).min() / largest:.3e})"
            )
        self.lower = lu[perm]
        self.d = d
        self.perm = perm

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        y = sla.solve_triangular(self.lower, rhs[self.perm], lower=True, unit_diagonal=True)
        z = sla.solve(self.d, y, assume_a="sym")
        w = sla.solve_triangular(self.lower.T, z, lower=False, unit_diagonal=True)
        x = np.empty_like(w)
        x[self.perm] = w
        return x


@dataclass(frozen=True)
class PatchMixedSpace:
    """RTN flux and broken-polynomial pressure spaces on one vertex patch.

    `flux_dofs[j, l]` is the patch flux dof of local RTN dof `l` on the j-th
    patch cell, or -1 where the normal trace is constrained to zero.
    Pressure dof `j * n_pressure_local + m` is monomial `m` on patch cell `j`.
    """

    patch: VertexPatch
    basis: RtnCellBasis
    cells: np.ndarray
    local_vertex: np.ndarray
    flux_dofs: np.ndarray
    n_flux: int
    n_pressure_local: int
    flux_mass: np.ndarray
    divergence: np.ndarray
    pressure_means: np.ndarray
    pressure_mass: np.ndarray
    factorization: KktFactorization

    @property
    def flux_degree(self) -> int:
        return self.basis.degree

    @property
    def n_pressure(self) -> int:
        return len(self.cells) * self.n_pressure_local

    @property
    def pressure_dim(self) -> int:
        """Dimension of Q_h^a: zero-mean broken polynomials for interior vertices."""
        return self.n_pressure - (1 if self.patch.is_interior else 0)

    def cell_blocks(self, coefficients: np.ndarray) -> np.ndarray:
        """Per-cell local RTN coefficients (n_patch_cells, n_local), zero where constrained."""
        padded = np.append(coefficients, 0.0)
        return padded[self.flux_dofs]


@dataclass(frozen=True)
class PatchRhs:
    vertex: int
    interval: int
    g: np.ndarray
    pressure_moments: np.ndarray
    flux_load: np.ndarray
    integral: float
    scale: float


@dataclass(frozen=True)
class PatchFlux:
    coefficients: np.ndarray
    pressure: np.ndarray
    mean_multiplier: float


@dataclass(frozen=True)
class EquilibratedFlux:
    """sigma_{h,tau}: per interval, per cell RTN coefficients (N, nc, n_local)."""

    grid: TimeGrid
    basis: RtnCellBasis
    per_interval: np.ndarray
    mean_multipliers: np.ndarray

    def evaluate(self, n: int, cell: int, points: np.ndarray) -> np.ndarray:
        values, _ = self.basis.evaluate(cell, points)
        return np.einsum("pld,l->pd", values, self.per_interval[n - 1, cell])

    def divergence(self, n: int, cell: int, points: np.ndarray) -> np.ndarray:
        _, div = self.basis.evaluate(cell, points)
        return div @ self.per_interval[n - 1, cell]


def _quadrature_degree(flux_degree: int) -> int:
    return 2 * flux_degree + 2


def build_patch_space(
    mesh: Mesh,
    patch: VertexPatch,
    flux_degree: int,
    basis: RtnCellBasis | None = None,
) -> PatchMixedSpace:
    """Assemble and factorize the patch saddle-point system.

    A face of a patch cell carries free flux dofs if it is shared by two
    patch cells, or if the vertex lies on the boundary and the face lies on
    the boundary of the domain. For interior vertices a multiplier row ties
    the pressure to zero mean.

    Raises:
        ValueError: If `flux_degree` < 2.
        IntegrityError: If the KKT matrix is singular.
    """
    if flux_degree < 2:
        raise ValueError(f"flux degree must be at least p + 1 = 2, got {flux_degree}")
    if basis is None:
        basis = RtnCellBasis(mesh, flux_degree)
    elif basis.degree != flux_degree:
        raise ValueError(f"basis degree {basis.degree} does not match flux degree {flux_degree}")
    dim = mesh.dim
    cells = np.asarray(patch.cells, dtype=np.int64)
    local_vertex = np.array([int(np.flatnonzero(mesh.cells[c] == patch.vertex)[0]) for c in cells])

    faces, counts = np.unique(mesh.cell_faces[cells].ravel(), return_counts=True)
    shared = dict(zip(faces.tolist(), (counts == 2).tolist()))
    flux_dofs = np.full((len(cells), basis.n_local), -1, dtype=np.int64)
    face_start: dict[int, int] = {}
    n_flux = 0
    for j, c in enumerate(cells):
        for f in range(dim + 1):
            face = int(mesh.cell_faces[c, f])
            on_boundary = mesh.face_cells[face, 1] < 0
            if not (shared[face] or (not patch.is_interior and on_boundary)):
                continue
            if face not in face_start:
                face_start[face] = n_flux
                n_flux += basis.n_face_dofs
            start = face_start[face]
            flux_dofs[j, basis.face_dofs(f)] = np.arange(start, start + basis.n_face_dofs)
        flux_dofs[j, basis.interior_dofs] = np.arange(n_flux, n_flux + basis.n_interior_dofs)
        n_flux += basis.n_interior_dofs

    exponents = monomial_exponents(dim, flux_degree)
    npl = len(exponents)
    n_pressure = len(cells) * npl
    points, weights, values, div = basis.tabulate(_quadrature_degree(flux_degree))
    flux_mass = np.zeros((n_flux, n_flux))
    divergence = np.zeros((n_pressure, n_flux))
    pressure_means = np.zeros(n_pressure)
    pressure_mass = np.zeros((len(cells), npl, npl))
    for j, c in enumerate(cells):
        w, v, dv = weights[c], values[c], div[c]
        q = monomials((points[c] - basis.centroids[c]) / basis.scales[c], exponents)
        free = flux_dofs[j] >= 0
        dofs = flux_dofs[j, free]
        local_mass = np.einsum("q,qid,qjd->ij", w, v, v)
        flux_mass[np.ix_(dofs, dofs)] += local_mass[np.ix_(free, free)]
        rows = slice(j * npl, (j + 1) * npl)
        divergence[rows, dofs] = np.einsum("q,qm,ql->ml", w, q, dv)[:, free]
        pressure_means[rows] = w @ q
        pressure_mass[j] = np.einsum("q,qm,qn->mn", w, q, q)

    size = n_flux + n_pressure + (1 if patch.is_interior else 0)
    kkt = np.zeros((size, size))
    kkt[:n_flux, :n_flux] = flux_mass
    kkt[n_flux : n_flux + n_pressure, :n_flux] = divergence
    kkt[:n_flux, n_flux : n_flux + n_pressure] = divergence.T
    if patch.is_interior:
        kkt[n_flux : n_flux + n_pressure, -1] = pressure_means
        kkt[-1, n_flux : n_flux + n_pressure] = pressure_means
    factorization = KktFactorization(kkt, label=f"patch KKT of vertex {patch.vertex}")

    return PatchMixedSpace(
        patch=patch,
        basis=basis,
        cells=cells,
        local_vertex=local_vertex,
        flux_dofs=flux_dofs,
        n_flux=n_flux,
        n_pressure_local=npl,
        flux_mass=flux_mass,
        divergence=divergence,
        pressure_means=pressure_means,
        pressure_mass=pressure_mass,
        factorization=factorization,
    )


def assemble_patch_rhs(sol: SpaceTimeSolution, space: PatchMixedSpace, n: int) -> PatchRhs:
    """Source g = psi_a f_n - psi_a dU/dt - grad psi_a . grad u_n and flux load -(psi_a grad u_n, v).

    Raises:
        IntegrityError: If g has a nonzero mean on an interior patch, which
            means the time step was not solved accurately.
    """
    fe = sol.space
    mesh = fe.mesh
    basis = space.basis
    degree = _quadrature_degree(space.flux_degree)
    bary = get_quadrature(mesh.dim, degree).points
    points, weights, values, _ = basis.tabulate(degree)
    exponents = monomial_exponents(mesh.dim, space.flux_degree)
    npl = space.n_pressure_local

    dt_cells = fe.cell_values(time_derivative_affine(sol, n))
    grad_u = fe.cell_gradients(sol.coefficients[n])
    f_cells = sol.data_snapshots[n - 1]

    g = np.zeros((len(space.cells), npl))
    moments = np.zeros(space.n_pressure)
    load = np.zeros(space.n_flux)
    integral = 0.0
    scale = 0.0
    for j, c in enumerate(space.cells):
        i = space.local_vertex[j]
        w = weights[c]
        psi = bary[:, i]
        grad_psi = mesh.barycentric_gradients[c, i]
        source = psi * (bary @ f_cells[c])
        storage = psi * (bary @ dt_cells[c])
        transport = float(grad_psi @ grad_u[c])
        g_values = source - storage - transport
        q = monomials((points[c] - basis.centroids[c]) / basis.scales[c], exponents)
        cell_moments = q.T @ (w * g_values)
        moments[j * npl : (j + 1) * npl] = cell_moments
        g[j] = np.linalg.solve(space.pressure_mass[j], cell_moments)
        integral += float(w @ g_values)
        scale += float(w @ (np.abs(source) + np.abs(storage) + abs(transport)))

        free = space.flux_dofs[j] >= 0
        flux_load = -np.einsum("q,qld,d->l", w * psi, values[c], grad_u[c])
        load[space.flux_dofs[j, free]] += flux_load[free]

    if space.patch.is_interior and abs(integral) > COMPATIBILITY_RTOL * scale:
        raise IntegrityError(
            f"compatibility violated on the patch of vertex {space.patch.vertex}, "
            f"interval {n}: mean of g is {integral:.3e} against scale {scale:.3e}"
        )
    return PatchRhs(
        vertex=space.patch.vertex,
        interval=n,
        g=g,
        pressure_moments=moments,
        flux_load=load,
        integral=integral,
        scale=scale,
    )


def solve_patch(space: PatchMixedSpace, rhs: PatchRhs) -> PatchFlux:
    """Minimize ||v + psi_a grad u_n|| over the patch flux space subject to div v = g."""
    parts = [rhs.flux_load, rhs.pressure_moments]
    if space.patch.is_interior:
        parts.append(np.zeros(1))
    solution = space.factorization.solve(np.concatenate(parts))
    n_flux, n_pressure = space.n_flux, space.n_pressure
    return PatchFlux(
        coefficients=solution[:n_flux],
        pressure=solution[n_flux : n_flux + n_pressure],
        mean_multiplier=float(solution[-1]) if space.patch.is_interior else 0.0,
    )


def build_global_flux(
    sol: SpaceTimeSolution, flux_degree: int = 2, threads: int = 1
) -> EquilibratedFlux:
    """Sum the patch fluxes of every vertex on every interval.

    Each patch matrix is factorized once and reused on all intervals. Patch
    work runs on `threads` workers; the sum is taken in ascending vertex
    order so the result does not depend on the thread count.
    """
    mesh = sol.space.mesh
    grid = sol.grid
    basis = RtnCellBasis(mesh, flux_degree)
    patches = vertex_patches(mesh)
    spaces: dict[int, PatchMixedSpace] = {}
    results: dict[tuple[int, int], PatchFlux] = {}

    task_manager = TaskManager()
    for patch in patches:
        setup_id = task_manager.add_task([], ("setup", patch.vertex, 0))
        for n in range(1, grid.n_intervals + 1):
            task_manager.add_task([setup_id], ("solve", patch.vertex, n))

    def handler(extra):
        kind, vertex, n = extra
        if kind == "setup":
            spaces[vertex] = build_patch_space(mesh, patches[vertex], flux_degree, basis)
        else:
            space = spaces[vertex]
            results[(vertex, n)] = solve_patch(space, assemble_patch_rhs(sol, space, n))

    logger.info(
        f"Equilibrating flux on {len(patches)} patches x {grid.n_intervals} intervals "
        f"with {threads} thread(s)"
    )
    dispatch(task_manager, handler, threads)

    per_interval = np.zeros((grid.n_intervals, mesh.n_cells, basis.n_local))
    multipliers = np.zeros((grid.n_intervals, mesh.n_vertices))
    for vertex in range(mesh.n_vertices):
        space = spaces[vertex]
        for n in range(1, grid.n_intervals + 1):
            flux = results[(vertex, n)]
            per_interval[n - 1, space.cells] += space.cell_blocks(flux.coefficients)
            multipliers[n - 1, vertex] = flux.mean_multiplier
    logger.debug(f"Largest patch mean multiplier {np.abs(multipliers).max(initial=0.0):.3e}")
    per_interval.setflags(write=False)
    return EquilibratedFlux(grid, basis, per_interval, multipliers)


def equilibration_residual(sol: SpaceTimeSolution, flux: EquilibratedFlux) -> np.ndarray:
    """Relative L2 norm of div sigma - (f_h - dU/dt) on each interval, shape (N,)."""
    fe = sol.space
    degree = _quadrature_degree(flux.basis.degree)
    bary = get_quadrature(fe.mesh.dim, degree).points
    _, weights, _, div = flux.basis.tabulate(degree)
    out = np.empty(sol.grid.n_intervals)
    for n in range(1, sol.grid.n_intervals + 1):
        div_q = np.einsum("cql,cl->cq", div, flux.per_interval[n - 1])
        f_q = sol.data_snapshots[n - 1] @ bary.T
        dt_q = fe.cell_values(time_derivative_affine(sol, n)) @ bary.T
        residual = np.sqrt(np.sum(weights * (div_q - f_q + dt_q) ** 2))
        scale = np.sqrt(np.sum(weights * f_q**2)) + np.sqrt(np.sum(weights * dt_q**2))
        out[n - 1] = residual / scale if scale > 0.0 else residual
    return out


def normal_trace_jumps(flux: EquilibratedFlux) -> np.ndarray:
    """Largest normal-trace jump over interior faces per interval, relative to max |sigma . n|."""
    basis = flux.basis
    mesh = basis.mesh
    s, _ = gauss_interval(basis.degree + 2)
    traces = []
    for face in np.flatnonzero(mesh.face_cells[:, 1] >= 0):
        face_vertices = mesh.vertices[mesh.faces[face]]
        if mesh.dim == 1:
            points = face_vertices
        else:
            points = face_vertices[0] + s[:, None] * (face_vertices[1] - face_vertices[0])
        normal = mesh.face_normals[face]
        pair = []
        for cell in mesh.face_cells[face]:
            values, _ = basis.evaluate(int(cell), points)
            pair.append((int(cell), values @ normal))
        traces.append(pair)

    out = np.zeros(flux.grid.n_intervals)
    for n in range(1, flux.grid.n_intervals + 1):
        coefficients = flux.per_interval[n - 1]
        jump = 0.0
        magnitude = 0.0
        for (left, trace_left), (right, trace_right) in traces:
            a = trace_left @ coefficients[left]
            b = trace_right @ coefficients[right]
            jump = max(jump, float(np.abs(a - b).max()))
            magnitude = max(magnitude, float(np.abs(a).max()), float(np.abs(b).max()))
        out[n - 1] = jump / magnitude if magnitude > 0.0 else jump
    return out
