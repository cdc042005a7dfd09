from __future__ import annotations

import threading

import numpy as np
from numpy.polynomial.legendre import legval

from heat_estimator.mesh import Mesh
from heat_estimator.quadrature import gauss_interval, get_quadrature, map_to_cells


def monomial_exponents(dim: int, max_degree: int) -> list[tuple[int, ...]]:
    if max_degree < 0:
        return []
    if dim == 1:
        return [(m,) for m in range(max_degree + 1)]
    return [(total - b, b) for total in range(max_degree + 1) for b in range(total + 1)]


def monomials(xi: np.ndarray, exponents: list[tuple[int, ...]]) -> np.ndarray:
    """Monomials in local coordinates, shape (npts, len(exponents))."""
    columns = [np.prod(xi ** np.asarray(e), axis=1) for e in exponents]
    return np.column_stack(columns) if columns else np.zeros((len(xi), 0))


class RtnCellBasis:
    """RTN_k = P_k(K)^d + x P_k(K) on every cell, with moment degrees of freedom.

    Polynomials are written in local coordinates xi = (x - centroid) / h_K.
    Local dofs are ordered face by face (face `i` opposite local vertex `i`)
    and then the interior moments:

    - face moments (1/|e|) int_e (v . n_e) P_m(2s - 1) ds, m = 0..k, with n_e
      the global face normal and s running from the lower to the higher global
      vertex of e (in 1D the single point value v(x_e));
    - interior moments (1/|K|) int_K v . w for w in P_{k-1}(K)^d.

    Cells sharing a face therefore share its moment functionals, and a field
    assembled from shared face dofs has a continuous normal trace.
    """

    def __init__(self, mesh: Mesh, degree: int):
        if degree < 0:
            raise ValueError(f"RTN degree must be >= 0, got {degree}")
        self.mesh = mesh
        self.degree = degree
        self.dim = mesh.dim
        k = degree
        if self.dim == 1:
            self._raw = [("s", m) for m in range(k + 2)]
            self.n_face_dofs = 1
        else:
            full = monomial_exponents(2, k)
            self._raw = (
                [("x", a, b) for a, b in full]
                + [("y", a, b) for a, b in full]
                + [("r", a, b) for a, b in full if a + b == k]
            )
            self.n_face_dofs = k + 1
        self.n_local = len(self._raw)
        self.n_interior_dofs = self.n_local - (self.dim + 1) * self.n_face_dofs
        self.scales = mesh.cell_diameters
        self.centroids = mesh.cell_centroids
        self.coefficients = np.stack([np.linalg.inv(self._dof_matrix(c)) for c in range(mesh.n_cells)])
        self.coefficients.setflags(write=False)
        self._tabulated: dict[int, tuple[np.ndarray, ...]] = {}
        self._tabulate_lock = threading.Lock()

    def face_dofs(self, local_face: int) -> slice:
        start = local_face * self.n_face_dofs
        return slice(start, start + self.n_face_dofs)

    @property
    def interior_dofs(self) -> slice:
        return slice((self.dim + 1) * self.n_face_dofs, self.n_local)

    def _raw_values(self, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Raw basis values (npts, nraw, d) and divergence in xi (npts, nraw)."""
        npts = len(xi)
        values = np.zeros((npts, self.n_local, self.dim))
        div = np.zeros((npts, self.n_local))
        if self.dim == 1:
            s = xi[:, 0]
            for j, (_, m) in enumerate(self._raw):
                values[:, j, 0] = s**m
                if m > 0:
                    div[:, j] = m * s ** (m - 1)
            return values, div
        x, y = xi[:, 0], xi[:, 1]
        for j, (kind, a, b) in enumerate(self._raw):
            mono = x**a * y**b
            if kind == "x":
                values[:, j, 0] = mono
                if a > 0:
                    div[:, j] = a * x ** (a - 1) * y**b
            elif kind == "y":
                values[:, j, 1] = mono
                if b > 0:
                    div[:, j] = b * x**a * y ** (b - 1)
            else:
                values[:, j, 0] = x * mono
                values[:, j, 1] = y * mono
                div[:, j] = (self.degree + 2) * mono
        return values, div

    def _local(self, cell: int, points: np.ndarray) -> np.ndarray:
        return (points - self.centroids[cell]) / self.scales[cell]

    def _dof_matrix(self, cell: int) -> np.ndarray:
        mesh = self.mesh
        k = self.degree
        rows = []
        for local_face in range(self.dim + 1):
            face = mesh.cell_faces[cell, local_face]
            face_vertices = mesh.vertices[mesh.faces[face]]
            normal = mesh.face_normals[face]
            if self.dim == 1:
                values, _ = self._raw_values(self._local(cell, face_vertices))
                rows.append(values[0] @ normal)
                continue
            s, w = gauss_interval(k + 2)
            points = face_vertices[0] + s[:, None] * (face_vertices[1] - face_vertices[0])
            values, _ = self._raw_values(self._local(cell, points))
            normal_trace = values @ normal
            for m in range(k + 1):
                legendre = legval(2.0 * s - 1.0, np.eye(k + 1)[m])
                rows.append((w * legendre) @ normal_trace)

        rule = get_quadrature(self.dim, 2 * k + 2)
        points, weights = map_to_cells(
            mesh.cell_vertices[cell : cell + 1], mesh.cell_measures[cell : cell + 1], rule
        )
        xi = self._local(cell, points[0])
        values, _ = self._raw_values(xi)
        test = monomials(xi, monomial_exponents(self.dim, k - 1))
        scaled = weights[0][:, None] * test / mesh.cell_measures[cell]
        for component in range(self.dim):
            for t in range(test.shape[1]):
                rows.append(scaled[:, t] @ values[:, :, component])
        return np.array(rows)

    def evaluate(self, cell: int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Basis values (npts, n_local, d) and divergence (npts, n_local) at physical points."""
        points = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, self.dim)
        raw, raw_div = self._raw_values(self._local(cell, points))
        coefficients = self.coefficients[cell]
        values = np.einsum("prd,rl->pld", raw, coefficients)
        div = raw_div @ coefficients / self.scales[cell]
        return values, div

    def tabulate(self, degree: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Quadrature data on all cells for a rule of the given exactness.

        The cache is shared by the patch workers; the first caller fills it
        under a lock and every later caller receives the same arrays.

        Returns:
            tuple: points (nc, nq, d), weights (nc, nq), basis values
            (nc, nq, n_local, d) and divergences (nc, nq, n_local).
        """
        cached = self._tabulated.get(degree)
        if cached is not None:
            return cached
        with self._tabulate_lock:
            cached = self._tabulated.get(degree)
            if cached is None:
                cached = self._tabulated[degree] = self._tabulate(degree)
        return cached

    def _tabulate(self, degree: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        mesh = self.mesh
        rule = get_quadrature(self.dim, degree)
        points, weights = map_to_cells(mesh.cell_vertices, mesh.cell_measures, rule)
        nc, nq, d = points.shape
        xi = (points - self.centroids[:, None, :]) / self.scales[:, None, None]
        raw, raw_div = self._raw_values(xi.reshape(-1, d))
        raw = raw.reshape(nc, nq, self.n_local, d)
        raw_div = raw_div.reshape(nc, nq, self.n_local)
        values = np.einsum("cqrd,crl->cqld", raw, self.coefficients)
        div = np.einsum("cqr,crl->cql", raw_div, self.coefficients) / self.scales[:, None, None]
        tabulated = (points, weights, values, div)
        for array in tabulated:
            array.setflags(write=False)
        return tabulated
