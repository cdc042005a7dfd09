from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class VertexPatch:
    """Cells sharing one vertex, i.e. the support of its hat function."""

    vertex: int
    cells: tuple[int, ...]
    diameter: float
    is_interior: bool


@dataclass(frozen=True)
class MeshQualityReport:
    h_max: float
    shape_regularity: float
    patch_diameters: np.ndarray


def _pairwise_diameter(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=-1)).max())


class Mesh:
    """Conforming simplicial mesh of intervals (d = 1) or triangles (d = 2).

    Face `i` of a cell is the face opposite its local vertex `i`. Faces are
    stored as sorted global vertex tuples, which fixes a global orientation
    for face normals and face parametrisations. Boundary flags are inferred
    from face adjacency. Triangle meshes with a vertex inside a face owned
    by a single cell (a hanging node) are rejected.
    """

    def __init__(self, vertices, cells):
        vertices = np.asarray(vertices, dtype=float)
        if vertices.ndim == 1:
            vertices = vertices[:, None]
        cells = np.asarray(cells, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] not in (1, 2):
            raise ValueError("vertices must have shape (n_vertices, d) with d in {1, 2}")
        dim = vertices.shape[1]
        if cells.ndim != 2 or cells.shape[1] != dim + 1:
            raise ValueError(f"cells must have shape (n_cells, {dim + 1})")
        if len(cells) == 0:
            raise ValueError("mesh needs at least one cell")
        if cells.min() < 0 or cells.max() >= len(vertices):
            raise ValueError("cell vertex index out of range")

        self.dim = dim
        self.vertices = vertices.copy()
        self.cells = cells.copy()
        self.vertices.setflags(write=False)
        self.cells.setflags(write=False)

        if np.any(self.cell_measures <= 1e-14 * self.cell_diameters**dim):
            bad = int(np.argmin(self.cell_measures))
            raise ValueError(f"degenerate cell {bad} in mesh")
        self._build_faces()

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def _build_faces(self) -> None:
        face_index: dict[tuple[int, ...], int] = {}
        faces: list[tuple[int, ...]] = []
        owners: list[list[int]] = []
        cell_faces = np.empty_like(self.cells)
        for c, cell in enumerate(self.cells.tolist()):
            for i in range(self.dim + 1):
                key = tuple(sorted(cell[:i] + cell[i + 1 :]))
                f = face_index.get(key)
                if f is None:
                    f = len(faces)
                    face_index[key] = f
                    faces.append(key)
                    owners.append([])
                owners[f].append(c)
                if len(owners[f]) > 2:
                    raise ValueError(f"face {key} shared by more than two cells")
                cell_faces[c, i] = f

        self.faces = np.array(faces, dtype=np.int64).reshape(len(faces), self.dim)
        self.face_cells = np.array(
            [o + [-1] * (2 - len(o)) for o in owners], dtype=np.int64
        )
        self.cell_faces = cell_faces
        self.boundary_faces = np.flatnonzero(self.face_cells[:, 1] < 0)

        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[self.faces[self.boundary_faces].ravel()] = True
        self.boundary_vertex_flags = flags

        neighbors = np.full_like(self.cells, -1)
        for c in range(self.n_cells):
            for i in range(self.dim + 1):
                a, b = self.face_cells[self.cell_faces[c, i]]
                neighbors[c, i] = b if a == c else a
        self.cell_neighbors = neighbors
        if self.dim == 2:
            self._check_hanging_vertices()
        for arr in (self.faces, self.face_cells, self.cell_faces, self.boundary_faces,
                    self.boundary_vertex_flags, self.cell_neighbors):
            arr.setflags(write=False)

    def _check_hanging_vertices(self) -> None:
        """Reject vertices lying inside a face that only one cell owns."""
        starts = self.vertices[self.faces[self.boundary_faces, 0]]
        edges = self.vertices[self.faces[self.boundary_faces, 1]] - starts
        length_sq = (edges**2).sum(axis=1)
        chunk = 64
        for first in range(0, len(starts), chunk):
            rel = self.vertices[None, :, :] - starts[first : first + chunk, None, :]
            edge = edges[first : first + chunk, None, :]
            scale = length_sq[first : first + chunk, None]
            t = (rel * edge).sum(axis=-1) / scale
            cross = rel[..., 0] * edge[..., 1] - rel[..., 1] * edge[..., 0]
            inside = (t > 1e-10) & (t < 1.0 - 1e-10) & (np.abs(cross) <= 1e-10 * scale)
            if inside.any():
                f, v = np.argwhere(inside)[0]
                face = tuple(int(i) for i in self.faces[self.boundary_faces[first + f]])
                raise ValueError(f"hanging vertex {int(v)} on face {face}; mesh is not conforming")

    @property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_vertex_flags)

    @cached_property
    def cell_vertices(self) -> np.ndarray:
        """Coordinates per cell, shape (nc, d + 1, d)."""
        return self.vertices[self.cells]

    @cached_property
    def _jacobians(self) -> np.ndarray:
        cv = self.cell_vertices
        return np.transpose(cv[:, 1:, :] - cv[:, :1, :], (0, 2, 1))

    @cached_property
    def cell_measures(self) -> np.ndarray:
        return np.abs(np.linalg.det(self._jacobians)) / math.factorial(self.dim)

    @cached_property
    def cell_diameters(self) -> np.ndarray:
        cv = self.cell_vertices
        diff = cv[:, :, None, :] - cv[:, None, :, :]
        return np.sqrt((diff**2).sum(axis=-1)).max(axis=(1, 2))

    @cached_property
    def inradii(self) -> np.ndarray:
        """rho_K: h_K / 2 for intervals, 2 |K| / perimeter for triangles."""
        if self.dim == 1:
            return 0.5 * self.cell_diameters
        cv = self.cell_vertices
        edges = np.roll(cv, -1, axis=1) - cv
        perimeter = np.sqrt((edges**2).sum(axis=-1)).sum(axis=1)
        return 2.0 * self.cell_measures / perimeter

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """Gradients of the barycentric coordinates, shape (nc, d + 1, d)."""
        inv = np.linalg.inv(self._jacobians)
        grads = np.empty((self.n_cells, self.dim + 1, self.dim))
        grads[:, 1:, :] = inv
        grads[:, 0, :] = -inv.sum(axis=1)
        return grads

    @cached_property
    def cell_centroids(self) -> np.ndarray:
        return self.cell_vertices.mean(axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Globally oriented unit normals, shape (nf, d).

        In 2D the face (a, b) with a < b has tangent x_b - x_a and normal
        (t_y, -t_x) / |t|. In 1D every face normal is +1.
        """
        if self.dim == 1:
            return np.ones((self.n_faces, 1))
        t = self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]
        normal = np.column_stack([t[:, 1], -t[:, 0]])
        return normal / np.linalg.norm(normal, axis=1)[:, None]

    @cached_property
    def face_measures(self) -> np.ndarray:
        if self.dim == 1:
            return np.ones(self.n_faces)
        t = self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]
        return np.linalg.norm(t, axis=1)

    @cached_property
    def vertex_cells(self) -> tuple[tuple[int, ...], ...]:
        buckets: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for c, cell in enumerate(self.cells.tolist()):
            for v in cell:
                buckets[v].append(c)
        return tuple(tuple(b) for b in buckets)

    @cached_property
    def h_max(self) -> float:
        return float(self.cell_diameters.max())

    @property
    def measure(self) -> float:
        return float(self.cell_measures.sum())

    @cached_property
    def bounding_box(self) -> np.ndarray:
        """Side lengths of the axis-aligned bounding box, shape (d,)."""
        return self.vertices.max(axis=0) - self.vertices.min(axis=0)

    def __repr__(self) -> str:
        return (
            f"Mesh(dim={self.dim}, n_vertices={self.n_vertices}, "
            f"n_cells={self.n_cells})"
        )


def build_interval_mesh(n_cells: int, domain: tuple[float, float] = (0.0, 1.0)) -> Mesh:
    if n_cells < 1:
        raise ValueError(f"n_cells must be >= 1, got {n_cells}")
    a, b = domain
    if not b > a:
        raise ValueError(f"invalid interval {domain}")
    x = np.linspace(a, b, n_cells + 1)
    cells = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    return Mesh(x[:, None], cells)


def build_unit_square_mesh(n_per_side: int) -> Mesh:
    """Structured triangulation of (0, 1)^2.

    Vertex (i, j) has index i + j (n + 1); every square is split along its
    (0, 0)-(1, 1) diagonal.
    """
    if n_per_side < 1:
        raise ValueError(f"n_per_side must be >= 1, got {n_per_side}")
    n = n_per_side
    s = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(s, s, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    cells = []
    for j in range(n):
        for i in range(n):
            v00 = i + j * (n + 1)
            v10 = v00 + 1
            v01 = v00 + n + 1
            v11 = v01 + 1
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return Mesh(vertices, cells)


def uniform_refine(mesh: Mesh) -> Mesh:
    """Bisect every interval, or split every triangle into four by edge midpoints."""
    vertices = [tuple(v) for v in mesh.vertices.tolist()]
    if mesh.dim == 1:
        cells = []
        for v0, v1 in mesh.cells.tolist():
            m = len(vertices)
            vertices.append(tuple(0.5 * (np.asarray(vertices[v0]) + np.asarray(vertices[v1]))))
            cells.extend([(v0, m), (m, v1)])
        return Mesh(np.array(vertices), cells)

    midpoint: dict[tuple[int, int], int] = {}

    def mid(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        index = midpoint.get(key)
        if index is None:
            index = len(vertices)
            xa, xb = mesh.vertices[a], mesh.vertices[b]
            vertices.append(tuple(0.5 * (xa + xb)))
            midpoint[key] = index
        return index

    cells = []
    for v0, v1, v2 in mesh.cells.tolist():
        m01, m12, m02 = mid(v0, v1), mid(v1, v2), mid(v0, v2)
        cells.extend(
            [(v0, m01, m02), (m01, v1, m12), (m02, m12, v2), (m01, m12, m02)]
        )
    return Mesh(np.array(vertices), cells)


def vertex_patches(mesh: Mesh) -> list[VertexPatch]:
    patches = []
    for a, cells in enumerate(mesh.vertex_cells):
        patch_vertices = np.unique(mesh.cells[list(cells)])
        patches.append(
            VertexPatch(
                vertex=a,
                cells=tuple(sorted(cells)),
                diameter=_pairwise_diameter(mesh.vertices[patch_vertices]),
                is_interior=not bool(mesh.boundary_vertex_flags[a]),
            )
        )
    return patches


def quality_report(mesh: Mesh) -> MeshQualityReport:
    diameters = np.array([p.diameter for p in vertex_patches(mesh)])
    return MeshQualityReport(
        h_max=mesh.h_max,
        shape_regularity=float((mesh.cell_diameters / mesh.inradii).max()),
        patch_diameters=diameters,
    )


def locate_points(mesh: Mesh, points) -> tuple[np.ndarray, np.ndarray]:
    """Find a containing cell and barycentric coordinates for each point.

    Points on shared faces go to the cell whose smallest barycentric
    coordinate is largest.

    Raises:
        ValueError: If a point lies outside the mesh.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != mesh.dim:
        points = points.reshape(-1, mesh.dim)
    inv = np.linalg.inv(mesh._jacobians)
    origin = mesh.cell_vertices[:, 0, :]
    cells = np.empty(len(points), dtype=np.int64)
    bary = np.empty((len(points), mesh.dim + 1))
    chunk = 2048
    for start in range(0, len(points), chunk):
        p = points[start : start + chunk]
        local = np.einsum("cij,pcj->pci", inv, p[:, None, :] - origin[None, :, :])
        full = np.concatenate([1.0 - local.sum(axis=-1, keepdims=True), local], axis=-1)
        score = full.min(axis=-1)
        best = score.argmax(axis=1)
        if np.any(score[np.arange(len(p)), best] < -1e-10):
            raise ValueError("point outside the mesh")
        cells[start : start + chunk] = best
        bary[start : start + chunk] = full[np.arange(len(p)), best]
    return cells, bary


def parse_mesh_text(text: str) -> Mesh:
    """Parse `dim n_vertices n_cells`, then coordinates, then 0-based cells."""
    lines = [line.split() for line in text.splitlines() if line.strip()]
    if not lines:
        raise ValueError("empty mesh file")
    try:
        dim, n_vertices, n_cells = (int(v) for v in lines[0])
    except ValueError as exc:
        raise ValueError(f"malformed mesh header: {' '.join(lines[0])}") from exc
    if len(lines) != 1 + n_vertices + n_cells:
        raise ValueError(
            f"expected {n_vertices} vertex lines and {n_cells} cell lines, "
            f"found {len(lines) - 1} lines"
        )
    vertices = np.array([[float(v) for v in row] for row in lines[1 : 1 + n_vertices]])
    cells = np.array([[int(v) for v in row] for row in lines[1 + n_vertices :]])
    if vertices.shape[1] != dim:
        raise ValueError(f"vertex lines must have {dim} coordinates")
    return Mesh(vertices, cells)


def read_mesh(path: str | Path) -> Mesh:
    return parse_mesh_text(Path(path).read_text(encoding="utf-8"))


def format_mesh_text(mesh: Mesh) -> str:
    lines = [f"{mesh.dim} {mesh.n_vertices} {mesh.n_cells}"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [" ".join(str(int(i)) for i in c) for c in mesh.cells]
    return "\n".join(lines) + "\n"


def write_mesh(mesh: Mesh, path: str | Path) -> None:
    Path(path).write_text(format_mesh_text(mesh), encoding="utf-8")

