import math
import os
import tempfile
import unittest

import numpy as np

from heat_estimator.mesh import (
    Mesh,
    build_interval_mesh,
    build_unit_square_mesh,
    format_mesh_text,
    locate_points,
    parse_mesh_text,
    quality_report,
    read_mesh,
    uniform_refine,
    vertex_patches,
    write_mesh,
)


class TestMeshBuilders(unittest.TestCase):
    def test_interval_mesh(self):
        mesh = build_interval_mesh(4)
        self.assertEqual(mesh.dim, 1)
        self.assertEqual(mesh.n_cells, 4)
        np.testing.assert_allclose(mesh.cell_measures, 0.25)
        self.assertAlmostEqual(mesh.h_max, 0.25)
        np.testing.assert_array_equal(mesh.interior_vertices, [1, 2, 3])
        self.assertAlmostEqual(mesh.measure, 1.0)

    def test_unit_square_mesh(self):
        mesh = build_unit_square_mesh(2)
        self.assertEqual(mesh.n_vertices, 9)
        self.assertEqual(mesh.n_cells, 8)
        np.testing.assert_allclose(mesh.cell_measures, 0.125)
        self.assertAlmostEqual(mesh.h_max, math.sqrt(2) / 2)
        np.testing.assert_array_equal(mesh.interior_vertices, [4])
        self.assertEqual(len(mesh.boundary_faces), 8)
        self.assertAlmostEqual(mesh.measure, 1.0)

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            build_interval_mesh(0)
        with self.assertRaises(ValueError):
            build_unit_square_mesh(0)
        with self.assertRaises(ValueError):
            Mesh([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], [[0, 1, 2]])
        with self.assertRaises(ValueError):
            Mesh([[0.0], [1.0]], [[0, 5]])

    def test_face_shared_by_three_cells(self):
        vertices = [[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0], [0.5, 0.5]]
        with self.assertRaises(ValueError):
            Mesh(vertices, [[0, 1, 2], [0, 1, 3], [0, 1, 4]])

    def test_arrays_are_read_only(self):
        mesh = build_unit_square_mesh(1)
        with self.assertRaises(ValueError):
            mesh.vertices[0, 0] = 3.0

    def test_barycentric_gradients_sum_to_zero(self):
        mesh = build_unit_square_mesh(3)
        np.testing.assert_allclose(mesh.barycentric_gradients.sum(axis=1), 0.0, atol=1e-12)

    def test_face_normals_are_unit(self):
        mesh = build_unit_square_mesh(2)
        np.testing.assert_allclose(np.linalg.norm(mesh.face_normals, axis=1), 1.0)


class TestPatches(unittest.TestCase):
    def test_center_patch_of_unit_square(self):
        mesh = build_unit_square_mesh(2)
        patch = vertex_patches(mesh)[4]
        self.assertTrue(patch.is_interior)
        self.assertEqual(len(patch.cells), 6)
        self.assertAlmostEqual(patch.diameter, math.sqrt(2))

    def test_corner_patch_is_boundary(self):
        mesh = build_unit_square_mesh(2)
        patch = vertex_patches(mesh)[0]
        self.assertFalse(patch.is_interior)
        self.assertEqual(len(patch.cells), 2)

    def test_interval_patch(self):
        mesh = build_interval_mesh(4)
        patch = vertex_patches(mesh)[2]
        self.assertEqual(patch.cells, (1, 2))
        self.assertAlmostEqual(patch.diameter, 0.5)

    def test_quality_report(self):
        mesh = build_unit_square_mesh(2)
        report = quality_report(mesh)
        inradius = 2 * 0.125 / (0.5 + 0.5 + math.sqrt(2) / 2)
        self.assertAlmostEqual(report.shape_regularity, (math.sqrt(2) / 2) / inradius)
        self.assertEqual(len(report.patch_diameters), 9)


class TestRefinement(unittest.TestCase):
    def test_interval_refinement(self):
        fine = uniform_refine(build_interval_mesh(3))
        self.assertEqual(fine.n_cells, 6)
        self.assertAlmostEqual(fine.h_max, 1 / 6)
        self.assertAlmostEqual(fine.measure, 1.0)

    def test_triangle_refinement(self):
        coarse = build_unit_square_mesh(2)
        fine = uniform_refine(coarse)
        self.assertEqual(fine.n_cells, 32)
        self.assertEqual(fine.n_vertices, 25)
        self.assertAlmostEqual(fine.h_max, coarse.h_max / 2)
        self.assertAlmostEqual(fine.measure, 1.0)
        self.assertGreater(fine.cell_measures.min(), 0.0)

    def test_refined_square_matches_finer_square(self):
        refined = uniform_refine(build_unit_square_mesh(1))
        direct = build_unit_square_mesh(2)
        np.testing.assert_array_equal(
            refined.vertices[np.lexsort(refined.vertices.T)],
            direct.vertices[np.lexsort(direct.vertices.T)],
        )
        np.testing.assert_allclose(np.sort(refined.cell_measures), np.sort(direct.cell_measures))

        def cell_set(mesh):
            return {frozenset(map(tuple, cell)) for cell in mesh.cell_vertices.tolist()}

        self.assertEqual(cell_set(refined), cell_set(direct))

    def test_shape_regularity_survives_refinement(self):
        mesh = build_unit_square_mesh(3)
        coarse = quality_report(mesh).shape_regularity
        for _ in range(2):
            mesh = uniform_refine(mesh)
            self.assertAlmostEqual(quality_report(mesh).shape_regularity, coarse, places=10)


class TestLocatePoints(unittest.TestCase):
    def test_barycentric_coordinates_reproduce_points(self):
        mesh = build_unit_square_mesh(4)
        rng = np.random.default_rng(3)
        points = rng.uniform(0.0, 1.0, size=(50, 2))
        cells, bary = locate_points(mesh, points)
        mapped = np.einsum("pi,pid->pd", bary, mesh.cell_vertices[cells])
        np.testing.assert_allclose(mapped, points, atol=1e-12)
        self.assertTrue(np.all(bary >= -1e-12))

    def test_point_outside(self):
        with self.assertRaises(ValueError):
            locate_points(build_interval_mesh(2), [[1.5]])


class TestMeshText(unittest.TestCase):
    def test_parse(self):
        mesh = parse_mesh_text("1 3 2\n0.0\n0.5\n1.0\n0 1\n1 2\n")
        self.assertEqual(mesh.n_cells, 2)
        np.testing.assert_array_equal(mesh.interior_vertices, [1])

    def test_malformed(self):
        with self.assertRaises(ValueError):
            parse_mesh_text("")
        with self.assertRaises(ValueError):
            parse_mesh_text("1 3 2\n0.0\n1.0\n0 1\n")
        with self.assertRaises(ValueError):
            parse_mesh_text("one two three\n")

    def test_hanging_vertex_is_rejected(self):
        # vertex 4 sits on the hypotenuse of the lower triangle
        text = "2 5 3\n0 0\n2 0\n0 2\n2 2\n1 1\n0 1 2\n1 3 4\n4 3 2\n"
        with self.assertRaises(ValueError) as ctx:
            parse_mesh_text(text)
        self.assertIn("hanging vertex 4", str(ctx.exception))

    def test_write_and_read(self):
        mesh = build_unit_square_mesh(2)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "square.mesh")
            write_mesh(mesh, path)
            loaded = read_mesh(path)
        np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
        np.testing.assert_array_equal(loaded.cells, mesh.cells)
        self.assertEqual(format_mesh_text(loaded), format_mesh_text(mesh))


if __name__ == "__main__":
    unittest.main()
