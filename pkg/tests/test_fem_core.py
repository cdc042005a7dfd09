import unittest

import numpy as np
from scipy.sparse import csr_matrix

from heat_estimator.errors import NumericFailure
from heat_estimator.fem_core import (
    FeSpace,
    assemble_mass,
    assemble_stiffness,
    broken_p1_project,
    estimate_projection_stability,
    l2_project,
    prolongation,
    solve_spd,
)
from heat_estimator.mesh import build_interval_mesh, build_unit_square_mesh


class TestFeSpace(unittest.TestCase):
    def test_stiffness_two_cells(self):
        space = FeSpace(build_interval_mesh(2))
        np.testing.assert_allclose(space.stiffness.toarray(), [[4.0]])

    def test_stiffness_four_cells(self):
        space = FeSpace(build_interval_mesh(4))
        expected = 8.0 * np.eye(3) - 4.0 * (np.eye(3, k=1) + np.eye(3, k=-1))
        np.testing.assert_allclose(space.stiffness.toarray(), expected)

    def test_mass_four_cells(self):
        space = FeSpace(build_interval_mesh(4))
        expected = np.eye(3) / 6.0 + (np.eye(3, k=1) + np.eye(3, k=-1)) / 24.0
        np.testing.assert_allclose(space.mass.toarray(), expected)

    def test_operators_are_symmetric(self):
        space = FeSpace(build_unit_square_mesh(4))
        self.assertEqual(space.stiffness.format, "csr")
        np.testing.assert_allclose(space.stiffness.toarray(), space.stiffness.toarray().T)
        np.testing.assert_allclose(space.mass.toarray(), space.mass.toarray().T)

    def test_assembly_helpers_match_space(self):
        space = FeSpace(build_interval_mesh(2))
        np.testing.assert_allclose(assemble_stiffness(space).toarray(), [[4.0]])
        np.testing.assert_allclose(assemble_mass(space).toarray(), [[1.0 / 3.0]])

    def test_only_p1(self):
        with self.assertRaises(ValueError):
            FeSpace(build_interval_mesh(2), degree=2)

    def test_load_of_constant(self):
        space = FeSpace(build_interval_mesh(4))
        np.testing.assert_allclose(space.assemble_load(lambda x: np.ones(len(x))), 0.25)

    def test_gradients_and_values(self):
        space = FeSpace(build_interval_mesh(2))
        coefficients = np.array([1.0])
        np.testing.assert_allclose(space.cell_gradients(coefficients)[:, 0], [2.0, -2.0])
        bary = np.array([[0.5, 0.5]])
        np.testing.assert_allclose(space.evaluate_at(coefficients, bary)[:, 0], [0.5, 0.5])


class TestProjections(unittest.TestCase):
    def test_l2_projection_reproduces_p1(self):
        space = FeSpace(build_interval_mesh(4))
        tent = l2_project(space, lambda x: np.minimum(x[:, 0], 1.0 - x[:, 0]))
        np.testing.assert_allclose(tent, [0.25, 0.5, 0.25], atol=1e-10)

    def test_l2_projection_of_sine_converges(self):
        def sine(x):
            return np.sin(np.pi * x[:, 0])

        nodal_errors = []
        for n in (8, 16):
            space = FeSpace(build_interval_mesh(n))
            coefficients = l2_project(space, sine)
            nodes = space.mesh.vertices[space.interior_vertices]
            nodal_errors.append(np.abs(coefficients - sine(nodes)).max())
        self.assertLess(nodal_errors[1], nodal_errors[0] / 3.0)

    def test_l2_projection_is_galerkin_orthogonal(self):
        space = FeSpace(build_unit_square_mesh(4))

        def f(x):
            return np.exp(x[:, 0]) * np.cos(2.0 * x[:, 1])

        coefficients = l2_project(space, f)
        load = space.assemble_load(f)
        rng = np.random.default_rng(5)
        for v in rng.standard_normal((5, space.n_dofs)):
            gap = v @ (space.mass @ coefficients) - v @ load
            self.assertLessEqual(abs(gap), 1e-10 * np.abs(v).sum() * np.abs(load).max())

    def test_broken_projection_of_affine(self):
        mesh = build_unit_square_mesh(2)
        values = broken_p1_project(mesh, lambda x: 1.0 + 2.0 * x[:, 0] - x[:, 1])
        expected = 1.0 + 2.0 * mesh.cell_vertices[..., 0] - mesh.cell_vertices[..., 1]
        np.testing.assert_allclose(values, expected, atol=1e-12)

    def test_prolongation(self):
        coarse = FeSpace(build_interval_mesh(2))
        fine = FeSpace(build_interval_mesh(4))
        np.testing.assert_allclose(prolongation(coarse, fine).toarray(), [[0.5], [1.0], [0.5]])


class TestSolveSpd(unittest.TestCase):
    def test_solves(self):
        op = np.array([[4.0, 1.0], [1.0, 3.0]])
        rhs = np.array([1.0, 2.0])
        x = solve_spd(op, rhs)
        self.assertLessEqual(np.linalg.norm(op @ x - rhs) / np.linalg.norm(rhs), 1e-12)

    def test_random_spd_matches_dense_solve(self):
        rng = np.random.default_rng(7)
        factor = rng.standard_normal((5, 5))
        op = factor @ factor.T + 5.0 * np.eye(5)
        rhs = rng.standard_normal(5)
        x = solve_spd(csr_matrix(op), rhs)
        np.testing.assert_allclose(x, np.linalg.solve(op, rhs), rtol=1e-10, atol=1e-12)

    def test_zero_rhs(self):
        np.testing.assert_array_equal(solve_spd(np.eye(3), np.zeros(3)), np.zeros(3))

    def test_bad_diagonal(self):
        with self.assertRaises(ValueError):
            solve_spd(np.array([[0.0, 1.0], [1.0, 1.0]]), np.ones(2))

    def test_iteration_limit(self):
        space = FeSpace(build_interval_mesh(32))
        with self.assertRaises(NumericFailure) as ctx:
            solve_spd(space.stiffness, np.ones(space.n_dofs), max_iters=2)
        self.assertEqual(ctx.exception.iterations, 2)
        self.assertGreater(ctx.exception.residual, 1e-12)


class TestProjectionStability(unittest.TestCase):
    def test_bounded_on_interval(self):
        value = estimate_projection_stability(FeSpace(build_interval_mesh(4)), n_refinements=2)
        self.assertGreaterEqual(value, 1.0)
        self.assertLess(value, 3.0)

    def test_empty_space(self):
        self.assertEqual(estimate_projection_stability(FeSpace(build_interval_mesh(1)), 1), 1.0)

    def test_invalid_refinements(self):
        with self.assertRaises(ValueError):
            estimate_projection_stability(FeSpace(build_interval_mesh(4)), 0)


if __name__ == "__main__":
    unittest.main()
