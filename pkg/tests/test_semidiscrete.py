import math
import unittest

import numpy as np

from heat_estimator.semidiscrete import (
    DEFAULT_LAMBDAS,
    ModeProblem,
    UnsupportedForcing,
    counterexample_sweep,
    exact_mode_solution,
    mode_energy_report,
    piecewise_exact_mode_solution,
    random_mode_problem,
    solve_mode,
)
from heat_estimator.timestepper import TimeGrid

ONE_STEP = TimeGrid.uniform(1.0, 1)


class TestModeSolver(unittest.TestCase):
    def test_single_step(self):
        values = solve_mode(ModeProblem.constant(1.0, ONE_STEP, 1.0))
        np.testing.assert_allclose(values, [0.0, 0.5])

    def test_two_steps(self):
        values = solve_mode(ModeProblem.constant(2.0, TimeGrid.uniform(1.0, 2), 1.0))
        np.testing.assert_allclose(values, [0.0, 0.25, 0.375])

    def test_steady_state(self):
        problem = ModeProblem.constant(4.0, TimeGrid.uniform(3.0, 5), 2.0, u0=0.5)
        np.testing.assert_allclose(solve_mode(problem), 0.5, rtol=1e-14)

    def test_validation(self):
        with self.assertRaises(ValueError):
            ModeProblem.constant(0.0, ONE_STEP, 1.0)
        with self.assertRaises(ValueError):
            ModeProblem(1.0, ONE_STEP, [1.0, 2.0], 0.0)
        problem = ModeProblem.constant(1.0, ONE_STEP, 1.0)
        with self.assertRaises(ValueError):
            problem.forcing[0] = 3.0


class TestExactModeSolution(unittest.TestCase):
    def test_constant_forcing(self):
        solution = exact_mode_solution(ModeProblem.constant(1.0, ONE_STEP, 1.0))
        self.assertAlmostEqual(float(solution(1.0)), 1.0 - math.exp(-1.0), places=14)
        self.assertEqual(float(solution(0.0)), 0.0)

    def test_piecewise_agrees_for_constant_forcing(self):
        problem = ModeProblem.constant(3.0, TimeGrid.uniform(2.0, 4), 1.5, u0=-1.0)
        closed = exact_mode_solution(problem)
        piecewise = piecewise_exact_mode_solution(problem)
        times = np.linspace(0.0, 2.0, 17)
        np.testing.assert_allclose(piecewise(times), closed(times), rtol=1e-13, atol=1e-15)

    def test_changing_forcing(self):
        problem = ModeProblem(1.0, TimeGrid.uniform(1.0, 2), [1.0, 2.0], 0.0)
        self.assertFalse(problem.has_constant_forcing)
        with self.assertRaises(UnsupportedForcing):
            exact_mode_solution(problem)
        with self.assertRaises(ValueError):
            exact_mode_solution(problem)
        piecewise = piecewise_exact_mode_solution(problem)
        first = 1.0 - math.exp(-0.5)
        self.assertAlmostEqual(float(piecewise(0.5)), first, places=14)
        expected = first * math.exp(-0.5) + 2.0 * (1.0 - math.exp(-0.5))
        self.assertAlmostEqual(piecewise.node_values[-1], expected, places=14)


class TestModeEnergies(unittest.TestCase):
    def test_unit_mode(self):
        report = mode_energy_report(ModeProblem.constant(1.0, ONE_STEP, 1.0))
        self.assertAlmostEqual(report.jump_E**2, 1.0 / 12.0, places=15)
        self.assertAlmostEqual(report.jump_quadrature**2, 1.0 / 12.0, places=13)
        self.assertAlmostEqual(report.err_mid_E, 0.5 * math.sqrt(1.0 / 12.0), places=12)
        self.assertAlmostEqual(
            report.err_const_E**2 + report.err_affine_E**2, 1.0 / 12.0, places=12
        )
        self.assertGreater(report.err_const_E, report.err_affine_E)

    def test_identities_on_random_modes(self):
        rng = np.random.default_rng(0)
        for instance in range(200):
            problem = random_mode_problem(rng)
            report = mode_energy_report(problem)
            with self.subTest(instance=instance, lam=problem.lam):
                self.assertLessEqual(report.pythagoras_gap, 1e-11)
                self.assertLessEqual(report.radius_gap, 1e-11)
                self.assertAlmostEqual(report.jump_quadrature / report.jump_E, 1.0, places=10)

    def test_random_problem_shape(self):
        problem = random_mode_problem(np.random.default_rng(3), max_steps=4)
        self.assertLessEqual(problem.grid.n_intervals, 4)
        self.assertTrue(np.all(problem.grid.steps >= 0.2))
        self.assertTrue(1e-3 <= problem.lam <= 1e3)


class TestCounterexample(unittest.TestCase):
    def test_ratios_blow_up_at_both_ends(self):
        sweep = counterexample_sweep()
        self.assertTrue(sweep.passed)
        self.assertEqual([row.lam for row in sweep.rows], sorted(DEFAULT_LAMBDAS))
        smallest, largest = sweep.rows[0], sweep.rows[-1]
        unit = next(row for row in sweep.rows if row.lam == 1.0)
        self.assertGreaterEqual(smallest.ratio_affine, 10.0 * unit.ratio_affine)
        self.assertGreaterEqual(largest.ratio_const, 10.0 * unit.ratio_const)
        self.assertAlmostEqual(smallest.ratio_affine, 51.6, delta=0.5)
        self.assertAlmostEqual(largest.ratio_const, 25.8, delta=0.5)

    def test_unsorted_input(self):
        sweep = counterexample_sweep([10.0, 0.1, 1.0])
        self.assertEqual([row.lam for row in sweep.rows], [0.1, 1.0, 10.0])
        self.assertTrue(sweep.passed)


if __name__ == "__main__":
    unittest.main()
