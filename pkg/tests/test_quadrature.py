import math
import unittest

import numpy as np

from heat_estimator.mesh import build_unit_square_mesh
from heat_estimator.quadrature import gauss_interval, get_quadrature, map_to_cells


class TestGaussInterval(unittest.TestCase):
    def test_weights_sum_to_one(self):
        for n in (1, 2, 5, 10):
            _, w = gauss_interval(n)
            self.assertAlmostEqual(w.sum(), 1.0)

    def test_exactness(self):
        s, w = gauss_interval(3)
        for k in range(6):
            self.assertAlmostEqual(float(w @ s**k), 1.0 / (k + 1))

    def test_invalid(self):
        with self.assertRaises(ValueError):
            gauss_interval(0)


class TestSimplexRules(unittest.TestCase):
    def test_interval_monomials(self):
        rule = get_quadrature(1, 7)
        x = rule.points[:, 1]
        for k in range(8):
            self.assertAlmostEqual(float(rule.weights @ x**k), 1.0 / (k + 1))

    def test_triangle_monomials(self):
        # int_T x^a y^b = a! b! / (a + b + 2)!
        rule = get_quadrature(2, 6)
        x, y = rule.points[:, 1], rule.points[:, 2]
        for a in range(7):
            for b in range(7 - a):
                exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
                self.assertAlmostEqual(float(rule.weights @ (x**a * y**b)), exact, places=14)

    def test_rules_are_cached_and_read_only(self):
        rule = get_quadrature(2, 4)
        self.assertIs(rule, get_quadrature(2, 4))
        with self.assertRaises(ValueError):
            rule.weights[0] = 1.0

    def test_invalid(self):
        with self.assertRaises(ValueError):
            get_quadrature(3, 2)
        with self.assertRaises(ValueError):
            get_quadrature(1, -1)


class TestMapToCells(unittest.TestCase):
    def test_integrates_over_mesh(self):
        mesh = build_unit_square_mesh(3)
        rule = get_quadrature(2, 4)
        points, weights = map_to_cells(mesh.cell_vertices, mesh.cell_measures, rule)
        self.assertAlmostEqual(weights.sum(), 1.0)
        # int_(0,1)^2 x^2 y = 1/6
        value = float((weights * points[..., 0] ** 2 * points[..., 1]).sum())
        self.assertAlmostEqual(value, 1.0 / 6.0, places=14)


if __name__ == "__main__":
    unittest.main()
