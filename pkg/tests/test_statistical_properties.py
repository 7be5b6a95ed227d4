# tests/test_statistical_properties.py
"""Propriétés statistiques vérifiées par simulation (couverture, emboîtement)."""
import unittest

from utils.engine import Method, fit_main_set, fit_sensitivity
from utils.oracle import SimLayout, coverage_experiment, default_truth, simulate

TOLERANCE = 1e-6


class TestCoverage(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.table = coverage_experiment(default_truth(), SimLayout(seed=20240), reps=500,
                                        method=Method.REML).set_index("contrast")

    def test_group_offset_interval(self):
        self.assertGreaterEqual(self.table.loc["grp2", "coverage"], 0.92)
        self.assertLessEqual(self.table.loc["grp2", "coverage"], 0.98)

    def test_gain_difference_interval(self):
        coverage = self.table.loc["gain3 - gain1", "coverage"]
        self.assertGreaterEqual(coverage, 0.92)
        self.assertLessEqual(coverage, 0.98)
        self.assertAlmostEqual(self.table.loc["gain3 - gain1", "true_value"], 11 * 1.738, places=10)

    def test_failures_are_rare(self):
        self.assertLessEqual(self.table["n_failed"].max(), 5)


class TestNestingMonotonicity(unittest.TestCase):

    def test_loglik_order_over_random_datasets(self):
        for seed in range(1, 21):
            data = simulate(default_truth(), SimLayout(group_sizes={1: 5, 2: 5, 3: 5}, weeks=8, seed=seed))
            with self.subTest(seed=seed):
                m1, m2, m3 = fit_main_set(data)
                self.assertLessEqual(m1.loglik, m3.loglik + TOLERANCE)
                self.assertLessEqual(m3.loglik, m2.loglik + TOLERANCE)
                ri, *extended = fit_sensitivity(m3.spec.fixed, data)
                for model in extended:
                    self.assertLessEqual(ri.loglik, model.loglik + TOLERANCE, model.spec.structure)


if __name__ == '__main__':
    unittest.main()
