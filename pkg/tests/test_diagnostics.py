# tests/test_diagnostics.py
import unittest

import numpy as np
from scipy import linalg

from utils.covstruct import RandomIntercept
from utils.diagnostics import (
    blups, diagnostics_bundle, qq_points, residual_table, residuals_by_week
)
from utils.engine import fit, model_at, spec_for
from utils.errors import TooFew
from utils.formula import build_design
from utils.oracle import SimLayout, default_truth, simulate
from tests.helpers import balanced_intercept_dataset, long_dataset, study_dataset, tiny_dataset


class TestBlups(unittest.TestCase):

    def test_shrinkage_closed_form(self):
        """Plan équilibré : b̂_i = σb²/(σb² + σ²/n) × moyenne des résidus marginaux."""
        data = balanced_intercept_dataset()
        sd_b, sd_e, n = 2.0, 1.0, 6
        model = model_at(spec_for("weight ~ tw"), data, RandomIntercept(sd_b, sd_e))
        effects = blups(model).frame.set_index("mouseid")["b0"]
        shrinkage = sd_b ** 2 / (sd_b ** 2 + sd_e ** 2 / n)
        frame = data.frame
        fitted = model.beta[0] + model.beta[1] * frame["tw"]
        mean_resid = (frame["weight"] - fitted).groupby(frame["mouseid"]).mean()
        for mouse, value in mean_resid.items():
            self.assertAlmostEqual(effects[mouse], shrinkage * value, delta=1e-10)

    def test_no_between_variance_gives_zero_effects(self):
        model = model_at(spec_for("m3"), tiny_dataset(), RandomIntercept(0.0, 1.2))
        np.testing.assert_array_equal(blups(model).frame["b0"].to_numpy(), 0.0)

    def test_one_row_per_mouse(self):
        model = model_at(spec_for("m3"), tiny_dataset(), RandomIntercept(1.0, 1.0))
        frame = blups(model).frame
        self.assertEqual(list(frame.columns), ["mouseid", "grp", "b0"])
        self.assertEqual(len(frame), 5)


class TestResiduals(unittest.TestCase):

    def setUp(self):
        self.data = tiny_dataset()
        self.model = model_at(spec_for("m3"), self.data, RandomIntercept(1.5, 1.2))
        self.frame = residual_table(self.model).frame

    def test_identities(self):
        frame = self.frame
        self.assertEqual(len(frame), self.data.n_obs)
        np.testing.assert_allclose(frame["observed"], frame["fitted_marginal"] + frame["resid_marginal"])
        np.testing.assert_allclose(frame["observed"], frame["fitted_conditional"] + frame["resid_conditional"])
        np.testing.assert_allclose(frame["resid_pearson"], frame["resid_conditional"] / 1.2)

    def test_noiseless_data(self):
        truth = default_truth(RandomIntercept(0.0, 0.0))
        data = simulate(truth, SimLayout(group_sizes={1: 2, 2: 2, 3: 2}, weeks=4))
        model = model_at(spec_for("m3"), data, RandomIntercept(1.0, 1.0))
        frame = residual_table(model).frame
        np.testing.assert_allclose(model.beta, truth.beta, atol=1e-9)
        np.testing.assert_allclose(frame["resid_marginal"], 0.0, atol=1e-9)
        np.testing.assert_allclose(frame["resid_conditional"], 0.0, atol=1e-9)

    def test_first_order_condition(self):
        """Σ X_i' V_i⁻¹ (y_i − X_i β̂) = 0 au β̂ des moindres carrés généralisés."""
        ds = build_design(self.model.spec.fixed, self.data)
        score = np.zeros(len(self.model.beta))
        for cluster in ds.clusters:
            V = self.model.theta.marginal_cov(cluster.t, cluster.group)
            score += cluster.X.T @ linalg.solve(V, cluster.y - cluster.X @ self.model.beta, assume_a="pos")
        np.testing.assert_allclose(score, 0.0, atol=1e-8)

    def test_single_observation_cell_has_missing_sd(self):
        summary = residuals_by_week(residual_table(self.model))
        group_three = summary[summary["grp"] == 3]
        self.assertTrue(group_three["sd_resid_pearson"].isna().all())
        self.assertTrue((group_three["n"] == 1).all())
        self.assertEqual(len(summary), 12)

    def test_bundle_files(self):
        bundle = diagnostics_bundle(self.model)
        self.assertEqual(sorted(bundle), ["diagnostics.csv", "qq_ranef.csv", "qq_resid.csv",
                                          "ranef.csv", "resid_by_week.csv"])
        self.assertEqual(len(bundle["qq_resid.csv"]), self.data.n_obs)
        self.assertEqual(len(bundle["qq_ranef.csv"]), 5)


class TestResidualPatterns(unittest.TestCase):

    def test_missing_curvature_shows_by_week(self):
        rng = np.random.default_rng(3)
        rows = []
        for i in range(20):
            b = rng.normal(0.0, 1.0)
            for t in range(1, 13):
                mean = 20.0 + 0.5 * t + 0.3 * (t - 6.5) ** 2 + b
                rows.append((f"M{i:02d}", 1, t, mean + rng.normal(0.0, 1.0)))
        model = fit(spec_for("weight ~ tw"), long_dataset(rows))
        summary = residuals_by_week(residual_table(model)).set_index("tw")["mean_resid_pearson"]
        self.assertGreater(summary[1], 0.0)
        self.assertGreater(summary[12], 0.0)
        self.assertLess(summary[6], 0.0)
        self.assertLess(summary[7], 0.0)

    def test_well_specified_model_stays_in_band(self):
        data = study_dataset(seed=7)
        model = fit(spec_for("m3"), data)
        summary = residuals_by_week(residual_table(model))
        inside = np.abs(summary["mean_resid_pearson"]) <= 3.0 / np.sqrt(summary["n"])
        self.assertGreaterEqual(inside.mean(), 0.95)


class TestQqPoints(unittest.TestCase):

    def test_two_points(self):
        points = qq_points([3.0, -1.0])
        np.testing.assert_allclose(points["theoretical"], [-0.6745, 0.6745], atol=1e-4)
        self.assertEqual(list(points["empirical"]), [-1.0, 3.0])

    def test_monotone(self):
        points = qq_points(np.random.default_rng(1).normal(size=50))
        self.assertTrue(np.all(np.diff(points["theoretical"]) > 0))
        self.assertTrue(np.all(np.diff(points["empirical"]) >= 0))

    def test_too_few(self):
        with self.assertRaises(TooFew):
            qq_points([1.0])

    def test_normal_sample_follows_the_line(self):
        points = qq_points(np.random.default_rng(42).standard_normal(10000))
        central = points.iloc[100:-100]
        gap = np.abs(central["empirical"] - central["theoretical"])
        self.assertLess(gap.max(), 0.15)


if __name__ == '__main__':
    unittest.main()
