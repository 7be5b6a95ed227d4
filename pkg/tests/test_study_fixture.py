# tests/test_study_fixture.py
"""
Valeurs de référence sur le jeu de données réel (31 souris).
Ignoré si le fichier n'est pas présent (variable LMM_FIXTURE).
"""
import os
import unittest

import numpy as np

from utils.config import FIXTURE_FILE
from utils.data_loader import read_dataset
from utils.engine import fit_main_set
from utils.inference import gains, weekly_differences

MAIN_ROWS = [  # (logLik, AIC, BIC) des modèles 1, 2, 3
    (-984.321, 1980.642, 2004.156),
    (-691.730, 1399.460, 1430.811),
    (-691.838, 1397.676, 1425.108),
]
M3_BETA = [19.004, 0.337, 14.925, 17.254, 1.738]
M3_SE = [0.561, 0.025, 0.777, 0.829, 0.044]


@unittest.skipUnless(os.path.exists(FIXTURE_FILE), f"Jeu de données réel absent ({FIXTURE_FILE})")
class TestStudyFixture(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.data = read_dataset(FIXTURE_FILE)
        cls.m1, cls.m2, cls.m3 = fit_main_set(cls.data)

    def test_model_comparison(self):
        for model, (loglik, aic, bic) in zip((self.m1, self.m2, self.m3), MAIN_ROWS):
            with self.subTest(model=model.label):
                self.assertAlmostEqual(model.loglik, loglik, delta=0.01)
                self.assertAlmostEqual(model.aic, aic, delta=0.02)
                self.assertAlmostEqual(model.bic, bic, delta=0.02)

    def test_model_three_estimates(self):
        np.testing.assert_allclose(self.m3.beta, M3_BETA, atol=0.005)
        np.testing.assert_allclose(self.m3.se, M3_SE, atol=0.005)
        self.assertAlmostEqual(self.m3.theta.sd_intercept, 1.72, delta=0.01)
        self.assertAlmostEqual(self.m3.theta.sd_resid, 1.37, delta=0.01)

    def test_weekly_differences(self):
        results = weekly_differences(self.m3)
        spot_checks = {0: (14.925, 0.777), 12: (18.992, 0.815), 23: (38.110, 0.815), 24: (4.067, 0.832)}
        for index, (estimate, se) in spot_checks.items():
            with self.subTest(row=index):
                self.assertAlmostEqual(results[index].estimate, estimate, delta=0.005)
                self.assertAlmostEqual(results[index].se, se, delta=0.005)
        self.assertAlmostEqual(results[0].ci_lo, 13.333, delta=0.005)
        self.assertAlmostEqual(results[24].p, 3.77e-5, delta=0.01e-5)

    def test_gains(self):
        results = gains(self.m3)
        for result, (estimate, se) in zip(results, [(3.702, 0.277), (3.702, 0.277), (22.820, 0.402)]):
            self.assertAlmostEqual(result.estimate, estimate, delta=0.005)
            self.assertAlmostEqual(result.se, se, delta=0.005)
        self.assertAlmostEqual(results[3].estimate, 19.12, delta=0.01)
        self.assertAlmostEqual(results[0].ci_lo, 3.158, delta=0.005)


if __name__ == '__main__':
    unittest.main()
