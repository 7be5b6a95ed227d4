# tests/test_cli.py
import io
import json
import os
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout

import pandas as pd

import lmm
from utils.errors import EXIT_DATA, EXIT_OK, EXIT_USAGE
from tests.helpers import WIDE_TEXT


class TestCommandLine(unittest.TestCase):

    def setUp(self):
        self._folder = tempfile.TemporaryDirectory()
        self.addCleanup(self._folder.cleanup)
        self.folder = self._folder.name
        self.data = os.path.join(self.folder, "simulated_long.csv")
        status = lmm.run(["simulate", "--layout", "4,4,4", "--weeks", "6", "--seed", "8",
                          "--output", self.data, "--output-dir", self.folder])
        self.assertEqual(status, EXIT_OK)

    def _run(self, *argv):
        stdout = io.StringIO()
        with redirect_stdout(stdout), redirect_stderr(io.StringIO()):
            status = lmm.run(list(argv) + ["--output-dir", self.folder])
        return status, stdout.getvalue()

    def _path(self, name):
        return os.path.join(self.folder, name)

    def test_simulate_writes_long_file(self):
        frame = pd.read_csv(self.data)
        self.assertEqual(list(frame.columns), ["mouseid", "grp", "tw", "weight"])
        self.assertEqual(len(frame), 72)

    def test_reshape_and_eda(self):
        wide = self._path("wide.csv")
        with open(wide, "w", encoding="utf-8") as handle:
            handle.write(WIDE_TEXT)
        self.assertEqual(self._run("reshape", wide)[0], EXIT_OK)
        self.assertEqual(len(pd.read_csv(self._path("data_long.csv"))), 12)
        self.assertEqual(self._run("eda", wide)[0], EXIT_OK)
        self.assertEqual(list(pd.read_csv(self._path("eda_means.csv")).columns),
                         ["grp", "tw", "mean_weight", "n"])

    def test_fit_prints_document(self):
        status, output = self._run("fit", self.data, "--no-record")
        self.assertEqual(status, EXIT_OK)
        document = json.loads(output)
        self.assertEqual(document["k"], 7)
        self.assertEqual(document["N"], 72)
        self.assertTrue(os.path.exists(self._path("fit_m3_ri_ml.json")))

    def test_fit_is_recorded(self):
        url = f"sqlite:///{self._path('fits.db')}"
        self.assertEqual(self._run("fit", self.data, "--database-url", url)[0], EXIT_OK)
        status, output = self._run("history", "--database-url", url)
        self.assertEqual(status, EXIT_OK)
        self.assertNotIn(lmm.NO_HISTORY, output)
        self.assertIn("m3", output)

    def test_compare_main_set(self):
        self.assertEqual(self._run("compare", self.data)[0], EXIT_OK)
        table = pd.read_csv(self._path("compare_main.csv"))
        self.assertEqual(list(table["k"]), [6, 8, 7])
        self.assertEqual(len(pd.read_csv(self._path("lrt_main.csv"))), 2)

    def test_contrasts_and_gains(self):
        self.assertEqual(self._run("contrasts", self.data, "--last-week", "6")[0], EXIT_OK)
        self.assertEqual(len(pd.read_csv(self._path("weekly_differences.csv"))), 18)
        self.assertEqual(self._run("gains", self.data, "--last-week", "6")[0], EXIT_OK)
        self.assertEqual(len(pd.read_csv(self._path("gains.csv"))), 5)

    def test_diagnose(self):
        self.assertEqual(self._run("diagnose", self.data)[0], EXIT_OK)
        for name in ("diagnostics.csv", "ranef.csv", "qq_resid.csv", "qq_ranef.csv", "resid_by_week.csv"):
            self.assertTrue(os.path.exists(self._path(name)), name)

    def test_report_pipeline(self):
        self.assertEqual(self._run("report", self.data)[0], EXIT_OK)
        with open(self._path("report.md"), encoding="utf-8") as handle:
            text = handle.read()
        self.assertIn("## Comparaison des modèles (ML)", text)
        for name in ("trajectories.csv", "gains_sensitivity.csv", "coefficients_m3.csv", "ranef.csv"):
            self.assertTrue(os.path.exists(self._path(name)), name)

    def test_oracle_check(self):
        self.assertEqual(self._run("oracle-check", "--draws", "2")[0], EXIT_OK)
        self.assertTrue(pd.read_csv(self._path("oracle_check.csv"))["passed"].all())

    def test_usage_errors(self):
        self.assertEqual(self._run("fit")[0], EXIT_USAGE)
        self.assertEqual(self._run("fit", self.data, "--structure", "xyz")[0], EXIT_USAGE)
        self.assertEqual(self._run("fit", self.data, "--no-record", "--model", "weight ~")[0], EXIT_USAGE)
        self.assertEqual(self._run("contrasts", self.data, "--first-week", "5", "--last-week", "2")[0],
                         EXIT_USAGE)

    def test_data_errors(self):
        self.assertEqual(self._run("fit", self._path("absent.csv"), "--no-record")[0], EXIT_DATA)
        broken = self._path("broken.csv")
        with open(broken, "w", encoding="utf-8") as handle:
            handle.write("mouseid,grp,bw1,bw2\nA,1,20,abc\n")
        self.assertEqual(self._run("eda", broken)[0], EXIT_DATA)

    def test_malformed_files_are_data_errors(self):
        cases = {
            "negative.csv": b"mouseid,grp,bw1,bw2\nA,1,20,-5\nB,2,0,21\n",
            "ragged.csv": b"mouseid,grp,bw1,bw2\nA,1,20,21\nB,2,20,21,22\n",
            "latin1.csv": b"mouseid,grp,bw1,bw2\nA\xff,1,20,21\n",
        }
        for name, content in cases.items():
            with self.subTest(name=name):
                path = self._path(name)
                with open(path, "wb") as handle:
                    handle.write(content)
                self.assertEqual(self._run("eda", path)[0], EXIT_DATA)
                self.assertEqual(self._run("reshape", path)[0], EXIT_DATA)


if __name__ == '__main__':
    unittest.main()
