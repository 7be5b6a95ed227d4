# tests/test_data_loader.py
import os
import tempfile
import unittest

import numpy as np

from utils.data_loader import (
    group_week_means, parse_long, parse_wide, pivot_longer, read_dataset, validate_long, write_long
)
from utils.errors import (
    BadNumber, DataError, DuplicateId, InsufficientData, MalformedFile, MissingColumn, MissingValue,
    NonContiguousWeeks
)
from tests.helpers import WIDE_TEXT, long_dataset


class TestParseWide(unittest.TestCase):

    def test_reads_mice_and_weeks(self):
        wide = parse_wide(WIDE_TEXT)
        self.assertEqual(wide.n_mice, 4)
        self.assertEqual(wide.weeks, (1, 2, 3))
        self.assertEqual(wide.groups, (1, 1, 2, 3))
        self.assertAlmostEqual(wide.weights[2, 1], 35.6)

    def test_missing_group_column(self):
        with self.assertRaises(MissingColumn):
            parse_wide("mouseid,bw1,bw2\nA,1,2\n")

    def test_non_contiguous_weeks(self):
        with self.assertRaises(NonContiguousWeeks):
            parse_wide("mouseid,grp,bw1,bw3\nA,1,20,21\n")

    def test_bad_number_reports_row(self):
        with self.assertRaises(BadNumber) as ctx:
            parse_wide("mouseid,grp,bw1,bw2\nA,1,20,abc\n")
        self.assertIn("ligne 2", str(ctx.exception))

    def test_missing_weight(self):
        with self.assertRaises(MissingValue):
            parse_wide("mouseid,grp,bw1,bw2\nA,1,20,\n")

    def test_duplicate_id(self):
        with self.assertRaises(DuplicateId):
            parse_wide("mouseid,grp,bw1,bw2\nA,1,20,21\nA,2,30,31\n")

    def test_header_only(self):
        with self.assertRaises(InsufficientData):
            parse_wide("mouseid,grp,bw1,bw2\n")

    def test_extra_columns_are_ignored_with_warning(self):
        with self.assertLogs(level="WARNING"):
            wide = parse_wide("mouseid,grp,sex,bw1,bw2\nA,1,F,20,21\n")
        self.assertEqual(wide.weeks, (1, 2))


class TestPivotLonger(unittest.TestCase):

    def test_one_record_per_mouse_week(self):
        wide = parse_wide(WIDE_TEXT)
        data = pivot_longer(wide)
        self.assertEqual(data.n_obs, wide.n_mice * wide.n_weeks)
        self.assertEqual(list(data.frame.columns), ["mouseid", "grp", "tw", "weight"])

    def test_sorted_by_mouse_then_week(self):
        frame = pivot_longer(parse_wide(WIDE_TEXT)).frame
        keys = list(zip(frame["mouseid"], frame["tw"]))
        self.assertEqual(keys, sorted(keys))

    def test_trajectories_reproduce_wide_rows(self):
        wide = parse_wide(WIDE_TEXT)
        trajectories = pivot_longer(wide).trajectories()
        self.assertEqual(sorted(trajectories), sorted(wide.mouse_ids))
        for mouse, row in zip(wide.mouse_ids, wide.weights):
            np.testing.assert_array_equal(trajectories[mouse], row)

    def test_single_mouse_twelve_weeks(self):
        weights = [20.0 + 0.5 * k for k in range(12)]
        header = "mouseid,grp," + ",".join(f"bw{k}" for k in range(1, 13))
        text = header + "\nX1,2," + ",".join(str(w) for w in weights) + "\n"
        data = pivot_longer(parse_wide(text))
        self.assertEqual(data.n_obs, 12)
        self.assertEqual(list(data.frame["tw"]), list(range(1, 13)))
        self.assertTrue((data.frame["grp"] == 2).all())
        np.testing.assert_array_equal(data.trajectories()["X1"], weights)

    def test_values_follow_wide_cells(self):
        frame = pivot_longer(parse_wide(WIDE_TEXT)).frame
        row = frame[(frame["mouseid"] == "C1") & (frame["tw"] == 3)].iloc[0]
        self.assertEqual(row["grp"], 3)
        self.assertAlmostEqual(row["weight"], 41.9)


class TestValidateLong(unittest.TestCase):

    def test_valid_dataset(self):
        report = validate_long(pivot_longer(parse_wide(WIDE_TEXT)))
        self.assertTrue(report.ok)

    def test_findings(self):
        data = long_dataset([
            ("A", 1, 1, 20.0), ("A", 1, 1, 20.5), ("A", 2, 2, 21.0),
            ("B", 1, 1, -3.0), ("B", 1, 2, np.nan),
        ])
        report = validate_long(data)
        self.assertEqual(report.count("DuplicateObservation"), 1)
        self.assertEqual(report.count("GroupSwitch"), 1)
        self.assertEqual(report.count("NonPositiveWeight"), 1)
        self.assertEqual(report.count("NonFiniteWeight"), 1)


class TestGroupWeekMeans(unittest.TestCase):

    def test_means_and_counts(self):
        means = group_week_means(pivot_longer(parse_wide(WIDE_TEXT))).frame
        cell = means[(means["grp"] == 1) & (means["tw"] == 1)].iloc[0]
        self.assertAlmostEqual(cell["mean_weight"], (20.1 + 19.8) / 2)
        self.assertEqual(cell["n"], 2)
        self.assertEqual(len(means), 9)


class TestFiles(unittest.TestCase):

    def test_wide_and_long_files_give_same_dataset(self):
        with tempfile.TemporaryDirectory() as folder:
            wide_path = os.path.join(folder, "wide.csv")
            long_path = os.path.join(folder, "long.csv")
            with open(wide_path, "w", encoding="utf-8") as handle:
                handle.write(WIDE_TEXT)
            from_wide = read_dataset(wide_path)
            write_long(from_wide, long_path)
            with open(long_path, encoding="utf-8") as handle:
                self.assertEqual(handle.readline().strip(), "mouseid,grp,tw,weight")
            from_long = read_dataset(long_path)
        self.assertTrue(from_wide.frame.equals(from_long.frame))

    def test_invalid_long_file_is_rejected(self):
        with tempfile.TemporaryDirectory() as folder:
            path = os.path.join(folder, "long.csv")
            with open(path, "w", encoding="utf-8") as handle:
                handle.write("mouseid,grp,tw,weight\nA,1,1,20\nA,1,1,21\n")
            with self.assertRaises(DataError):
                read_dataset(path)

    def _write(self, folder, content, mode="w"):
        path = os.path.join(folder, "data.csv")
        if mode == "wb":
            with open(path, "wb") as handle:
                handle.write(content)
        else:
            with open(path, "w", encoding="utf-8") as handle:
                handle.write(content)
        return path

    def test_non_positive_weight_in_wide_file(self):
        with tempfile.TemporaryDirectory() as folder:
            path = self._write(folder, "mouseid,grp,bw1,bw2\nA,1,20,-5\nB,2,0,21\n")
            with self.assertRaises(DataError) as ctx:
                read_dataset(path)
        self.assertIn("2 anomalie(s)", str(ctx.exception))

    def test_ragged_row(self):
        with tempfile.TemporaryDirectory() as folder:
            path = self._write(folder, "mouseid,grp,bw1,bw2\nA,1,20,21\nB,2,20,21,22\n")
            with self.assertRaises(MalformedFile):
                read_dataset(path)

    def test_invalid_encoding(self):
        with tempfile.TemporaryDirectory() as folder:
            path = self._write(folder, b"mouseid,grp,bw1,bw2\nA\xff,1,20,21\n", mode="wb")
            with self.assertRaises(MalformedFile):
                read_dataset(path)

    def test_parse_long_missing_column(self):
        with self.assertRaises(MissingColumn):
            parse_long("mouseid,grp,weight\nA,1,20\n")


if __name__ == '__main__':
    unittest.main()
