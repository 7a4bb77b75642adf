"""
Unit Tests for point-file parsing and writing
"""

import os
import sys
import tempfile
import unittest

import numpy as np

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import pointcloud_io as pio
from errors import PointCloudFormatError
from schemas import PointFormat


class TestParse(unittest.TestCase):

    def test_two_point_xyz(self):
        """Two lines of three reals make a 2-point cloud"""
        cloud = pio.parse_pointcloud("0 0 0\n1 0 0")
        np.testing.assert_array_equal(cloud, [[0.0, 0, 0], [1.0, 0, 0]])

    def test_blank_lines_and_tabs(self):
        cloud = pio.parse_pointcloud("\n1\t2 3\n\n  4 5   6  \n")
        np.testing.assert_array_equal(cloud, [[1.0, 2, 3], [4.0, 5, 6]])

    def test_empty_file(self):
        for text in ("", "\n\n   \n"):
            with self.assertRaises(PointCloudFormatError):
                pio.parse_pointcloud(text)

    def test_wrong_column_count_reports_line(self):
        with self.assertRaises(PointCloudFormatError) as ctx:
            pio.parse_pointcloud("0 0 0\n\n1 2\n")
        self.assertEqual(ctx.exception.line, 3)
        self.assertIn("line 3", str(ctx.exception))

    def test_unparsable_and_non_finite(self):
        with self.assertRaises(PointCloudFormatError) as ctx:
            pio.parse_pointcloud("0 0 zero")
        self.assertEqual(ctx.exception.line, 1)
        for bad in ("nan 0 0", "0 inf 0"):
            with self.assertRaises(PointCloudFormatError):
                pio.parse_pointcloud(bad)

    def test_csv_with_header(self):
        cloud = pio.parse_pointcloud("x,y,z\n1,2,3\n4.5, 5, -6\n", PointFormat.csv)
        np.testing.assert_array_equal(cloud, [[1.0, 2, 3], [4.5, 5, -6]])

    def test_csv_needs_header(self):
        with self.assertRaises(PointCloudFormatError) as ctx:
            pio.parse_pointcloud("1,2,3\n", "csv")
        self.assertEqual(ctx.exception.line, 1)

    def test_error_document(self):
        with self.assertRaises(PointCloudFormatError) as ctx:
            pio.parse_pointcloud("1 2")
        self.assertEqual(ctx.exception.to_dict()["error"], "format_error")
        self.assertEqual(ctx.exception.to_dict()["line"], 1)


class TestFiles(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.cloud = np.random.default_rng(0).normal(size=(25, 3)) * 1e3

    def tearDown(self):
        self.tmp.cleanup()

    def test_infer_format(self):
        self.assertEqual(pio.infer_format("a/b.CSV"), PointFormat.csv)
        self.assertEqual(pio.infer_format("cloud.pts"), PointFormat.xyz)
        self.assertEqual(pio.infer_format("cloud.dat", PointFormat.csv), PointFormat.csv)

    def test_round_trip_is_exact(self):
        """save then load returns identical 64-bit coordinates in both formats"""
        for name in ("cloud.xyz", "cloud.csv"):
            path = os.path.join(self.tmp.name, name)
            pio.save_pointcloud(self.cloud, path)
            self.assertEqual(pio.load_pointcloud(path).tobytes(), self.cloud.tobytes())

    def test_saved_sample_has_one_line_per_point(self):
        path = os.path.join(self.tmp.name, "nested", "sample.xyz")
        pio.save_pointcloud(self.cloud[:7], path)
        with open(path, encoding="utf-8") as fh:
            self.assertEqual(len(fh.read().splitlines()), 7)

    def test_load_error_names_file_and_line(self):
        path = os.path.join(self.tmp.name, "bad.xyz")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("0 0 0\n1 2 3 4\n")
        with self.assertRaises(PointCloudFormatError) as ctx:
            pio.load_pointcloud(path)
        self.assertEqual(ctx.exception.line, 2)
        self.assertIn("bad.xyz", str(ctx.exception))

    def test_undecodable_byte_is_a_format_error(self):
        """A non-UTF-8 byte on line 2 is reported on line 2"""
        path = os.path.join(self.tmp.name, "binary.xyz")
        with open(path, "wb") as fh:
            fh.write(b"0 0 0\n1 \xff 3\n")
        with self.assertRaises(PointCloudFormatError) as ctx:
            pio.load_pointcloud(path)
        self.assertEqual(ctx.exception.line, 2)
        self.assertEqual(ctx.exception.to_dict()["error"], "format_error")

    def test_refuses_non_finite(self):
        with self.assertRaises(PointCloudFormatError):
            pio.format_pointcloud([[0.0, float("nan"), 0.0]])


if __name__ == "__main__":
    unittest.main()
