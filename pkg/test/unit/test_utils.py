################################################################################
# Copyright Soundscape Classifier contributors 2021, 2022
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
################################################################################

import sys
sys.path.append("./")

import os
import logging
import datetime
import tempfile
import unittest

import numpy as np

from soundscape.errors import ConfigError, DataError, DecodeError, NumericError, SoundscapeError
from soundscape.utils import Utils


class TestUtils(unittest.TestCase):

    def test_rng_streams_are_reproducible(self):
        a = Utils.rng(3, 0, 1, 7).random(5)
        b = Utils.rng(3, 0, 1, 7).random(5)
        c = Utils.rng(3, 0, 1, 8).random(5)
        np.testing.assert_array_equal(a, b)
        self.assertFalse(np.array_equal(a, c))

    def test_sample_count_rounds_up(self):
        self.assertEqual(Utils.sample_count(0.8, 17), 14)
        self.assertEqual(Utils.sample_count(0.8, 10), 8)
        self.assertEqual(Utils.sample_count(0.65, 8), 6)
        self.assertEqual(Utils.sample_count(1.0, 3), 3)

    def test_parse_date(self):
        self.assertEqual(Utils.parse_date("2020-06-01"), datetime.date(2020, 6, 1))
        self.assertIsNone(Utils.parse_date("2004-00-00"))
        self.assertIsNone(Utils.parse_date(""))
        self.assertIsNone(Utils.parse_date(None))

    def test_day_of_year(self):
        self.assertEqual(Utils.day_of_year(datetime.date(2021, 2, 1)), 32)
        self.assertIsNone(Utils.day_of_year(None))

    def test_atomic_write_leaves_no_temporary_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "sub", "out.csv")
            Utils.atomic_write_text(path, "a,b\n")
            Utils.atomic_write_text(path, "c,d\n")
            Utils.atomic_write_bytes(os.path.join(tmp, "sub", "out.bin"), b"\x00\x01")
            with open(path, encoding="utf-8") as f:
                self.assertEqual(f.read(), "c,d\n")
            self.assertEqual(sorted(os.listdir(os.path.join(tmp, "sub"))), ["out.bin", "out.csv"])

    def test_setup_logging_sets_level(self):
        root = logging.getLogger()
        level = root.level
        try:
            Utils.setup_logging("warning")
            self.assertEqual(root.level, logging.WARNING)
        finally:
            root.setLevel(level)

    def test_exit_codes(self):
        self.assertEqual(ConfigError("x").exit_code, 1)
        self.assertEqual(DataError("x").exit_code, 2)
        self.assertEqual(DecodeError("x").exit_code, 2)
        self.assertEqual(NumericError("x").exit_code, 3)
        self.assertTrue(issubclass(DecodeError, SoundscapeError))


if __name__ == "__main__":
    unittest.main()
