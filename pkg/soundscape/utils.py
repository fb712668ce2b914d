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

import os
import math
import logging
import tempfile
import datetime

import numpy as np

LOG_FORMAT = "[%(asctime)s] %(name)s:%(levelname)s in %(filename)s:%(lineno)s - %(message)s"


class Utils:

    @staticmethod
    def setup_logging(level="INFO"):
        """
        Installs the pipeline log format on the root logger

        :param level: Logging level name or number
        :type level: str or int
        """
        if isinstance(level, str):
            level = logging.getLevelName(level.upper())
        logger = logging.getLogger()
        logger.setLevel(level)
        if not logger.handlers:
            logger.addHandler(logging.StreamHandler())
        for handler in logger.handlers:
            handler.setFormatter(logging.Formatter(LOG_FORMAT))

    @staticmethod
    def atomic_write_text(path, text):
        """
        Writes text to path through a temporary file in the same directory, so
        readers never see a partially written file.

        :param path: Destination file
        :type path: str

        :param text: File contents
        :type text: str
        """
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as tmp_file:
                tmp_file.write(text)
            os.replace(tmp_path, path)
        except BaseException:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise

    @staticmethod
    def atomic_write_bytes(path, data):
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
        try:
            with os.fdopen(fd, "wb") as tmp_file:
                tmp_file.write(data)
            os.replace(tmp_path, path)
        except BaseException:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise

    @staticmethod
    def rng(*stream):
        """
        Returns a numpy Generator for the integer stream key, e.g. (seed, epoch, index).
        Identical keys give identical draws in every process.
        """
        return np.random.default_rng([int(s) for s in stream])

    @staticmethod
    def sample_count(fraction, n):
        """
        Number of items drawn when sampling a fraction of n, rounded up
        (80% of 17 files -> 14)
        """
        return int(math.ceil(round(fraction * n, 9)))

    @staticmethod
    def day_of_year(date):
        if date is None:
            return None
        return date.timetuple().tm_yday

    @staticmethod
    def parse_date(text):
        """
        Parses an ISO calendar date; returns None for empty or partial dates
        such as '2004-00-00'
        """
        text = (text or "").strip()
        if not text:
            return None
        try:
            return datetime.date.fromisoformat(text)
        except ValueError:
            logging.debug(f"Unparseable date '{text}' treated as absent")
            return None
