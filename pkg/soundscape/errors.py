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

"""
Exceptions raised by the soundscape pipeline. The command line maps each
class to its exit status.
"""


class SoundscapeError(Exception):
    exit_code = 1


class ConfigError(SoundscapeError):
    """Invalid or unknown configuration value, or bad command-line usage."""
    exit_code = 1


class DataError(SoundscapeError):
    """Input data is missing, malformed or inconsistent."""
    exit_code = 2


class DecodeError(DataError):
    """Audio bytes could not be decoded as 16-bit PCM WAV."""


class NumericError(SoundscapeError):
    """Non-finite values during training or scoring."""
    exit_code = 3
