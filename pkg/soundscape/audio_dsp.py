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
WAV decoding and log-mel spectrograms for the S1 / S2 melspec settings.
"""

import io
import json
import struct
import hashlib
import logging
import warnings
from functools import lru_cache
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
import librosa
from scipy.io import wavfile

from soundscape.errors import ConfigError, DataError, DecodeError

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 32000
MEL_SCALE = "htk"
AMIN = 1e-10
PCM16_SCALE = 32768.0

PRESETS = {
    "S1": dict(window_size=1024, hop_size=320, fmin=50.0, fmax=14000.0, mel_bins=256, power=2.0, top_db=80.0),
    "S2": dict(window_size=2048, hop_size=512, fmin=16.0, fmax=16386.0, mel_bins=64, power=2.0, top_db=None),
}


@dataclass(frozen=True)
class MelSpecConfig:
    window_size: int = 1024
    hop_size: int = 320
    fmin: float = 50.0
    fmax: float = 14000.0
    mel_bins: int = 256
    power: float = 2.0
    top_db: Optional[float] = 80.0
    sample_rate: int = DEFAULT_SAMPLE_RATE
    allow_empty_filters: bool = False

    def __post_init__(self):
        if not 0 <= self.fmin < self.fmax:
            raise ConfigError(f"melspec: need 0 <= fmin < fmax, got fmin={self.fmin}, fmax={self.fmax}")
        if self.fmax > self.sample_rate / 2:
            raise ConfigError(f"melspec: fmax={self.fmax} exceeds the Nyquist frequency {self.sample_rate / 2}")
        if not self.window_size >= self.hop_size > 0:
            raise ConfigError(f"melspec: need window_size >= hop_size > 0, got {self.window_size}, {self.hop_size}")
        if self.power <= 0:
            raise ConfigError(f"melspec: power must be positive, got {self.power}")
        if self.top_db is not None and self.top_db <= 0:
            raise ConfigError(f"melspec: top_db must be positive when set, got {self.top_db}")
        if self.mel_bins < 1:
            raise ConfigError(f"melspec: mel_bins must be >= 1, got {self.mel_bins}")

    @classmethod
    def preset(cls, name, sample_rate=DEFAULT_SAMPLE_RATE):
        """
        Returns the named melspec setting (S1 or S2) at the given sample rate
        """
        try:
            values = dict(PRESETS[name.upper()])
        except KeyError:
            raise ConfigError(f"Unknown melspec preset '{name}', expected one of {sorted(PRESETS)}") from None
        nyquist = sample_rate / 2
        if values["fmax"] > nyquist:
            logger.warning(f"{name}: fmax {values['fmax']} Hz exceeds Nyquist at {sample_rate} Hz, clamped to {nyquist}")
            values["fmax"] = nyquist
        # S1's lowest filters fall between FFT bins at 32 kHz
        values["allow_empty_filters"] = name.upper() == "S1"
        return cls(sample_rate=sample_rate, **values)

    @property
    def n_freqs(self):
        return self.window_size // 2 + 1

    def frames(self, n_samples):
        return n_samples // self.hop_size + 1

    def to_dict(self):
        return asdict(self)

    def digest(self):
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class MelSpec:
    values: np.ndarray
    config: MelSpecConfig

    @property
    def mel_bins(self):
        return self.values.shape[0]

    @property
    def frames(self):
        return self.values.shape[1]


def decode_wav(data):
    """
    Decodes 16-bit PCM WAV bytes

    :param data: RIFF/WAVE file contents
    :type data: bytes

    :returns: Mono samples scaled into [-1, 1] and the sample rate
    :rtype: tuple
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DecodeError("not a RIFF/WAVE file or header cut short")
    declared = struct.unpack("<I", data[4:8])[0]
    if declared != 0xFFFFFFFF and declared + 8 > len(data):
        raise DecodeError(f"truncated WAV: header declares {declared + 8} bytes, file has {len(data)}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", wavfile.WavFileWarning)
        try:
            rate, pcm = wavfile.read(io.BytesIO(data))
        except (ValueError, EOFError, IndexError, struct.error) as e:
            raise DecodeError(f"malformed WAV: {e}") from e
    for warning in caught:
        message = str(warning.message)
        if "EOF" in message or "truncat" in message.lower():
            raise DecodeError(f"truncated WAV: {message}")
        logger.debug(f"WAV decoder: {message}")
    if pcm.dtype != np.int16:
        raise DecodeError(f"unsupported sample format {pcm.dtype}, only 16-bit PCM is decoded")
    samples = pcm.astype(np.float64) / PCM16_SCALE
    if samples.ndim == 2:
        if samples.shape[1] > 2:
            raise DecodeError(f"unsupported channel count {samples.shape[1]}")
        samples = samples.mean(axis=1)
    return samples, int(rate)


def read_wav(path):
    try:
        with open(path, "rb") as wav_file:
            data = wav_file.read()
    except OSError as e:
        raise DataError(f"{path}: cannot read audio ({e.strerror})") from e
    try:
        return decode_wav(data)
    except DecodeError as e:
        raise DecodeError(f"{path}: {e}") from e


def encode_wav(samples, sample_rate):
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * PCM16_SCALE), -32768, 32767).astype(np.int16)
    buffer = io.BytesIO()
    wavfile.write(buffer, int(sample_rate), pcm)
    return buffer.getvalue()


def write_wav(path, samples, sample_rate):
    with open(path, "wb") as wav_file:
        wav_file.write(encode_wav(samples, sample_rate))


def mel_band_edges(config):
    """
    The mel_bins + 2 HTK-spaced band edges; filter i rises from edge i, peaks at
    edge i + 1 and falls to edge i + 2.
    """
    return librosa.mel_frequencies(n_mels=config.mel_bins + 2, fmin=config.fmin, fmax=config.fmax,
                                   htk=MEL_SCALE == "htk")


@lru_cache(maxsize=16)
def mel_filterbank(config):
    """
    Triangular HTK mel filterbank with unit peak height (no area normalization)

    :returns: Read-only matrix of shape mel_bins x (window_size // 2 + 1)
    :rtype: numpy.ndarray
    """
    with warnings.catch_warnings():
        # empty filters are reported below
        warnings.simplefilter("ignore", UserWarning)
        bank = librosa.filters.mel(sr=config.sample_rate, n_fft=config.window_size, n_mels=config.mel_bins,
                                   fmin=config.fmin, fmax=config.fmax, htk=MEL_SCALE == "htk",
                                   norm=None, dtype=np.float64)
    empty = np.flatnonzero(bank.max(axis=1) <= 0)
    if empty.size:
        message = (f"{empty.size} of {config.mel_bins} mel filters contain no FFT bin "
                   f"(first: {empty[0]}); reduce mel_bins or increase window_size")
        if not config.allow_empty_filters:
            raise ConfigError(message)
        logger.warning(message)
    bank.setflags(write=False)
    return bank


def compute_melspec(samples, config):
    """
    Log-mel spectrogram: centered Hann STFT with reflect padding, magnitude**power,
    mel filterbank, 10*log10(max(x, 1e-10)), optional top_db clamp below the maximum.

    :returns: MelSpec of shape mel_bins x (n_samples // hop_size + 1)
    :rtype: MelSpec
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size == 0:
        raise DataError("compute_melspec needs a non-empty mono waveform")
    stft = librosa.stft(samples, n_fft=config.window_size, hop_length=config.hop_size,
                        win_length=config.window_size, window="hann", center=True, pad_mode="reflect")
    power = np.abs(stft) ** config.power
    mel = mel_filterbank(config) @ power
    values = librosa.power_to_db(mel, ref=1.0, amin=AMIN, top_db=config.top_db)
    return MelSpec(values, config)
