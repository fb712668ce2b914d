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

import io
import unittest

import numpy as np
from scipy.io import wavfile

from soundscape.audio_dsp import (PRESETS, MelSpecConfig, compute_melspec, decode_wav, encode_wav, mel_band_edges,
                                  mel_filterbank)
from soundscape.errors import ConfigError, DataError, DecodeError


def _wav_bytes(rate, pcm):
    buffer = io.BytesIO()
    wavfile.write(buffer, rate, pcm)
    return buffer.getvalue()


class TestMelSpec(unittest.TestCase):

    def test_window_shapes(self):
        samples = np.random.default_rng(0).uniform(-0.5, 0.5, 5 * 32000)
        s1 = compute_melspec(samples, MelSpecConfig.preset("S1"))
        s2 = compute_melspec(samples, MelSpecConfig.preset("S2"))
        self.assertEqual(s1.values.shape, (256, 501))
        self.assertEqual(s2.values.shape, (64, 313))
        self.assertEqual(MelSpecConfig.preset("S2").frames(160000), 313)

    def test_top_db_bound(self):
        config = MelSpecConfig.preset("S1")
        rng = np.random.default_rng(1)
        for _ in range(100):
            samples = rng.standard_normal(32000) * rng.uniform(1e-4, 0.5)
            values = compute_melspec(samples, config).values
            self.assertLessEqual(values.max() - values.min(), 80.0 + 1e-9)

    def test_silence_sits_at_the_floor(self):
        values = compute_melspec(np.zeros(8000), MelSpecConfig.preset("S2")).values
        np.testing.assert_allclose(values, -100.0)

    def test_tone_peaks_in_its_band(self):
        config = MelSpecConfig.preset("S2")
        t = np.arange(32000) / 32000.0
        values = compute_melspec(0.5 * np.sin(2 * np.pi * 1000.0 * t), config).values
        band = int(np.argmax(values.mean(axis=1)))
        edges = mel_band_edges(config)
        self.assertLessEqual(edges[band], 1000.0)
        self.assertLessEqual(1000.0, edges[band + 2])

    def test_frame_count(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            hop = int(rng.integers(16, 257))
            n_samples = int(rng.integers(300, 5000))
            config = MelSpecConfig(window_size=256, hop_size=hop, fmin=50.0, fmax=4000.0, mel_bins=16,
                                   sample_rate=8000)
            values = compute_melspec(rng.standard_normal(n_samples), config).values
            self.assertEqual(values.shape, (16, n_samples // hop + 1))
            self.assertEqual(config.frames(n_samples), n_samples // hop + 1)

    def test_gain_shifts_every_bin(self):
        config = MelSpecConfig(window_size=512, hop_size=128, fmin=50.0, fmax=4000.0, mel_bins=32, top_db=None,
                               sample_rate=8000)
        rng = np.random.default_rng(4)
        samples = 0.1 * rng.standard_normal(8000)
        base = compute_melspec(samples, config).values
        for gain in (0.01, 0.5, 3.0, 10.0):
            shift = 20.0 * np.log10(gain)
            scaled = compute_melspec(samples * gain, config).values
            self.assertGreater(min(base.min(), scaled.min()), -100.0 + 10.0)
            np.testing.assert_allclose(scaled - base, shift, atol=1e-6)
            np.testing.assert_array_equal(np.argmax(scaled, axis=0), np.argmax(base, axis=0))

    def test_same_input_same_output(self):
        samples = np.random.default_rng(5).uniform(-0.5, 0.5, 32000)
        for name in ("S1", "S2"):
            config = MelSpecConfig.preset(name)
            self.assertTrue(np.array_equal(compute_melspec(samples, config).values,
                                           compute_melspec(samples, config).values))

    def test_filterbank(self):
        config = MelSpecConfig.preset("S2")
        bank = mel_filterbank(config)
        self.assertEqual(bank.shape, (64, 1025))
        self.assertLessEqual(bank.max(), 1.0 + 1e-9)
        self.assertTrue((bank >= 0).all())
        self.assertEqual(len(mel_band_edges(config)), 66)

    def test_empty_filters_need_permission(self):
        strict = MelSpecConfig(**PRESETS["S1"], allow_empty_filters=False)
        with self.assertRaises(ConfigError):
            mel_filterbank(strict)
        self.assertEqual(mel_filterbank(MelSpecConfig.preset("S1")).shape, (256, 513))

    def test_preset_clamps_fmax(self):
        with self.assertLogs("soundscape.audio_dsp", level="WARNING"):
            config = MelSpecConfig.preset("S2", sample_rate=16000)
        self.assertEqual(config.fmax, 8000.0)

    def test_invalid_configs(self):
        with self.assertRaises(ConfigError):
            MelSpecConfig(fmin=500.0, fmax=400.0)
        with self.assertRaises(ConfigError):
            MelSpecConfig(window_size=256, hop_size=512)
        with self.assertRaises(ConfigError):
            MelSpecConfig(fmax=20000.0)
        with self.assertRaises(ConfigError):
            MelSpecConfig.preset("S3")

    def test_empty_input(self):
        with self.assertRaises(DataError):
            compute_melspec(np.empty(0), MelSpecConfig.preset("S2"))

    def test_digest_tracks_fields(self):
        a = MelSpecConfig.preset("S2")
        self.assertEqual(a.digest(), MelSpecConfig.preset("S2").digest())
        self.assertNotEqual(a.digest(), MelSpecConfig.preset("S1").digest())


class TestWav(unittest.TestCase):

    def test_decode_scales_pcm(self):
        samples, rate = decode_wav(_wav_bytes(8000, np.array([0, 16384, -32768, 32767], dtype=np.int16)))
        self.assertEqual(rate, 8000)
        np.testing.assert_allclose(samples, [0.0, 0.5, -1.0, 32767 / 32768])

    def test_stereo_is_averaged(self):
        pcm = np.array([[16384, 0], [-16384, -16384]], dtype=np.int16)
        samples, _ = decode_wav(_wav_bytes(8000, pcm))
        np.testing.assert_allclose(samples, [0.25, -0.5])

    def test_encode_decode(self):
        values = np.array([0.0, 0.25, -0.5, 0.999])
        samples, rate = decode_wav(encode_wav(values, 16000))
        self.assertEqual(rate, 16000)
        np.testing.assert_allclose(samples, values, atol=1 / 32768)

    def test_rejects_bad_input(self):
        with self.assertRaises(DecodeError):
            decode_wav(b"not a wav file at all")
        with self.assertRaises(DecodeError):
            decode_wav(encode_wav(np.zeros(1000), 8000)[:-100])
        with self.assertRaises(DecodeError):
            decode_wav(_wav_bytes(8000, np.zeros(10, dtype=np.uint8)))
        with self.assertRaises(DecodeError):
            decode_wav(_wav_bytes(8000, np.zeros(10, dtype=np.float32)))


if __name__ == "__main__":
    unittest.main()
