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
import datetime
import tempfile
import unittest

import numpy as np

from soundscape.audio_dsp import MelSpecConfig, compute_melspec, mel_band_edges, read_wav
from soundscape.datamodel import (parse_binary_metadata, parse_soundscape_metadata, parse_soundscape_truth,
                                  parse_train_metadata)
from soundscape.errors import ConfigError, DataError
from soundscape.synth_corpus import (SynthConfig, gen_background_clip, gen_binary_clip, gen_soundscape,
                                     gen_train_clip, make_species, pink_noise, render_call, write_corpus)

RATE = 8000
MELSPEC = MelSpecConfig(window_size=256, hop_size=128, fmin=50.0, fmax=4000.0, mel_bins=16, top_db=80.0,
                        sample_rate=RATE)
TINY = SynthConfig(n_species=3, n_train_clips=4, clip_min_seconds=6.0, clip_max_seconds=8.0, n_soundscapes=2,
                   n_empty_soundscapes=1, soundscape_seconds=10.0, call_probability=0.5, n_binary_clips=4,
                   binary_seconds=3.0, n_background_clips=1, background_seconds=4.0, sample_rate=RATE, seed=3)


class TestSpecies(unittest.TestCase):

    def setUp(self):
        self.species = make_species(3, MELSPEC, seed=0)

    def test_bands_are_disjoint_and_ordered(self):
        self.assertEqual([sp.code for sp in self.species], ["sp01", "sp02", "sp03"])
        for low, high in zip(self.species, self.species[1:]):
            self.assertLess(max(low.frequencies), min(high.frequencies))
        for sp in self.species:
            self.assertTrue(all(300.0 <= f <= 0.9 * MELSPEC.fmax for f in sp.frequencies))
        self.assertEqual(make_species(3, MELSPEC, seed=0), self.species)

    def test_call_length(self):
        sp = self.species[0]
        self.assertEqual(render_call(sp, RATE).size, sum(int(d * RATE) for _, d, _ in sp.signature)
                         + int(0.03 * RATE) * (len(sp.signature) - 1))
        self.assertAlmostEqual(sp.call_seconds * RATE, render_call(sp, RATE).size, delta=len(sp.signature))

    def test_narrow_range(self):
        with self.assertRaises(ConfigError):
            make_species(2, MelSpecConfig(fmin=50.0, fmax=300.0, mel_bins=8, sample_rate=RATE))

    def test_signature_energy_lands_in_its_mel_bins(self):
        centers = mel_band_edges(MELSPEC)[1:-1]
        peaks = []
        for sp in self.species:
            s = gen_soundscape([frozenset({sp.code})], self.species, seed=1, noise_level=0.0, sample_rate=RATE)
            energy = compute_melspec(s.samples, MELSPEC).values.mean(axis=1)
            k = int(np.argmax(energy))
            spacing = max(centers[min(k + 1, len(centers) - 1)] - centers[k], centers[k] - centers[max(k - 1, 0)])
            self.assertLessEqual(min(abs(centers[k] - f) for f in sp.frequencies), spacing)
            peaks.append(k)
        self.assertEqual(peaks, sorted(peaks))
        self.assertLess(peaks[0], peaks[-1])


class TestGenerators(unittest.TestCase):

    def setUp(self):
        self.species = make_species(4, MELSPEC, seed=0)

    def test_pink_noise(self):
        noise = pink_noise(RATE, np.random.default_rng(0))
        self.assertAlmostEqual(float(np.sqrt(np.mean(noise ** 2))), 1.0, places=9)
        power = np.abs(np.fft.rfft(noise)) ** 2
        self.assertGreater(power[1:50].mean(), power[-500:].mean())

    def test_same_seed_same_waveform(self):
        schedule = [frozenset({"sp01"}), frozenset(), frozenset({"sp02", "sp04"})]
        a = gen_soundscape(schedule, self.species, seed=5, sample_rate=RATE)
        b = gen_soundscape(schedule, self.species, seed=5, sample_rate=RATE)
        c = gen_soundscape(schedule, self.species, seed=6, sample_rate=RATE)
        np.testing.assert_array_equal(a.samples, b.samples)
        self.assertFalse(np.array_equal(a.samples, c.samples))
        self.assertEqual(a.truth, tuple(schedule))
        self.assertLessEqual(np.max(np.abs(a.samples)), 0.9)

    def test_empty_schedule_rows(self):
        s = gen_soundscape([frozenset()] * 120, self.species, seed=0, sample_rate=RATE, soundscape_id="long")
        self.assertEqual(s.samples.size, 600 * RATE)
        self.assertEqual(s.n_windows, 120)
        self.assertFalse(any(s.truth))
        self.assertEqual(s.row_ids[-1], "long_600")

    def test_bad_schedules(self):
        with self.assertRaises(DataError):
            gen_soundscape([frozenset({"sp99"})], self.species, seed=0, sample_rate=RATE)
        with self.assertRaises(DataError):
            gen_soundscape([], self.species, seed=0, sample_rate=RATE)

    def test_train_clip(self):
        rec = gen_train_clip(self.species[1:3], 6.0, 0.05, seed=2, sample_rate=RATE,
                             date=datetime.date(2020, 6, 1))
        self.assertEqual(rec.primary_label, "sp02")
        self.assertEqual(rec.secondary_labels, frozenset({"sp03"}))
        self.assertEqual(rec.samples.size, 6 * RATE)
        self.assertTrue(1 <= rec.rating <= 5)
        self.assertLessEqual(abs((rec.date - datetime.date(2020, 6, 1)).days), 30)
        self.assertLessEqual(abs(rec.latitude - 47.0), 2.0)
        with self.assertRaises(DataError):
            gen_train_clip([], 6.0, 0.05, seed=2, sample_rate=RATE)

    def test_background_and_binary_clips(self):
        self.assertEqual(gen_background_clip(2.0, 0.05, seed=0, sample_rate=RATE).size, 2 * RATE)
        bird = gen_binary_clip(self.species, True, 3.0, 0.05, seed=1, sample_rate=RATE)
        empty = gen_binary_clip(self.species, False, 3.0, 0.05, seed=1, sample_rate=RATE)
        self.assertTrue(bird.has_bird)
        self.assertFalse(empty.has_bird)
        self.assertEqual(bird.samples.size, 3 * RATE)

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            SynthConfig(n_species=0)
        with self.assertRaises(ConfigError):
            SynthConfig(n_soundscapes=1, n_empty_soundscapes=2)
        with self.assertRaises(ConfigError):
            SynthConfig(site_date="June")
        with self.assertRaises(ConfigError):
            SynthConfig(soundscape_seconds=4.0)


class TestWriteCorpus(unittest.TestCase):

    def test_layout_and_formats(self):
        with tempfile.TemporaryDirectory() as tmp:
            species = write_corpus(tmp, TINY, MELSPEC)
            self.assertEqual(len(species), 3)

            with open(os.path.join(tmp, "train_metadata.csv")) as f:
                recordings = parse_train_metadata(f.read(), os.path.join(tmp, "train_audio"), sample_rate=RATE)
            self.assertEqual(len(recordings), 4)
            self.assertEqual(sorted({r.primary_label for r in recordings}), ["sp01", "sp02", "sp03"])
            self.assertTrue(all(6 * RATE <= r.samples.size <= 8 * RATE for r in recordings))

            with open(os.path.join(tmp, "soundscape_labels.csv")) as f:
                truth = parse_soundscape_truth(f.read())
            with open(os.path.join(tmp, "soundscapes.csv")) as f:
                soundscapes = parse_soundscape_metadata(f.read(), os.path.join(tmp, "soundscapes"), truth, RATE)
            self.assertEqual([s.id for s in soundscapes], ["synth000", "synth001"])
            self.assertEqual(len(truth), 4)
            self.assertFalse(any(soundscapes[0].truth))
            self.assertEqual(soundscapes[0].date, datetime.date(2020, 6, 1))

            with open(os.path.join(tmp, "binary_metadata.csv")) as f:
                clips = parse_binary_metadata(f.read(), os.path.join(tmp, "binary_audio"), RATE)
            self.assertEqual([c.has_bird for c in clips], [True, False, True, False])
            self.assertEqual(clips[0].samples.size, 3 * RATE)

            self.assertEqual(os.listdir(os.path.join(tmp, "background")), ["bg000.wav"])

    def test_corpus_is_reproducible(self):
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            write_corpus(a, TINY, MELSPEC)
            write_corpus(b, TINY, MELSPEC, jobs=2)
            for name in ("synth001.wav",):
                first, _ = read_wav(os.path.join(a, "soundscapes", name))
                second, _ = read_wav(os.path.join(b, "soundscapes", name))
                np.testing.assert_array_equal(first, second)
            for name in ("train_metadata.csv", "soundscape_labels.csv", "binary_metadata.csv"):
                with open(os.path.join(a, name)) as f, open(os.path.join(b, name)) as g:
                    self.assertEqual(f.read(), g.read())


if __name__ == "__main__":
    unittest.main()
