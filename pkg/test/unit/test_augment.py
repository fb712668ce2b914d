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

import unittest

import numpy as np

from soundscape.augment import (N_PARTS, Augmenter, BackgroundConfig, MixupConfig, SegmentedSpec, crop_random_window,
                                crop_waveform, mix_background, mixup_between, mixup_within, rms, segment_six)
from soundscape.datamodel import TrainRecording
from soundscape.errors import ConfigError, DataError


def _segmented(seed, mel=4, frames=3):
    return SegmentedSpec(np.random.default_rng(seed).normal(size=(N_PARTS, mel, frames)), f"rec{seed}")


class TestCrops(unittest.TestCase):

    def test_short_waveform_is_tiled(self):
        out = crop_waveform(np.array([1.0, 2.0, 3.0]), 7, np.random.default_rng(0))
        self.assertEqual(out.size, 7)
        for a, b in zip(out[:-1], out[1:]):
            self.assertEqual(b, a % 3 + 1)

    def test_crop_is_a_window_of_the_source(self):
        source = np.arange(100, dtype=np.float64)
        out = crop_waveform(source, 30, np.random.default_rng(4))
        np.testing.assert_array_equal(out, np.arange(out[0], out[0] + 30))

    def test_crop_random_window(self):
        rec = TrainRecording("r", np.random.default_rng(0).normal(size=250), 100, "aaa")
        a = crop_random_window(rec, 3.0, np.random.default_rng(5))
        b = crop_random_window(rec, 3.0, np.random.default_rng(5))
        self.assertEqual(a.size, 300)
        np.testing.assert_array_equal(a, b)
        with self.assertRaises(DataError):
            crop_random_window(rec, 0.0)

    def test_ten_seconds_cropped_to_thirty_is_three_copies(self):
        source = np.random.default_rng(1).normal(size=1000)
        rec = TrainRecording("r", source, 100, "aaa")
        out = crop_random_window(rec, 30.0, np.random.default_rng(2))
        np.testing.assert_array_equal(out, np.concatenate([source, source, source]))

    def test_crop_errors(self):
        with self.assertRaises(DataError):
            crop_waveform(np.empty(0), 5, np.random.default_rng(0))


class TestSegments(unittest.TestCase):

    def test_segment_six_trims_trailing_frames(self):
        values = np.arange(4 * 20, dtype=np.float64).reshape(4, 20)
        seg = segment_six(values, "x")
        self.assertEqual(seg.parts.shape, (6, 4, 3))
        self.assertEqual(seg.frames_per_part, 3)
        np.testing.assert_array_equal(seg.concat(), values[:, :18])
        np.testing.assert_array_equal(seg.parts[1], values[:, 3:6])

    def test_frames_per_part_bounds(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            frames = int(rng.integers(6, 400))
            seg = segment_six(np.zeros((2, frames)))
            self.assertEqual(seg.parts.shape[0], N_PARTS)
            self.assertLessEqual(seg.frames_per_part * 6, frames)
            self.assertLess(frames, seg.frames_per_part * 6 + 6)

    def test_thirty_seconds_of_s1_frames(self):
        seg = segment_six(np.zeros((256, 3001)))
        self.assertEqual(seg.parts.shape, (6, 256, 500))

    def test_too_few_frames(self):
        with self.assertRaises(DataError):
            segment_six(np.zeros((4, 5)))


class TestMixup(unittest.TestCase):

    def test_between_mixes_values_and_unions_labels(self):
        a, b = _segmented(0), _segmented(1)
        mixed, target = mixup_between(a, [1.0, 0.01, 0.01], b, [0.01, 1.0, 0.01], 0.3)
        np.testing.assert_allclose(mixed.parts, 0.3 * a.parts + 0.7 * b.parts)
        np.testing.assert_array_equal(target, [1.0, 1.0, 0.01])
        self.assertEqual(mixed.source_id, "rec0")

    def test_between_endpoints_keep_one_target(self):
        a, b = _segmented(0), _segmented(1)
        _, target = mixup_between(a, [1.0, 0.0], b, [0.0, 1.0], 1.0)
        np.testing.assert_array_equal(target, [1.0, 0.0])
        mixed, target = mixup_between(a, [1.0, 0.0], b, [0.0, 1.0], 0.0)
        np.testing.assert_array_equal(target, [0.0, 1.0])
        np.testing.assert_array_equal(mixed.parts, b.parts)

    def test_between_stays_in_the_convex_hull(self):
        rng = np.random.default_rng(11)
        for lam in [0.0, 1.0] + rng.uniform(0, 1, 20).tolist():
            a, b = rng.normal(size=(5, 7)), rng.normal(size=(5, 7))
            mixed, _ = mixup_between(a, [1.0], b, [0.0], lam)
            self.assertTrue(np.all(mixed >= np.minimum(a, b) - 1e-12))
            self.assertTrue(np.all(mixed <= np.maximum(a, b) + 1e-12))

    def test_between_is_symmetric(self):
        rng = np.random.default_rng(12)
        a, b = _segmented(3), _segmented(4)
        ta, tb = rng.uniform(size=5), rng.uniform(size=5)
        for lam in [0.0, 1.0] + rng.uniform(0, 1, 10).tolist():
            ab, target_ab = mixup_between(a, ta, b, tb, lam)
            ba, target_ba = mixup_between(b, tb, a, ta, 1.0 - lam)
            np.testing.assert_allclose(ab.parts, ba.parts, rtol=0, atol=1e-12)
            np.testing.assert_array_equal(target_ab, target_ba)

    def test_between_errors(self):
        with self.assertRaises(DataError):
            mixup_between(_segmented(0), [1.0], _segmented(1, frames=4), [1.0], 0.5)
        with self.assertRaises(DataError):
            mixup_between(_segmented(0), [1.0], _segmented(1), [1.0, 0.0], 0.5)
        with self.assertRaises(DataError):
            mixup_between(_segmented(0), [1.0], _segmented(1), [1.0], 1.5)

    def test_within(self):
        spec = _segmented(2)
        perm = [5, 4, 3, 2, 1, 0]
        mixed = mixup_within(spec, 0.25, perm)
        np.testing.assert_allclose(mixed.parts[0], 0.25 * spec.parts[0] + 0.75 * spec.parts[5])
        np.testing.assert_array_equal(mixup_within(spec, 1.0, perm).parts, spec.parts)
        same = SegmentedSpec(np.repeat(spec.parts[:1], N_PARTS, axis=0))
        np.testing.assert_allclose(mixup_within(same, 0.4, perm).parts, same.parts)
        with self.assertRaises(DataError):
            mixup_within(spec, 0.5, [0, 0, 1, 2, 3, 4])

    def test_within_half_reverse_keeps_the_total(self):
        spec = _segmented(5, mel=8, frames=10)
        mixed = mixup_within(spec, 0.5, list(reversed(range(N_PARTS))))
        np.testing.assert_allclose(mixed.parts.sum(axis=0), spec.parts.sum(axis=0), rtol=0, atol=1e-12)

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            MixupConfig(alpha=0.0)
        with self.assertRaises(ConfigError):
            MixupConfig(p_between=1.5)
        with self.assertRaises(ConfigError):
            BackgroundConfig(snr_min=10.0, snr_max=5.0)


class TestBackground(unittest.TestCase):

    def test_snr_is_met(self):
        rng = np.random.default_rng(0)
        signal = np.sin(np.linspace(0, 100, 4000))
        noise = rng.normal(size=1000)
        mixed = mix_background(signal, noise, 6.0)
        added = mixed - signal
        self.assertAlmostEqual(20 * np.log10(rms(signal) / rms(added)), 6.0, places=9)

    def test_infinite_snr_is_identity(self):
        signal = np.ones(10)
        np.testing.assert_array_equal(mix_background(signal, np.zeros(3), float("inf")), signal)

    def test_silent_inputs(self):
        with self.assertRaises(DataError):
            mix_background(np.ones(10), np.zeros(10), 3.0)
        with self.assertRaises(DataError):
            mix_background(np.zeros(10), np.ones(10), 3.0)
        with self.assertRaises(DataError):
            mix_background(np.ones(10), np.empty(0), 3.0)


class TestAugmenter(unittest.TestCase):

    def test_no_mixing_leaves_batch_alone(self):
        augmenter = Augmenter(MixupConfig(p_between=0.0, p_within=0.0), BackgroundConfig(p=0.0))
        specs = [_segmented(i) for i in range(3)]
        targets = [np.eye(3)[i] for i in range(3)]
        out_specs, out_targets = augmenter.mix_batch(specs, targets, np.random.default_rng(0))
        for a, b in zip(specs, out_specs):
            np.testing.assert_array_equal(a.parts, b.parts)
        np.testing.assert_array_equal(np.stack(out_targets), np.eye(3))

    def test_between_round_unions_targets(self):
        augmenter = Augmenter(MixupConfig(p_between=1.0, p_within=0.0, max_between_rounds=1), BackgroundConfig(p=0.0))
        specs = [_segmented(i) for i in range(4)]
        targets = [np.eye(4)[i] for i in range(4)]
        _, out_targets = augmenter.mix_batch(specs, targets, np.random.default_rng(3))
        for i, target in enumerate(out_targets):
            self.assertEqual(target[i], 1.0)
            self.assertIn(target.sum(), (1.0, 2.0))

    def test_mix_batch_is_deterministic(self):
        augmenter = Augmenter(MixupConfig(p_between=1.0, p_within=1.0), BackgroundConfig(p=0.0))
        specs = [_segmented(i) for i in range(4)]
        targets = [np.eye(4)[i] for i in range(4)]
        a, ta = augmenter.mix_batch(specs, targets, np.random.default_rng(9))
        b, tb = augmenter.mix_batch(specs, targets, np.random.default_rng(9))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.parts, y.parts)
        np.testing.assert_array_equal(np.stack(ta), np.stack(tb))

    def test_background_needs_noise(self):
        waveform = np.sin(np.linspace(0, 10, 100))
        rng = np.random.default_rng(0)
        self.assertIs(Augmenter(MixupConfig(), BackgroundConfig(p=1.0)).add_background(waveform, rng), waveform)
        noisy = Augmenter(MixupConfig(), BackgroundConfig(p=1.0), [np.ones(30)]).add_background(waveform, rng)
        self.assertEqual(noisy.shape, waveform.shape)
        self.assertFalse(np.array_equal(noisy, waveform))


if __name__ == "__main__":
    unittest.main()
