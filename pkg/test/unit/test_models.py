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

import math
import os
import tempfile
import unittest

import torch

from soundscape.audio_dsp import MelSpecConfig
from soundscape.errors import ConfigError, DataError, NumericError
from sound_classifier.binary.model import BinaryClassifier
from sound_classifier.bird.loss import weighted_bce_loss
from sound_classifier.bird.model import BirdClassifier
from sound_classifier.gradcheck import finite_diff_check, gradient_errors
from sound_classifier.layers import AttentionPool, BackboneConfig, BlockSpec, GeM, GeMConfig, gem_pool
from sound_classifier.params import decode_params, encode_params, load_params, params_from_bytes, save_params

TINY = BackboneConfig((BlockSpec(4),))


def _bird(seed=0, trainable=False, n_classes=4, backbone=TINY, melspec=None):
    return BirdClassifier(backbone, GeMConfig(p=3.0, trainable=trainable), n_classes, melspec=melspec,
                          labels=[f"sp{i}" for i in range(n_classes)], seed=seed)


class TestGeM(unittest.TestCase):

    def test_p1_is_the_mean(self):
        x = torch.tensor([[[1.0, 3.0], [5.0, 7.0]]], dtype=torch.float64)
        self.assertAlmostEqual(gem_pool(x, 1.0).item(), 4.0, places=12)
        rand = torch.rand(3, 5, 4, 6, dtype=torch.float64) + 0.01
        torch.testing.assert_close(gem_pool(rand, 1.0), rand.mean(dim=(-2, -1)), rtol=1e-6, atol=0)

    def test_constant_input(self):
        x = torch.full((2, 3, 4), 0.7, dtype=torch.float64)
        for p in (1.0, 3.0, 50.0):
            torch.testing.assert_close(gem_pool(x, p), torch.full((2,), 0.7, dtype=torch.float64))

    def test_large_p_tends_to_max(self):
        x = torch.tensor([[[0.1, 1.0]]], dtype=torch.float64)
        value = gem_pool(x, 100.0).item()
        self.assertAlmostEqual(value, (0.5 * (0.1 ** 100 + 1.0)) ** 0.01, places=9)
        self.assertLess(abs(value - 1.0), 0.01)
        rand = torch.rand(4, 2, 1, 2, dtype=torch.float64)
        pooled = gem_pool(rand, 100.0)
        peak = rand.amax(dim=(-2, -1))
        self.assertTrue(bool(((peak - pooled) / peak <= 0.01).all()))

    def test_non_decreasing_in_p(self):
        generator = torch.Generator().manual_seed(0)
        x = torch.rand(5, 3, 4, 6, generator=generator, dtype=torch.float64) + 1e-3
        previous = gem_pool(x, 1.0)
        for p in (1.5, 2.0, 3.0, 5.0, 10.0, 30.0, 100.0):
            current = gem_pool(x, p)
            self.assertTrue(bool((current >= previous - 1e-12).all()))
            previous = current

    def test_large_p_does_not_overflow(self):
        x = torch.full((1, 2, 2), 1e6)
        self.assertTrue(math.isfinite(gem_pool(x, 100.0).item()))

    def test_trainable_p_is_a_parameter(self):
        self.assertIn("p", dict(GeM(GeMConfig(trainable=True)).named_parameters()))
        self.assertNotIn("p", dict(GeM(GeMConfig()).named_parameters()))
        self.assertIn("p", dict(GeM(GeMConfig()).named_buffers()))

    def test_config(self):
        with self.assertRaises(ConfigError):
            GeMConfig(p=0.5)
        with self.assertRaises(ConfigError):
            BackboneConfig.from_text("16:1:2,abc")
        config = BackboneConfig.from_text("16:1:2,32:2:1")
        self.assertEqual(config.to_text(), "16:1:2,32:2:1")
        self.assertEqual(config.output_size(64, 313), (16, 78))


class TestBirdClassifier(unittest.TestCase):

    def test_paper_scale_shapes(self):
        model = _bird(n_classes=397, backbone=BackboneConfig())
        with torch.no_grad():
            logits = model.forward_train(torch.randn(2, 6, 256, 500))
        self.assertEqual(tuple(logits.shape), (2, 397))

    def test_repeated_segments_match_inference(self):
        model = _bird(backbone=BackboneConfig())
        segment = torch.randn(64, 52) * 10 - 40
        with torch.no_grad():
            train = model.forward_train(segment.expand(1, 6, 64, 52))
            infer = model.logits_infer(segment)
        torch.testing.assert_close(train[0], infer, rtol=1e-5, atol=1e-5)

    def test_segment_count(self):
        with self.assertRaises(DataError):
            _bird().forward_train(torch.zeros(1, 5, 8, 12))

    def test_input_too_small(self):
        with self.assertRaises(DataError):
            _bird(backbone=BackboneConfig()).forward_infer(torch.zeros(4, 4))

    def test_zero_head_gives_one_half(self):
        model = _bird()
        with torch.no_grad():
            model.head.weight.zero_()
            model.head.bias.zero_()
            probs = model.forward_infer(torch.randn(3, 8, 12))
        torch.testing.assert_close(probs, torch.full((3, 4), 0.5))

    def test_random_inputs_give_finite_outputs(self):
        model = _bird(seed=3)
        generator = torch.Generator().manual_seed(1)
        with torch.no_grad():
            for scale in (1.0, 30.0, 100.0):
                x = torch.randn(2, 6, 8, 12, generator=generator) * scale - 50.0
                self.assertTrue(bool(torch.isfinite(model.forward_train(x)).all()))
                probs = model.forward_infer(x[0])
                self.assertTrue(bool(torch.isfinite(probs).all()))
                self.assertTrue(bool(((probs >= 0) & (probs <= 1)).all()))

    def test_seeded_init(self):
        a, b, c = _bird(seed=5).state_dict(), _bird(seed=5).state_dict(), _bird(seed=6).state_dict()
        for name in a:
            self.assertTrue(torch.equal(a[name], b[name]))
        self.assertTrue(any(not torch.equal(a[name], c[name]) for name in a))
        x = torch.randn(2, 6, 8, 12)
        with torch.no_grad():
            self.assertTrue(torch.equal(_bird(seed=5).forward_train(x), _bird(seed=5).forward_train(x)))


class TestBinaryClassifier(unittest.TestCase):

    def test_uniform_attention_on_constant_time(self):
        pool = AttentionPool(3)
        h = torch.randn(2, 3, 1).expand(2, 3, 7)
        torch.testing.assert_close(pool.weights(h), torch.full((2, 7), 1 / 7))
        pooled, _ = pool(h)
        torch.testing.assert_close(pooled, h[:, :, 0])

    def test_shapes(self):
        model = BinaryClassifier(TINY, seed=1)
        with torch.no_grad():
            self.assertEqual(tuple(model(torch.randn(3, 8, 20)).shape), (3,))
            self.assertEqual(tuple(model(torch.randn(8, 20)).shape), ())
            weights = model.attention_weights(torch.randn(8, 20))
        self.assertEqual(tuple(weights.shape), (10,))
        self.assertAlmostEqual(weights.sum().item(), 1.0, places=5)

    def test_pooling_ignores_frame_order(self):
        model = BinaryClassifier(TINY, seed=2)
        generator = torch.Generator().manual_seed(3)
        h = torch.randn(2, 4, 9, generator=generator)
        perm = torch.randperm(9, generator=generator)
        with torch.no_grad():
            pooled, weights = model.pool(h)
            shuffled, shuffled_weights = model.pool(h[:, :, perm])
        torch.testing.assert_close(shuffled, pooled, rtol=1e-6, atol=1e-6)
        torch.testing.assert_close(shuffled_weights, weights[:, perm])

    def test_random_inputs_give_finite_outputs(self):
        model = BinaryClassifier(TINY, seed=4)
        generator = torch.Generator().manual_seed(5)
        with torch.no_grad():
            for scale in (1.0, 30.0, 100.0):
                probs = model(torch.randn(3, 8, 20, generator=generator) * scale - 50.0)
                self.assertTrue(bool(torch.isfinite(probs).all()))
                self.assertTrue(bool(((probs >= 0) & (probs <= 1)).all()))

    def test_too_small(self):
        with self.assertRaises(DataError):
            BinaryClassifier(BackboneConfig()).forward(torch.zeros(1, 4, 4))


class TestLoss(unittest.TestCase):

    def test_ln2(self):
        loss = weighted_bce_loss(torch.zeros(1, 1, dtype=torch.float64), torch.ones(1, 1, dtype=torch.float64))
        self.assertLess(abs(loss.item() - math.log(2.0)), 1e-9)

    def test_confident_positive(self):
        loss = weighted_bce_loss(torch.tensor([[50.0]], dtype=torch.float64), torch.ones(1, 1, dtype=torch.float64))
        self.assertLess(loss.item(), 1e-20)

    def test_weights(self):
        logits = torch.zeros(2, 3, dtype=torch.float64)
        targets = torch.ones(2, 3, dtype=torch.float64)
        loss = weighted_bce_loss(logits, targets, torch.tensor([1.0, 0.0], dtype=torch.float64))
        self.assertAlmostEqual(loss.item(), math.log(2.0) / 2, places=12)

    def test_never_negative(self):
        generator = torch.Generator().manual_seed(6)
        for _ in range(20):
            logits = torch.randn(4, 7, generator=generator, dtype=torch.float64) * 20
            targets = torch.rand(4, 7, generator=generator, dtype=torch.float64)
            weights = torch.rand(4, generator=generator, dtype=torch.float64) * 3
            self.assertGreaterEqual(weighted_bce_loss(logits, targets, weights).item(), 0.0)

    def test_errors(self):
        with self.assertRaises(DataError):
            weighted_bce_loss(torch.zeros(2, 3), torch.zeros(2, 2))
        with self.assertRaises(NumericError):
            weighted_bce_loss(torch.tensor([[float("nan")]]), torch.zeros(1, 1))
        with self.assertRaises(DataError):
            weighted_bce_loss(torch.zeros(1, 1), torch.zeros(1, 1), torch.tensor([-1.0]))


class TestGradients(unittest.TestCase):

    def setUp(self):
        generator = torch.Generator().manual_seed(0)
        self.inputs = torch.randn(2, 6, 8, 12, generator=generator, dtype=torch.float64) * 10 - 40
        self.targets = torch.tensor([[1.0, 0.01, 0.01, 1.0], [0.01, 1.0, 0.01, 0.01]], dtype=torch.float64)
        self.weights = torch.tensor([1.0, 0.6], dtype=torch.float64)

    def test_bird_fixed_p(self):
        self.assertLess(finite_diff_check(_bird(), self.inputs, self.targets, self.weights), 1e-4)

    def test_bird_trainable_p(self):
        errors = gradient_errors(_bird(trainable=True), self.inputs, self.targets, self.weights)
        self.assertIn("gem.p", errors)
        self.assertLess(max(errors.values()), 1e-4)

    def test_zero_input_head_bias(self):
        errors = gradient_errors(_bird(), torch.zeros_like(self.inputs), self.targets)
        self.assertLess(errors["head.bias"], 1e-4)

    def test_binary_attention_path(self):
        inputs = self.inputs[:, 0]
        targets = torch.tensor([1.0, 0.0], dtype=torch.float64)
        errors = gradient_errors(BinaryClassifier(TINY, seed=2), inputs, targets)
        self.assertIn("attention.score.weight", errors)
        self.assertLess(max(errors.values()), 1e-4)

    def test_check_leaves_model_untouched(self):
        model = _bird()
        before = {k: v.clone() for k, v in model.state_dict().items()}
        finite_diff_check(model, self.inputs, self.targets)
        for name, tensor in model.state_dict().items():
            self.assertTrue(torch.equal(tensor, before[name]))


class TestCheckpoints(unittest.TestCase):

    def test_round_trip(self):
        melspec = MelSpecConfig.preset("S2")
        model = _bird(seed=3, trainable=True, melspec=melspec)
        loaded = params_from_bytes(encode_params(model), kind="bird", melspec=melspec)
        self.assertEqual(loaded.labels, model.labels)
        for name, tensor in model.state_dict().items():
            self.assertTrue(torch.equal(loaded.state_dict()[name], tensor))
        x = torch.randn(2, 8, 12)
        with torch.no_grad():
            self.assertTrue(torch.equal(loaded.forward_infer(x), model.forward_infer(x)))

    def test_binary_round_trip_on_disk(self):
        model = BinaryClassifier(TINY, seed=4)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "m", "binary.params")
            save_params(model, path)
            loaded = load_params(path, kind="binary")
            with self.assertRaises(DataError) as ctx:
                load_params(path, kind="bird")
            self.assertIn(path, str(ctx.exception))
        x = torch.randn(8, 20)
        with torch.no_grad():
            self.assertTrue(torch.equal(loaded(x), model(x)))

    def test_corrupt_checkpoints(self):
        data = encode_params(_bird(melspec=MelSpecConfig.preset("S2")))
        config, state = decode_params(data)
        self.assertEqual(config["kind"], "bird")
        self.assertIn("head.weight", state)
        digest_end = 4 + 2 + 32
        broken = [
            b"XXXX" + data[4:],
            data[:4] + b"\x09\x00" + data[6:],
            data[:digest_end + 4] + b"[" + data[digest_end + 5:],
            data[:-3],
            data + b"\x00",
        ]
        for bad in broken:
            with self.assertRaises(DataError):
                params_from_bytes(bad)
        with self.assertRaises(DataError):
            params_from_bytes(data, melspec=MelSpecConfig.preset("S1"))
        with self.assertRaises(DataError):
            load_params("/nonexistent/model.params")


if __name__ == "__main__":
    unittest.main()
