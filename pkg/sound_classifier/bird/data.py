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

import logging

import numpy as np
import torch
from joblib import Parallel, delayed

from soundscape.audio_dsp import compute_melspec
from soundscape.augment import crop_random_window, segment_six
from soundscape.errors import DataError
from soundscape.utils import Utils

logger = logging.getLogger(__name__)

MAX_RATING = 5.0


def build_targets(rec, space, eps):
    """
    Multi-hot union of primary and secondary labels with one-sided smoothing:
    positives are 1, every other class is eps.
    """
    target = np.full(space.n_classes, float(eps))
    for code in rec.labels:
        target[space.index(code)] = 1.0
    return target


def sample_weight(rec, max_rating=MAX_RATING):
    return rec.rating / max_rating


def training_items(recordings, space, loss_cfg):
    """
    Pairs every recording with its target and weight; recordings rated 0 carry
    no loss and are left out.
    """
    items = []
    for rec in recordings:
        weight = sample_weight(rec) if loss_cfg.use_rating_weights else 1.0
        if weight == 0:
            continue
        items.append((rec, build_targets(rec, space, loss_cfg.label_smoothing), weight))
    skipped = len(recordings) - len(items)
    if skipped:
        logger.info(f"Skipped {skipped} recordings with rating 0")
    if not items:
        raise DataError("No training recordings with a non-zero weight")
    return items


def prepare_sample(rec, crop_seconds, melspec, augmenter, rng):
    """
    Random crop, background mixing, log-mel spectrogram and six-way split of one recording
    """
    waveform = crop_random_window(rec, crop_seconds, rng)
    waveform = augmenter.add_background(waveform, rng)
    return segment_six(compute_melspec(waveform, melspec), rec.id)


def batchGenerator(items, indices, epoch, seed, crop_seconds, melspec, augmenter, jobs=1):
    """
    Builds the augmented model inputs for the items at indices. Each sample
    draws from its own stream (seed, epoch, index), so results do not depend
    on jobs.
    """
    specs = Parallel(n_jobs=jobs)(
        delayed(prepare_sample)(items[i][0], crop_seconds, melspec, augmenter, Utils.rng(seed, 0, epoch, i))
        for i in indices)
    targets = [items[i][1] for i in indices]
    weights = [items[i][2] for i in indices]
    return specs, targets, weights


def to_tensors(specs, targets, weights):
    inputs = torch.from_numpy(np.stack([s.parts for s in specs]).astype(np.float32))
    return (inputs, torch.from_numpy(np.stack(targets).astype(np.float32)),
            torch.tensor(weights, dtype=torch.float32))
