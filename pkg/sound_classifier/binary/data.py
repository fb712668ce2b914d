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

import numpy as np
import torch
from joblib import Parallel, delayed

from soundscape.audio_dsp import compute_melspec
from soundscape.augment import crop_waveform
from soundscape.errors import DataError
from soundscape.utils import Utils


def binary_items(clips):
    """
    Pairs every clip with its presence target; both classes must occur
    """
    labels = {clip.has_bird for clip in clips}
    if labels != {True, False}:
        raise DataError(f"Binary training needs clips with and without birds, found only has_bird={labels}")
    return [(clip, np.array([1.0 if clip.has_bird else 0.0])) for clip in clips]


def prepare_clip(clip, clip_seconds, melspec, rng):
    waveform = crop_waveform(clip.samples, int(round(clip_seconds * clip.sample_rate)), rng)
    return compute_melspec(waveform, melspec).values


def batchGenerator(items, indices, epoch, seed, clip_seconds, melspec, jobs=1):
    specs = Parallel(n_jobs=jobs)(
        delayed(prepare_clip)(items[i][0], clip_seconds, melspec, Utils.rng(seed, 0, epoch, i))
        for i in indices)
    return specs, [items[i][1] for i in indices]


def to_tensors(specs, targets):
    inputs = torch.from_numpy(np.stack(specs).astype(np.float32))
    return inputs, torch.from_numpy(np.concatenate(targets).astype(np.float32)), None
