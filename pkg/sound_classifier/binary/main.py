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
import logging

import torch

from soundscape.augment import Augmenter, BackgroundConfig
from soundscape.utils import Utils
from sound_classifier.params import load_params, save_params
from sound_classifier.trainer import run_epochs, trace_to_csv
from sound_classifier.binary.data import batchGenerator, binary_items, to_tensors
from sound_classifier.binary.model import BinaryClassifier

logger = logging.getLogger(__name__)


def train_binary(clips, melspec, backbone, train_cfg, mixup, seed=0, jobs=1, progress=False):
    """
    Trains the bird presence detector on random crops of presence/absence
    clips. Mixup joins clips between recordings (label union); there is no
    label smoothing and no rating weight.

    :param clips: BinaryClip list holding both classes
    :param train_cfg: BinaryTrainConfig, crop_seconds is the clip length
    :returns: The trained model and the per-epoch EpochStat trace
    :rtype: tuple
    """
    items = binary_items(clips)
    train_cfg.advisory_warnings()
    torch.manual_seed(seed)
    augmenter = Augmenter(mixup, BackgroundConfig(p=0.0))
    model = BinaryClassifier(backbone, melspec=melspec, seed=seed)
    logger.info(f"Training binary classifier on {len(items)} clips, seed {seed}")

    def make_batch(epoch, b, indices):
        specs, targets = batchGenerator(items, indices, epoch, seed, train_cfg.crop_seconds, melspec, jobs)
        specs, targets = augmenter.mix_batch(specs, targets, Utils.rng(seed, 1, epoch, b), segmented=False)
        return to_tensors(specs, targets)

    trace = run_epochs(model, train_cfg, len(items), make_batch, seed, desc="binary", progress=progress)
    return model, trace


class BINARY():
    """
    Trains and loads binary checkpoints under <model_dir>/<name>/
    """

    def __init__(self, run_config, name="binary"):
        self.config = run_config
        self.name = name
        self.model_dir = os.path.join(run_config.get("general", "model_dir"), name)

    def params_path(self, seed):
        return os.path.join(self.model_dir, f"binary_seed{seed}.params")

    def train(self, clips, seed=None):
        seed = self.config.seed if seed is None else seed
        model, trace = train_binary(clips, self.config.melspec(), self.config.binary_backbone(),
                                    self.config.binary_train(), self.config.mixup(), seed=seed,
                                    jobs=self.config.jobs, progress=self.config.progress)
        save_params(model, self.params_path(seed))
        Utils.atomic_write_text(os.path.join(self.model_dir, f"loss_seed{seed}.csv"), trace_to_csv(trace))
        self.config.dump(os.path.join(self.model_dir, "run_config.ini"))
        return model, trace

    def load(self, path):
        return load_params(path, kind=BinaryClassifier.kind, melspec=self.config.melspec())
