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

from soundscape.augment import Augmenter
from soundscape.datamodel import LabelSpace
from soundscape.errors import DataError
from soundscape.utils import Utils
from sound_classifier.params import load_params, save_params
from sound_classifier.trainer import run_epochs, trace_to_csv
from sound_classifier.bird.data import batchGenerator, to_tensors, training_items
from sound_classifier.bird.model import BirdClassifier

logger = logging.getLogger(__name__)


def train_model(recordings, space, melspec, backbone, gem, train_cfg, loss_cfg, mixup, background,
                noise_bank=(), seed=0, jobs=1, progress=False):
    """
    Trains a bird classifier on 30 second crops split into six parts

    :param recordings: TrainRecording list
    :param space: LabelSpace of the classifier head
    :param noise_bank: Background waveforms for noise mixing
    :returns: The trained model and the per-epoch EpochStat trace
    :rtype: tuple
    """
    if not recordings:
        raise DataError("No training recordings")
    train_cfg.advisory_warnings()
    loss_cfg.advisory_warnings()
    torch.manual_seed(seed)
    items = training_items(recordings, space, loss_cfg)
    augmenter = Augmenter(mixup, background, noise_bank)
    model = BirdClassifier(backbone, gem, space.n_classes, melspec=melspec, labels=space.species_codes, seed=seed)
    logger.info(f"Training bird classifier on {len(items)} recordings, {space.n_classes} classes, seed {seed}")

    def make_batch(epoch, b, indices):
        specs, targets, weights = batchGenerator(items, indices, epoch, seed, train_cfg.crop_seconds,
                                                 melspec, augmenter, jobs)
        specs, targets = augmenter.mix_batch(specs, targets, Utils.rng(seed, 1, epoch, b))
        return to_tensors(specs, targets, weights)

    trace = run_epochs(model, train_cfg, len(items), make_batch, seed, desc="bird", progress=progress)
    return model, trace


class BIRD():
    """
    Trains and loads bird checkpoints under <model_dir>/<name>/
    """

    def __init__(self, run_config, name="bird"):
        self.config = run_config
        self.name = name
        self.model_dir = os.path.join(run_config.get("general", "model_dir"), name)

    def params_path(self, seed):
        return os.path.join(self.model_dir, f"bird_seed{seed}.params")

    def train(self, recordings, space, noise_bank=(), seed=None):
        seed = self.config.seed if seed is None else seed
        model, trace = train_model(recordings, space, self.config.melspec(), self.config.backbone(),
                                   self.config.gem(), self.config.train(), self.config.loss(),
                                   self.config.mixup(), self.config.background(), noise_bank=noise_bank,
                                   seed=seed, jobs=self.config.jobs, progress=self.config.progress)
        save_params(model, self.params_path(seed))
        Utils.atomic_write_text(os.path.join(self.model_dir, f"loss_seed{seed}.csv"), trace_to_csv(trace))
        Utils.atomic_write_text(os.path.join(self.model_dir, "labels.txt"), space.to_text())
        self.config.dump(os.path.join(self.model_dir, "run_config.ini"))
        return model, trace

    def load(self, path):
        model = load_params(path, kind=BirdClassifier.kind, melspec=self.config.melspec())
        if model.labels is None:
            raise DataError(f"{path}: checkpoint carries no label space")
        return model, LabelSpace(model.labels)
