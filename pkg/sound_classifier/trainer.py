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
Optimizer, learning-rate schedule and the epoch loop shared by the bird and
binary trainers.
"""

import math
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from soundscape.errors import ConfigError, NumericError
from soundscape.utils import Utils

logger = logging.getLogger(__name__)

ADVISORY_EPOCHS = (11, 20)
ADVISORY_BATCH_SIZE = (16, 32)
ADVISORY_SMOOTHING = (0.01, 0.025)
MAX_SMOOTHING = 0.1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 11
    batch_size: int = 16
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    crop_seconds: float = 30.0
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"train: epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"train: batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.lr_min <= self.lr_max:
            raise ConfigError(f"train: need 0 < lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")
        if self.crop_seconds <= 0:
            raise ConfigError(f"train: crop length must be positive, got {self.crop_seconds}")

    def advisory_warnings(self):
        if not ADVISORY_EPOCHS[0] <= self.epochs <= ADVISORY_EPOCHS[1]:
            logger.warning(f"epochs={self.epochs} is outside the usual range {ADVISORY_EPOCHS[0]}-{ADVISORY_EPOCHS[1]}")
        if not ADVISORY_BATCH_SIZE[0] <= self.batch_size <= ADVISORY_BATCH_SIZE[1]:
            logger.warning(f"batch_size={self.batch_size} is outside the usual range "
                           f"{ADVISORY_BATCH_SIZE[0]}-{ADVISORY_BATCH_SIZE[1]}")


@dataclass(frozen=True)
class BinaryTrainConfig(TrainConfig):
    crop_seconds: float = 10.0


@dataclass(frozen=True)
class LossConfig:
    label_smoothing: float = 0.01
    use_rating_weights: bool = True

    def __post_init__(self):
        if not 0 <= self.label_smoothing <= MAX_SMOOTHING:
            raise ConfigError(f"loss: label_smoothing must lie in [0, {MAX_SMOOTHING}], got {self.label_smoothing}")

    def advisory_warnings(self):
        if self.label_smoothing and not ADVISORY_SMOOTHING[0] <= self.label_smoothing <= ADVISORY_SMOOTHING[1]:
            logger.warning(f"label_smoothing={self.label_smoothing} is outside the usual range "
                           f"{ADVISORY_SMOOTHING[0]}-{ADVISORY_SMOOTHING[1]}")


@dataclass(frozen=True)
class EpochStat:
    epoch: int
    loss: float
    lr: float


def cosine_lr(t, total, lr_max, lr_min):
    """
    Cosine annealing from lr_max at t=0 to lr_min at t=total
    """
    if total <= 0:
        raise ConfigError(f"cosine schedule needs a positive horizon, got {total}")
    if not 0 <= t <= total:
        raise ConfigError(f"schedule step {t} outside [0, {total}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total))


def make_optimizer(model, cfg):
    return torch.optim.Adam(model.parameters(), lr=cfg.lr_max, betas=tuple(cfg.adam_betas),
                            eps=cfg.adam_eps, weight_decay=cfg.weight_decay)


def trace_to_csv(trace):
    frame = pd.DataFrame([(s.epoch, repr(s.loss), repr(s.lr)) for s in trace], columns=["epoch", "loss", "lr"])
    return frame.to_csv(index=False)


def run_epochs(model, cfg, n_items, make_batch, seed, desc="train", progress=False):
    """
    Runs the epoch loop: seeded shuffle, one optimizer step per batch, learning
    rate from the cosine schedule stepped per epoch.

    :param model: Module with a loss(inputs, targets, weights) method
    :param cfg: TrainConfig
    :param n_items: Number of training items
    :param make_batch: Callable (epoch, batch_index, item_indices) -> (inputs, targets, weights)
    :param seed: Seed of the shuffle streams
    :returns: Per-epoch EpochStat list
    :rtype: list
    """
    optimizer = make_optimizer(model, cfg)
    model.train()
    trace = []
    for epoch in tqdm(range(cfg.epochs), desc=desc, disable=not progress):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = Utils.rng(seed, 2, epoch).permutation(n_items)
        losses = []
        for b, start in enumerate(range(0, n_items, cfg.batch_size)):
            inputs, targets, weights = make_batch(epoch, b, order[start:start + cfg.batch_size])
            optimizer.zero_grad()
            loss = model.loss(inputs, targets, weights)
            if not torch.isfinite(loss):
                raise NumericError(f"{desc}: loss became {loss.item()} in epoch {epoch}, batch {b}; "
                                   f"try a lower lr_max (now {cfg.lr_max})")
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        stat = EpochStat(epoch, float(np.mean(losses)), lr)
        logger.info(f"{desc} epoch {epoch}: loss {stat.loss:.6f}, lr {lr:.3g}")
        trace.append(stat)
    model.eval()
    return trace
