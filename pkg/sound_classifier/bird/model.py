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

import torch
import torch.nn as nn

from soundscape.audio_dsp import MelSpecConfig
from soundscape.augment import N_PARTS
from soundscape.errors import DataError
from sound_classifier.layers import Backbone, BackboneConfig, GeM, GeMConfig, init_params
from sound_classifier.bird.loss import weighted_bce_loss


class BirdClassifier(nn.Module):
    """
    Convolutional backbone, GeM over frequency and time, and a one-layer head.

    Training input is B x 6 x mel x frames: the backbone sees the B*6 five-second
    parts independently and the six feature maps of a recording are joined
    along time before pooling. Inference takes single five-second parts.
    """
    kind = "bird"

    def __init__(self, backbone, gem, n_classes, melspec=None, labels=None, seed=0):
        super().__init__()
        if n_classes < 1:
            raise DataError("bird classifier needs at least one class")
        if labels is not None and len(labels) != n_classes:
            raise DataError(f"{len(labels)} labels for {n_classes} classes")
        self.backbone_config = backbone
        self.gem_config = gem
        self.n_classes = n_classes
        self.melspec = melspec
        self.labels = tuple(labels) if labels is not None else None
        self.seed = seed
        self.backbone = Backbone(backbone)
        self.gem = GeM(gem)
        self.head = nn.Linear(backbone.feature_channels, n_classes)
        init_params(self, seed)

    def forward_train(self, x):
        if x.dim() != 4 or x.shape[1] != N_PARTS:
            raise DataError(f"training input must be B x {N_PARTS} x mel x frames, got {tuple(x.shape)}")
        batch, parts, mel, frames = x.shape
        features = self.backbone(x.reshape(batch * parts, mel, frames))
        _, channels, height, width = features.shape
        features = features.reshape(batch, parts, channels, height, width)
        features = features.permute(0, 2, 3, 1, 4).reshape(batch, channels, height, parts * width)
        return self.head(self.gem(features))

    def logits_infer(self, x):
        squeeze = x.dim() == 2
        logits = self.head(self.gem(self.backbone(x)))
        return logits[0] if squeeze else logits

    def forward_infer(self, x):
        """
        Class probabilities for one part (mel x frames) or a batch of parts
        """
        return torch.sigmoid(self.logits_infer(x))

    def forward(self, x):
        return self.forward_train(x)

    def loss(self, inputs, targets, weights=None):
        return weighted_bce_loss(self.forward_train(inputs), targets, weights)

    def describe(self):
        return {
            "kind": self.kind,
            "backbone": self.backbone_config.to_dict(),
            "gem": self.gem_config.to_dict(),
            "n_classes": self.n_classes,
            "melspec": self.melspec.to_dict() if self.melspec is not None else None,
            "labels": list(self.labels) if self.labels is not None else None,
            "seed": self.seed,
        }

    @classmethod
    def from_config(cls, config):
        return cls(BackboneConfig(**config["backbone"]), GeMConfig(**config["gem"]), config["n_classes"],
                   melspec=MelSpecConfig(**config["melspec"]) if config.get("melspec") else None,
                   labels=config.get("labels"), seed=config.get("seed", 0))
