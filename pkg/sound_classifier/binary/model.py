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
import torch.nn.functional as F

from soundscape.audio_dsp import MelSpecConfig
from soundscape.errors import DataError, NumericError
from sound_classifier.layers import AttentionPool, Backbone, BackboneConfig, init_params


class BinaryClassifier(nn.Module):
    """
    Bird presence detector: backbone feature map, mean over frequency,
    attention pooling over time and a single logit. Works on spectrograms of
    any length the backbone accepts.
    """
    kind = "binary"

    def __init__(self, backbone, melspec=None, seed=0):
        super().__init__()
        self.backbone_config = backbone
        self.melspec = melspec
        self.seed = seed
        self.backbone = Backbone(backbone)
        self.attention = AttentionPool(backbone.feature_channels)
        self.head = nn.Linear(backbone.feature_channels, 1)
        init_params(self, seed)

    def time_features(self, x):
        return self.backbone(x).mean(dim=2)

    def attention_weights(self, x):
        weights = self.attention.weights(self.time_features(x))
        return weights[0] if x.dim() == 2 else weights

    def pool(self, h):
        """
        :param h: Time features of shape N x channels x time
        :returns: Pooled vectors N x channels and attention weights N x time
        """
        return self.attention(h)

    def logits(self, x):
        pooled, _ = self.pool(self.time_features(x))
        logits = self.head(pooled).squeeze(-1)
        return logits[0] if x.dim() == 2 else logits

    def forward(self, x):
        return torch.sigmoid(self.logits(x))

    def loss(self, inputs, targets, weights=None):
        logits = self.logits(inputs)
        targets = targets.reshape(logits.shape).to(logits.dtype)
        if torch.isnan(logits).any():
            raise NumericError("NaN in binary logits")
        if weights is None:
            return F.binary_cross_entropy_with_logits(logits, targets)
        if weights.shape != logits.shape:
            raise DataError(f"expected {logits.numel()} sample weights, got shape {tuple(weights.shape)}")
        return (F.binary_cross_entropy_with_logits(logits, targets, reduction="none") * weights).mean()

    def describe(self):
        return {
            "kind": self.kind,
            "backbone": self.backbone_config.to_dict(),
            "melspec": self.melspec.to_dict() if self.melspec is not None else None,
            "seed": self.seed,
        }

    @classmethod
    def from_config(cls, config):
        return cls(BackboneConfig(**config["backbone"]),
                   melspec=MelSpecConfig(**config["melspec"]) if config.get("melspec") else None,
                   seed=config.get("seed", 0))
