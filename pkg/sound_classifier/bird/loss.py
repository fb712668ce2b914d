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
import torch.nn.functional as F

from soundscape.errors import DataError, NumericError


def weighted_bce_loss(logits, targets, weights=None):
    """
    Quality-weighted binary cross-entropy: mean over classes, times the sample
    weight, then mean over the batch. Uses the logit form, so large logits do
    not overflow.

    :param logits: Tensor of shape B x C
    :param targets: Tensor of shape B x C with values in [0, 1]
    :param weights: Tensor of shape B, non-negative; None weighs every sample 1
    :returns: Scalar tensor
    """
    if logits.shape != targets.shape:
        raise DataError(f"logits {tuple(logits.shape)} and targets {tuple(targets.shape)} differ in shape")
    if torch.isnan(logits).any() or torch.isnan(targets).any():
        raise NumericError("NaN in loss input")
    if weights is None:
        weights = torch.ones(logits.shape[0], dtype=logits.dtype)
    if weights.shape != logits.shape[:1]:
        raise DataError(f"expected {logits.shape[0]} sample weights, got shape {tuple(weights.shape)}")
    if (weights < 0).any():
        raise DataError("sample weights must be non-negative")
    per_sample = F.binary_cross_entropy_with_logits(logits, targets, reduction="none").mean(dim=1)
    return (per_sample * weights).mean()
