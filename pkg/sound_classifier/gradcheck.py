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
Central finite-difference verification of model gradients in double precision.
"""

import copy
import logging

import numpy as np
import torch

logger = logging.getLogger(__name__)

REL_FLOOR = 1e-4


def _double(value):
    return value.detach().to(torch.float64) if value is not None else None


def gradient_errors(model, inputs, targets, weights=None, epsilon=1e-5, samples_per_tensor=6, seed=0):
    """
    Compares autograd gradients of model.loss with central differences
    (f(theta + eps) - f(theta - eps)) / (2 eps) on a random subsample of the
    entries of every parameter. The model itself is not modified.

    :returns: Mapping of parameter name to its maximum relative error |a - n| / max(|a|, |n|, 1e-4)
    :rtype: dict
    """
    model = copy.deepcopy(model).double()
    model.eval()
    inputs, targets, weights = _double(inputs), _double(targets), _double(weights)
    model.zero_grad()
    model.loss(inputs, targets, weights).backward()
    rng = np.random.default_rng(seed)
    errors = {}
    for name, param in model.named_parameters():
        analytic = param.grad.detach().clone().reshape(-1)
        flat = param.data.view(-1)
        picks = rng.choice(flat.numel(), size=min(samples_per_tensor, flat.numel()), replace=False)
        worst = 0.0
        with torch.no_grad():
            for i in picks:
                original = flat[i].item()
                flat[i] = original + epsilon
                plus = model.loss(inputs, targets, weights).item()
                flat[i] = original - epsilon
                minus = model.loss(inputs, targets, weights).item()
                flat[i] = original
                numeric = (plus - minus) / (2.0 * epsilon)
                a = analytic[i].item()
                worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR))
        errors[name] = worst
        logger.debug(f"{name}: max relative gradient error {worst:.3g}")
    return errors


def finite_diff_check(model, inputs, targets, weights=None, epsilon=1e-5, samples_per_tensor=6, seed=0):
    """
    Maximum relative gradient error over all parameter groups
    """
    return max(gradient_errors(model, inputs, targets, weights, epsilon, samples_per_tensor, seed).values())
