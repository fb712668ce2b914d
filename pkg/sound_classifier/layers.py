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
Building blocks shared by the bird and binary classifiers: the convolutional
backbone, generalized-mean pooling, time attention pooling and the seeded
parameter initialization.
"""

import math
from dataclasses import dataclass, asdict
from typing import Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from soundscape.errors import ConfigError, DataError

KERNEL_SIZE = 3


@dataclass(frozen=True)
class BlockSpec:
    out_channels: int
    stride: int = 1
    pool: int = 2

    def __post_init__(self):
        if self.out_channels < 1 or self.stride < 1 or self.pool < 1:
            raise ConfigError(f"conv block needs positive channels, stride and pool, got {self}")


@dataclass(frozen=True)
class BackboneConfig:
    blocks: Tuple[BlockSpec, ...] = (BlockSpec(16), BlockSpec(32), BlockSpec(64))
    input_offset: float = -50.0
    input_scale: float = 20.0

    def __post_init__(self):
        blocks = tuple(b if isinstance(b, BlockSpec) else BlockSpec(**b) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if not blocks:
            raise ConfigError("model: backbone needs at least one conv block")
        if self.input_scale <= 0:
            raise ConfigError(f"model: input_scale must be positive, got {self.input_scale}")

    @property
    def feature_channels(self):
        return self.blocks[-1].out_channels

    @classmethod
    def from_text(cls, text, **kwargs):
        """
        Parses 'channels:stride:pool' blocks separated by commas, e.g. '16:1:2,32:1:2,64:1:2'
        """
        blocks = []
        for item in text.split(","):
            fields = item.strip().split(":")
            try:
                values = [int(v) for v in fields]
            except ValueError:
                raise ConfigError(f"model: cannot parse conv block '{item.strip()}'") from None
            if not 1 <= len(values) <= 3:
                raise ConfigError(f"model: conv block '{item.strip()}' must be channels[:stride[:pool]]")
            blocks.append(BlockSpec(*values))
        return cls(tuple(blocks), **kwargs)

    def to_text(self):
        return ",".join(f"{b.out_channels}:{b.stride}:{b.pool}" for b in self.blocks)

    def output_size(self, height, width):
        """
        Feature-map size after all blocks for an input of height x width
        """
        for block in self.blocks:
            height = (height - 1) // block.stride + 1
            width = (width - 1) // block.stride + 1
            height, width = height // block.pool, width // block.pool
        return height, width

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class GeMConfig:
    p: float = 3.0
    eps: float = 1e-6
    trainable: bool = False

    def __post_init__(self):
        if self.p < 1:
            raise ConfigError(f"model: GeM p must be >= 1, got {self.p}")
        if self.eps <= 0:
            raise ConfigError(f"model: GeM eps must be positive, got {self.eps}")

    def to_dict(self):
        return asdict(self)


def gem_pool(features, p, eps=1e-6):
    """
    Generalized mean over the last two dimensions: (mean(clamp(x, eps)**p))**(1/p).

    The maximum is factored out before raising to p, so large p cannot
    overflow; the result is identical for any positive scale, hence the
    detached maximum leaves the gradient exact.

    :param features: Tensor of shape ... x freq x time
    :param p: Exponent, float or 0-d tensor
    :returns: Tensor of shape ...
    """
    if features.dim() < 2 or min(features.shape[-2:]) < 1:
        raise DataError(f"GeM needs a non-empty freq x time map, got shape {tuple(features.shape)}")
    x = features.clamp(min=eps)
    scale = x.amax(dim=(-2, -1), keepdim=True).detach()
    pooled = (x / scale).pow(p).mean(dim=(-2, -1)).pow(1.0 / p)
    return pooled * scale.squeeze(-1).squeeze(-1)


class GeM(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        p = torch.tensor(float(config.p))
        if config.trainable:
            self.p = nn.Parameter(p)
        else:
            self.register_buffer("p", p)

    def forward(self, features):
        return gem_pool(features, self.p, self.config.eps)


class ConvBlock(nn.Module):
    def __init__(self, in_channels, spec):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, spec.out_channels, KERNEL_SIZE, stride=spec.stride, padding=1)
        self.activation = nn.Softplus()
        self.pool = nn.AvgPool2d(spec.pool) if spec.pool > 1 else nn.Identity()

    def forward(self, x):
        return self.pool(self.activation(self.conv(x)))


class Backbone(nn.Module):
    """
    Maps spectrograms of shape N x mel x frames (or mel x frames) to feature
    maps of shape N x channels x freq x time.
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        channels = [1] + [b.out_channels for b in config.blocks]
        self.blocks = nn.Sequential(*[ConvBlock(c, b) for c, b in zip(channels, config.blocks)])

    def forward(self, x):
        if x.dim() == 2:
            x = x.unsqueeze(0)
        if x.dim() != 3:
            raise DataError(f"backbone expects N x mel x frames, got shape {tuple(x.shape)}")
        height, width = self.config.output_size(x.shape[1], x.shape[2])
        if height < 1 or width < 1:
            raise DataError(f"spectrogram of {x.shape[1]} x {x.shape[2]} is too small for the backbone's downsampling")
        x = (x - self.config.input_offset) / self.config.input_scale
        return self.blocks(x.unsqueeze(1))


class AttentionPool(nn.Module):
    """
    Single-vector attention over time: a_t = softmax(w . h_t), pooled = sum_t a_t h_t
    """

    def __init__(self, channels):
        super().__init__()
        self.score = nn.Linear(channels, 1, bias=False)

    def weights(self, h):
        """
        :param h: Tensor of shape N x channels x time
        :returns: Attention weights of shape N x time
        """
        return F.softmax(self.score(h.transpose(1, 2)).squeeze(-1), dim=-1)

    def forward(self, h):
        weights = self.weights(h)
        return torch.einsum("nct,nt->nc", h, weights), weights


def init_params(module, seed):
    """
    Deterministic initialization: weights uniform in +-sqrt(3 / fan_in), biases
    zero, GeM exponents back to their configured value.
    """
    generator = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, param in module.named_parameters():
            if name.endswith("bias"):
                param.zero_()
            elif name.endswith(".p") or name == "p":
                continue
            else:
                fan_in = param[0].numel() if param.dim() > 1 else param.numel()
                bound = math.sqrt(3.0 / fan_in)
                sample = torch.rand(param.shape, generator=generator, dtype=torch.float64)
                param.copy_((2.0 * sample - 1.0) * bound)
        for sub in module.modules():
            if isinstance(sub, GeM):
                sub.p.fill_(float(sub.config.p))
    return module
