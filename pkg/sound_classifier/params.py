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
Versioned binary checkpoint format.

Layout (little endian): magic b"SSCP", uint16 format version, 32-byte SHA-256
digest of the model config JSON, uint32 length + UTF-8 config JSON, uint32
tensor count, then per tensor in declaration order: uint16 name length + name,
uint32 ndim, ndim x uint32 shape, float32 data.
"""

import json
import struct
import hashlib
import logging
from collections import OrderedDict

import numpy as np
import torch

from soundscape.errors import DataError
from soundscape.utils import Utils

logger = logging.getLogger(__name__)

MAGIC = b"SSCP"
VERSION = 1
DIGEST_SIZE = 32


def _config_bytes(config):
    return json.dumps(config, sort_keys=True).encode("utf-8")


def encode_params(model):
    """
    Serializes model.describe() and every tensor of model.state_dict()

    :returns: Checkpoint bytes
    :rtype: bytes
    """
    config = _config_bytes(model.describe())
    state = model.state_dict()
    chunks = [MAGIC, struct.pack("<H", VERSION), hashlib.sha256(config).digest(),
              struct.pack("<I", len(config)), config, struct.pack("<I", len(state))]
    for name, tensor in state.items():
        data = tensor.detach().cpu().numpy().astype("<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<I{data.ndim}I", data.ndim, *data.shape))
        chunks.append(data.tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, size):
        if self.offset + size > len(self.data):
            raise DataError(f"checkpoint truncated at byte {self.offset}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_params(data):
    """
    Parses checkpoint bytes

    :returns: The model config and an ordered mapping of tensor name to tensor
    :rtype: tuple
    """
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise DataError("not a checkpoint file (bad magic bytes)")
    version, = reader.unpack("<H")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}, expected {VERSION}")
    digest = reader.take(DIGEST_SIZE)
    size, = reader.unpack("<I")
    config_bytes = reader.take(size)
    if hashlib.sha256(config_bytes).digest() != digest:
        raise DataError("checkpoint config digest mismatch")
    config = json.loads(config_bytes.decode("utf-8"))
    count, = reader.unpack("<I")
    state = OrderedDict()
    for _ in range(count):
        length, = reader.unpack("<H")
        name = reader.take(length).decode("utf-8")
        ndim, = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}I")
        n_values = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(reader.take(4 * n_values), dtype="<f4").reshape(shape)
        state[name] = torch.from_numpy(values.astype(np.float32))
    if reader.offset != len(data):
        raise DataError(f"{len(data) - reader.offset} trailing bytes after the last tensor")
    return config, state


def _model_class(kind):
    from sound_classifier.bird.model import BirdClassifier
    from sound_classifier.binary.model import BinaryClassifier
    classes = {BirdClassifier.kind: BirdClassifier, BinaryClassifier.kind: BinaryClassifier}
    try:
        return classes[kind]
    except KeyError:
        raise DataError(f"unknown model kind '{kind}' in checkpoint") from None


def params_from_bytes(data, kind=None, melspec=None):
    """
    Rebuilds a model from checkpoint bytes

    :param kind: Expected model kind ('bird' or 'binary'); None accepts either
    :param melspec: MelSpecConfig the caller will feed; a checkpoint trained on another setting is rejected
    """
    config, state = decode_params(data)
    if kind is not None and config.get("kind") != kind:
        raise DataError(f"checkpoint holds a '{config.get('kind')}' model, expected '{kind}'")
    if melspec is not None and config.get("melspec") not in (None, melspec.to_dict()):
        raise DataError("checkpoint was trained on a different melspec configuration")
    model = _model_class(config.get("kind")).from_config(config)
    expected = model.state_dict()
    if list(expected) != list(state):
        raise DataError("checkpoint tensors do not match the model layout")
    for name, tensor in state.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise DataError(f"tensor '{name}' has shape {tuple(tensor.shape)}, expected {tuple(expected[name].shape)}")
    model.load_state_dict(state)
    model.eval()
    return model


def save_params(model, path):
    Utils.atomic_write_bytes(path, encode_params(model))
    logger.info(f"Saved {model.kind} model to {path}")


def load_params(path, kind=None, melspec=None):
    try:
        with open(path, "rb") as params_file:
            data = params_file.read()
    except OSError as e:
        raise DataError(f"{path}: cannot read checkpoint ({e.strerror})") from e
    try:
        return params_from_bytes(data, kind, melspec)
    except DataError as e:
        raise DataError(f"{path}: {e}") from e
