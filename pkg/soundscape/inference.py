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
Window-by-window soundscape inference for the bird and binary models.
"""

import io
import logging

import numpy as np
import pandas as pd
import torch
from joblib import Parallel, delayed

from soundscape.audio_dsp import compute_melspec
from soundscape.datamodel import PredictionMatrix, parse_row_id, row_id
from soundscape.errors import DataError

logger = logging.getLogger(__name__)

BINARY_COLUMNS = ["row_id", "p_binary"]


def _check_inputs(model, soundscape, melspec):
    if soundscape.sample_rate != melspec.sample_rate:
        raise DataError(f"{soundscape.id}: sample rate {soundscape.sample_rate} Hz, "
                        f"model expects {melspec.sample_rate} Hz")
    if getattr(model, "melspec", None) is not None and model.melspec != melspec:
        raise DataError(f"{soundscape.id}: model was trained on a different melspec configuration")


def window_specs(soundscape, melspec):
    """
    Log-mel spectrograms of the consecutive 5 s windows, shape rows x mel x frames
    """
    return np.stack([compute_melspec(soundscape.window(i), melspec).values for i in range(soundscape.n_windows)])


def _run_batches(fn, specs, batch_size):
    outputs = []
    with torch.no_grad():
        for start in range(0, len(specs), batch_size):
            batch = torch.from_numpy(specs[start:start + batch_size].astype(np.float32))
            outputs.append(fn(batch).double().numpy())
    return np.concatenate(outputs)


def predict_soundscape(model, soundscape, melspec, batch_size=32):
    """
    Bird probabilities for every 5 s window of a soundscape

    :param model: BirdClassifier
    :param soundscape: Soundscape
    :param melspec: MelSpecConfig the model was trained with
    :returns: Matrix with floor(duration / 5 s) rows and one column per class
    :rtype: PredictionMatrix
    """
    _check_inputs(model, soundscape, melspec)
    model.eval()
    values = _run_batches(model.forward_infer, window_specs(soundscape, melspec), batch_size)
    return PredictionMatrix(soundscape.id, np.clip(values, 0.0, 1.0))


def predict_binary(model, soundscape, melspec, batch_size=32):
    """
    Bird presence probability for every 5 s window; the detector is length
    agnostic, so windows are scored directly.

    :rtype: numpy.ndarray
    """
    _check_inputs(model, soundscape, melspec)
    model.eval()
    values = _run_batches(model, window_specs(soundscape, melspec), batch_size)
    return np.clip(values.reshape(-1), 0.0, 1.0)


def predict_all(fn, model, soundscapes, melspec, jobs=1):
    """
    Applies predict_soundscape or predict_binary to every soundscape
    """
    return Parallel(n_jobs=jobs, prefer="threads")(delayed(fn)(model, s, melspec) for s in soundscapes)


def average_binary(predictions):
    """
    Mean of the per-row outputs of several binary models
    """
    if not predictions:
        raise DataError("No binary predictions to average")
    lengths = {len(p) for p in predictions}
    if len(lengths) != 1:
        raise DataError(f"Binary predictions differ in length: {sorted(lengths)}")
    return np.mean(np.stack([np.asarray(p, dtype=np.float64) for p in predictions]), axis=0)


def binary_to_csv_text(soundscape_id, probs):
    frame = pd.DataFrame({"row_id": [row_id(soundscape_id, i) for i in range(len(probs))],
                          "p_binary": np.asarray(probs, dtype=np.float64)}, columns=BINARY_COLUMNS)
    return frame.to_csv(index=False)


def binary_from_csv_text(text):
    """
    :returns: Soundscape id and per-row presence probabilities
    :rtype: tuple
    """
    frame = pd.read_csv(io.StringIO(text), dtype={"row_id": str})
    if list(frame.columns) != BINARY_COLUMNS:
        raise DataError(f"Binary prediction CSV must have header {','.join(BINARY_COLUMNS)}")
    ids = {parse_row_id(r)[0] for r in frame["row_id"]}
    if len(ids) != 1:
        raise DataError(f"Binary prediction CSV must hold exactly one soundscape, found {sorted(ids)}")
    probs = frame["p_binary"].to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(probs)) or probs.min() < 0 or probs.max() > 1:
        raise DataError("Binary probabilities must be finite and within [0, 1]")
    return ids.pop(), probs
