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
Row-wise F1 scoring, the CV-3 file selection, bootstrapped validation and
percentile optimization.
"""

import json
import logging
from dataclasses import dataclass, field, asdict
from typing import Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.metrics import f1_score
from sklearn.preprocessing import MultiLabelBinarizer

from soundscape.datamodel import NOCALL, parse_row_id
from soundscape.errors import ConfigError, DataError
from soundscape.postprocessing import check_percentile, percentile_threshold, to_submission_rows
from soundscape.utils import Utils

logger = logging.getLogger(__name__)

AVERAGES = {"micro": "micro", "row": "samples"}


def _with_sentinel(labels):
    return set(labels) if labels else {NOCALL}


def row_micro_f1(predictions, truth, average="micro"):
    """
    F1 over (row, label) decisions, empty label sets counting as the label 'nocall'

    :param predictions: SubmissionRow list
    :param truth: Mapping of row_id to label set for exactly the predicted rows
    :param average: 'micro' pools TP/FP/FN over all rows, 'row' averages per-row F1 scores
    :returns: F1 in [0, 1]
    :rtype: float
    """
    if average not in AVERAGES:
        raise ConfigError(f"Unknown F1 average '{average}', expected one of {sorted(AVERAGES)}")
    predicted = {row.row_id: row.birds for row in predictions}
    if len(predicted) != len(predictions):
        raise DataError("Duplicate row_id in predictions")
    if set(predicted) != set(truth):
        missing, extra = sorted(set(truth) - set(predicted)), sorted(set(predicted) - set(truth))
        raise DataError(f"Predicted rows do not match truth rows: missing {missing[:5]}, unexpected {extra[:5]}")
    if not truth:
        raise DataError("No rows to score")
    ids = sorted(truth)
    y_true = [_with_sentinel(truth[r]) for r in ids]
    y_pred = [_with_sentinel(predicted[r]) for r in ids]
    binarizer = MultiLabelBinarizer().fit(y_true + y_pred)
    return float(f1_score(binarizer.transform(y_true), binarizer.transform(y_pred),
                          average=AVERAGES[average], zero_division=0))


def truth_by_file(truth):
    files = {}
    for rid, labels in truth.items():
        files.setdefault(parse_row_id(rid)[0], {})[rid] = labels
    return files


def cv3_file_ids(truth):
    """
    Files of a truth mapping that contain at least one call
    """
    files = truth_by_file(truth)
    kept = sorted(sid for sid, rows in files.items() if any(rows.values()))
    if not kept:
        raise DataError("Every soundscape is free of calls, nothing left to validate on")
    logger.info(f"CV-3 keeps {len(kept)} of {len(files)} soundscapes")
    return kept


def select_cv3(soundscapes):
    """
    Drops the soundscapes whose truth rows are all empty
    """
    for s in soundscapes:
        if s.truth is None:
            raise DataError(f"{s.id}: no truth attached")
    kept = [s for s in soundscapes if any(s.truth)]
    if not kept:
        raise DataError("Every soundscape is free of calls, nothing left to validate on")
    return kept


@dataclass(frozen=True)
class BootstrapConfig:
    k: int = 10
    outer_fraction: float = 0.8
    j: int = 50
    inner_fraction: float = 0.65
    seed: int = 0
    average: str = "micro"

    def __post_init__(self):
        if self.k < 1 or self.j < 1:
            raise ConfigError(f"bootstrap: k and j must be >= 1, got {self.k}, {self.j}")
        for name in ("outer_fraction", "inner_fraction"):
            if not 0 < getattr(self, name) <= 1:
                raise ConfigError(f"bootstrap: {name} must lie in (0, 1], got {getattr(self, name)}")
        if self.average not in AVERAGES:
            raise ConfigError(f"bootstrap: unknown average '{self.average}'")


@dataclass(frozen=True)
class BootstrapReport:
    scores: Tuple[float, ...]
    average: float
    median: float
    min: float
    max: float
    std: float
    config: dict = field(default_factory=dict)

    @classmethod
    def from_scores(cls, scores, config=None):
        values = np.asarray(scores, dtype=np.float64)
        if values.size == 0:
            raise DataError("Bootstrap produced no scores")
        return cls(tuple(float(v) for v in values), float(values.mean()), float(np.median(values)),
                   float(values.min()), float(values.max()), float(values.std()), dict(config or {}))

    def to_json(self):
        return json.dumps({"average": self.average, "median": self.median, "min": self.min, "max": self.max,
                           "std": self.std, "n": len(self.scores), "config": self.config,
                           "scores": list(self.scores)}, indent=2, sort_keys=True) + "\n"

    def summary(self):
        return (f"F1 over {len(self.scores)} resamples: average {self.average:.4f}, median {self.median:.4f}, "
                f"min {self.min:.4f}, max {self.max:.4f}, std {self.std:.4f}")

    def plot_histogram(self, path, title="Bootstrapped F1"):
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        ax.hist(self.scores, bins=min(30, max(5, len(self.scores) // 10)), color="b", alpha=0.5)
        ax.axvline(self.average, color="k", linestyle="--", label=f"average {self.average:.3f}")
        ax.set_xlabel("row-wise micro F1")
        ax.set_ylabel("resamples")
        ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def _score_subset(rows_by_file, files, truth_files, average):
    rows = [row for sid in files for row in rows_by_file[sid]]
    truth = {rid: labels for sid in files for rid, labels in truth_files[sid].items()}
    return row_micro_f1(rows, truth, average)


def bootstrap_evaluate(prediction_fn, file_ids, truth, cfg, jobs=1):
    """
    k times: sample ceil(outer_fraction * n) files, let prediction_fn fit its
    thresholds on them; j times: sample ceil(inner_fraction * m) of those files
    and score them. Files are drawn without replacement within a sample.

    :param prediction_fn: Callable (outer file ids) -> mapping of file id to SubmissionRow list
    :param file_ids: Files to resample from, usually the CV-3 selection
    :param truth: Mapping of row_id to label set
    :param cfg: BootstrapConfig
    :rtype: BootstrapReport
    """
    files = sorted(set(file_ids))
    truth_files = truth_by_file(truth)
    unknown = [sid for sid in files if sid not in truth_files]
    if unknown:
        raise DataError(f"No truth rows for {unknown}")
    outer_size = Utils.sample_count(cfg.outer_fraction, len(files))
    if outer_size < 1:
        raise DataError("Bootstrap needs at least one file")
    inner_size = Utils.sample_count(cfg.inner_fraction, outer_size)
    rng = np.random.default_rng(cfg.seed)
    scores = []
    for _ in range(cfg.k):
        outer = sorted(rng.choice(files, size=outer_size, replace=False).tolist())
        rows_by_file = prediction_fn(outer)
        inner_samples = [sorted(rng.choice(outer, size=inner_size, replace=False).tolist()) for _ in range(cfg.j)]
        scores.extend(Parallel(n_jobs=jobs, prefer="threads")(
            delayed(_score_subset)(rows_by_file, inner, truth_files, cfg.average) for inner in inner_samples))
    return BootstrapReport.from_scores(scores, asdict(cfg))


def threshold_prediction_fn(matrices, q, space):
    """
    Prediction function for bootstrap_evaluate: the percentile threshold is
    computed over the given files only.
    """
    by_id = {m.soundscape_id: m for m in matrices}

    def predict(file_ids):
        subset = [by_id[sid] for sid in file_ids]
        _, masks = percentile_threshold(subset, q)
        rows = to_submission_rows(subset, masks, space)
        grouped = {sid: [] for sid in file_ids}
        for row in rows:
            grouped[row.soundscape_id].append(row)
        return grouped

    return predict


def optimize_percentile(matrices, truth, space, grid, cfg, use_bootstrap=True, jobs=1):
    """
    Picks the percentile with the best F1, ties going to the larger percentile

    :param matrices: Blended PredictionMatrix list of the validation files
    :param grid: Candidate percentiles in (0, 1)
    :param use_bootstrap: Score by bootstrap average; False scores all files at once
    :returns: The best percentile and the curve as (q, score) pairs
    :rtype: tuple
    """
    grid = sorted(set(float(q) for q in grid))
    if not grid:
        raise ConfigError("Percentile grid is empty")
    for q in grid:
        check_percentile(q)
    ids = sorted(m.soundscape_id for m in matrices)
    file_truth = truth_by_file(truth)
    curve = []
    for q in grid:
        predict = threshold_prediction_fn(matrices, q, space)
        if use_bootstrap:
            score = bootstrap_evaluate(predict, ids, truth, cfg, jobs).average
        else:
            score = _score_subset(predict(ids), ids, file_truth, cfg.average)
        logger.info(f"percentile {q}: F1 {score:.4f}")
        curve.append((q, score))
    best_q, best_score = curve[0]
    for q, score in curve[1:]:
        if score >= best_score:
            best_q, best_score = q, score
    return best_q, curve
