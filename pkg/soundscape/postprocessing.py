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
Post-processing of soundscape predictions. The order of the stages is fixed:
per-model boost and smoothing, ensemble mean, binary adjustment,
spatiotemporal filter, percentile threshold, submission rows.
"""

import io
import math
import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import pandas as pd
from scipy.ndimage import convolve1d
from sklearn.metrics.pairwise import haversine_distances

from soundscape.datamodel import SOUNDSCAPE_COLUMNS, SubmissionRow
from soundscape.errors import ConfigError, DataError
from soundscape.utils import Utils

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
DAYS_IN_YEAR = 366


@dataclass(frozen=True)
class PostProcessConfig:
    boost_gamma: float = 0.5
    smooth_center: float = 0.5
    smooth_neighbor: float = 0.25
    binary_factor: float = 0.8
    radius_km: float = 500.0
    day_window: float = 60.0
    percentile: float = 0.9987
    use_boost: bool = True
    use_smoothing: bool = True
    use_binary: bool = True
    use_filter: bool = True

    def __post_init__(self):
        if self.boost_gamma < 0:
            raise ConfigError(f"postprocess: boost_gamma must be >= 0, got {self.boost_gamma}")
        if self.smooth_center < 0 or self.smooth_neighbor < 0:
            raise ConfigError("postprocess: smoothing weights must be non-negative")
        if not math.isclose(self.smooth_center + 2 * self.smooth_neighbor, 1.0, abs_tol=1e-9):
            raise ConfigError(f"postprocess: smooth_center + 2 * smooth_neighbor must be 1, "
                              f"got {self.smooth_center} + 2 * {self.smooth_neighbor}")
        if self.binary_factor < 0:
            raise ConfigError(f"postprocess: binary_factor must be >= 0, got {self.binary_factor}")
        if self.radius_km <= 0 or self.day_window < 0:
            raise ConfigError("postprocess: radius_km must be positive and day_window non-negative")
        check_percentile(self.percentile)


@dataclass(frozen=True)
class Site:
    latitude: Optional[float] = None
    longitude: Optional[float] = None
    date: Optional[object] = None

    @property
    def has_coordinates(self):
        return self.latitude is not None and self.longitude is not None


def check_percentile(q):
    if not 0 < q < 1:
        raise ConfigError(f"percentile must lie in (0, 1), got {q}")


def sites_from_metadata(csv_text):
    """
    Site of every soundscape listed in soundscape metadata CSV, without loading audio

    :returns: Mapping of soundscape id to Site
    :rtype: dict
    """
    frame = pd.read_csv(io.StringIO(csv_text), dtype=str, keep_default_na=False)
    missing = [c for c in SOUNDSCAPE_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"soundscape metadata: missing columns {missing}")
    sites = {}
    for _, row in frame.iterrows():
        latitude, longitude = row["latitude"].strip(), row["longitude"].strip()
        try:
            sites[row["soundscape_id"].strip()] = Site(float(latitude) if latitude else None,
                                                       float(longitude) if longitude else None,
                                                       Utils.parse_date(row["date"]))
        except ValueError:
            raise DataError(f"{row['soundscape_id']}: coordinates '{latitude}', '{longitude}' are not numbers") from None
    return sites


def haversine_km(lat1, lon1, lat2, lon2):
    """
    Great-circle distance in km from one site to each of the given points

    :returns: Array shaped like lat2, or a float for a single point
    """
    origin = np.radians([[float(lat1), float(lon1)]])
    points = np.radians(np.column_stack([np.atleast_1d(lat2), np.atleast_1d(lon2)]).astype(np.float64))
    distances = haversine_distances(origin, points)[0] * EARTH_RADIUS_KM
    return distances if np.ndim(lat2) else float(distances[0])


def day_distance(a, b):
    """
    Circular distance between days of year on a 366-day cycle
    """
    d = np.abs(np.asarray(a) - np.asarray(b)) % DAYS_IN_YEAR
    return np.minimum(d, DAYS_IN_YEAR - d)


@dataclass(frozen=True)
class SpeciesGeoIndex:
    """
    Where and when each species was recorded in the training data. A species
    whose recordings carry no coordinates has no entry and is never filtered.
    """
    points: Dict[str, np.ndarray]

    @classmethod
    def build(cls, recordings):
        collected = {}
        for rec in sorted(recordings, key=lambda r: r.id):
            if rec.latitude is None or rec.longitude is None:
                continue
            doy = Utils.day_of_year(rec.date)
            for code in sorted(rec.labels):
                collected.setdefault(code, []).append((rec.latitude, rec.longitude, np.nan if doy is None else doy))
        return cls({code: np.array(rows, dtype=np.float64) for code, rows in collected.items()})

    def admissible(self, code, site, radius_km, day_window):
        points = self.points.get(code)
        if points is None or not site.has_coordinates:
            return True
        near = haversine_km(site.latitude, site.longitude, points[:, 0], points[:, 1]) <= radius_km
        site_day = Utils.day_of_year(site.date)
        if site_day is not None:
            undated = np.isnan(points[:, 2])
            near &= undated | (day_distance(site_day, np.nan_to_num(points[:, 2])) <= day_window)
        return bool(near.any())


def boost_by_file_mean(m, gamma):
    """
    p'[t, c] = min(1, p[t, c] * (1 + gamma * mean_t p[t, c]))
    """
    values = m.values
    return m.replace(np.minimum(1.0, values * (1.0 + gamma * values.mean(axis=0, keepdims=True))))


def smooth_neighbors(m, center=0.5, neighbor=0.25):
    """
    Weighted average with the previous and next row; the first and last rows
    renormalize over the weights they have.
    """
    kernel = np.array([neighbor, center, neighbor])
    values = convolve1d(m.values, kernel, axis=0, mode="constant", cval=0.0)
    norm = convolve1d(np.ones((m.rows, 1)), kernel, axis=0, mode="constant", cval=0.0)
    return m.replace(np.clip(values / norm, 0.0, 1.0))


def ensemble_mean(matrices):
    if not matrices:
        raise DataError("Nothing to ensemble")
    first = matrices[0]
    for m in matrices[1:]:
        if m.soundscape_id != first.soundscape_id:
            raise DataError(f"Cannot ensemble predictions of {first.soundscape_id} and {m.soundscape_id}")
        if m.values.shape != first.values.shape:
            raise DataError(f"{first.soundscape_id}: prediction shapes {first.values.shape} and {m.values.shape} differ")
    return first.replace(np.mean(np.stack([m.values for m in matrices]), axis=0))


def binary_adjust(m, binary_probs, factor=0.8):
    """
    p' = min(1, p * (1 + p_binary * factor)) row by row
    """
    binary_probs = np.asarray(binary_probs, dtype=np.float64)
    if binary_probs.shape != (m.rows,):
        raise DataError(f"{m.soundscape_id}: {binary_probs.size} binary probabilities for {m.rows} rows")
    return m.replace(np.minimum(1.0, m.values * (1.0 + factor * binary_probs[:, None])))


def spatiotemporal_filter(m, site, index, space, radius_km=500.0, day_window=60.0):
    """
    Zeroes the columns of species never recorded within radius_km of the site
    and within day_window days of its date.
    """
    if m.n_classes != space.n_classes:
        raise DataError(f"{m.soundscape_id}: {m.n_classes} columns for {space.n_classes} species")
    keep = np.array([index.admissible(code, site, radius_km, day_window) for code in space.species_codes])
    if not keep.all():
        logger.debug(f"{m.soundscape_id}: filtered {int((~keep).sum())} species by place and season")
    return m.replace(m.values * keep[None, :])


def percentile_threshold(matrices, q):
    """
    Global threshold at the nearest-rank q-quantile of all probabilities of all files

    :returns: The threshold and one boolean mask (p >= threshold) per matrix
    :rtype: tuple
    """
    check_percentile(q)
    flat = np.concatenate([m.values.reshape(-1) for m in matrices]) if matrices else np.empty(0)
    if flat.size == 0:
        raise DataError("Cannot compute a percentile threshold over no predictions")
    k = min(max(Utils.sample_count(q, flat.size) - 1, 0), flat.size - 1)
    threshold = float(np.sort(flat)[k])
    return threshold, [m.values >= threshold for m in matrices]


def to_submission_rows(matrices, masks, space):
    rows = []
    for m, mask in zip(matrices, masks):
        if mask.shape != m.values.shape:
            raise DataError(f"{m.soundscape_id}: mask shape {mask.shape} does not match {m.values.shape}")
        for i, rid in enumerate(m.row_ids):
            rows.append(SubmissionRow(rid, frozenset(space.code(c) for c in np.flatnonzero(mask[i]))))
    return rows


class PostProcessor:
    """
    Runs the post-processing stages in their fixed order. blend() stops before
    thresholding so thresholds can be refit on any subset of files.
    """

    def __init__(self, cfg, space, index=None, sites=None):
        self.cfg = cfg
        self.space = space
        self.index = index
        self.sites = sites or {}

    def per_model(self, m):
        if self.cfg.use_boost:
            m = boost_by_file_mean(m, self.cfg.boost_gamma)
        if self.cfg.use_smoothing:
            m = smooth_neighbors(m, self.cfg.smooth_center, self.cfg.smooth_neighbor)
        return m

    def blend(self, model_matrices, binary=None):
        """
        :param model_matrices: One list of PredictionMatrix per model, covering the same soundscapes
        :param binary: Optional mapping of soundscape id to averaged binary probabilities
        :returns: Blended matrices ordered by soundscape id
        :rtype: list
        """
        if not model_matrices:
            raise DataError("No model predictions to post-process")
        by_model = [{m.soundscape_id: m for m in matrices} for matrices in model_matrices]
        ids = sorted(by_model[0])
        for i, found in enumerate(by_model[1:], start=1):
            if sorted(found) != ids:
                raise DataError(f"Model {i} covers soundscapes {sorted(set(found) ^ set(ids))} differently")
        blended = []
        for sid in ids:
            m = ensemble_mean([self.per_model(found[sid]) for found in by_model])
            if binary is not None and self.cfg.use_binary:
                if sid not in binary:
                    raise DataError(f"{sid}: no binary predictions")
                m = binary_adjust(m, binary[sid], self.cfg.binary_factor)
            if self.index is not None and self.cfg.use_filter:
                m = spatiotemporal_filter(m, self.sites.get(sid, Site()), self.index, self.space,
                                          self.cfg.radius_km, self.cfg.day_window)
            blended.append(m)
        return blended

    def threshold(self, blended, q=None):
        q = self.cfg.percentile if q is None else q
        threshold, masks = percentile_threshold(blended, q)
        logger.info(f"Percentile {q} gives threshold {threshold:.6g}, "
                    f"{int(sum(mask.sum() for mask in masks))} detections")
        return threshold, to_submission_rows(blended, masks, self.space)

    def run(self, model_matrices, binary=None, q=None):
        return self.threshold(self.blend(model_matrices, binary), q)
