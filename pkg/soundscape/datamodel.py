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
In-memory representations of recordings, labels, soundscapes and predictions,
plus the parsers and serializers of the on-disk CSV formats.
"""

import io
import os
import ast
import logging
import datetime
from dataclasses import dataclass, field
from typing import Optional, Tuple, FrozenSet, Dict, List

import numpy as np
import pandas as pd

from soundscape.errors import DataError
from soundscape.utils import Utils
from soundscape.audio_dsp import read_wav

logger = logging.getLogger(__name__)

NOCALL = "nocall"
WINDOW_SECONDS = 5
# 16-bit PCM is exact in float32
AUDIO_DTYPE = np.float32

TRAIN_COLUMNS = ["filename", "primary_label", "secondary_labels", "rating", "date", "latitude", "longitude"]
LABEL_COLUMNS = ["row_id", "birds"]
SOUNDSCAPE_COLUMNS = ["soundscape_id", "filename", "latitude", "longitude", "date"]
BINARY_COLUMNS = ["itemid", "hasbird"]


def _frozen_array(values, dtype=np.float64):
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


def _check_coordinates(latitude, longitude, owner):
    if latitude is not None and abs(latitude) > 90:
        raise DataError(f"{owner}: latitude {latitude} outside [-90, 90]")
    if longitude is not None and abs(longitude) > 180:
        raise DataError(f"{owner}: longitude {longitude} outside [-180, 180]")


@dataclass(frozen=True)
class LabelSpace:
    species_codes: Tuple[str, ...]

    def __post_init__(self):
        codes = tuple(self.species_codes)
        object.__setattr__(self, "species_codes", codes)
        if len(set(codes)) != len(codes):
            raise DataError("Species codes in a label space must be unique")
        if NOCALL in codes:
            raise DataError(f"'{NOCALL}' is reserved and cannot be a species code")
        object.__setattr__(self, "_index", {code: i for i, code in enumerate(codes)})

    @property
    def n_classes(self):
        return len(self.species_codes)

    def __len__(self):
        return len(self.species_codes)

    def __contains__(self, code):
        return code in self._index

    def index(self, code):
        try:
            return self._index[code]
        except KeyError:
            raise DataError(f"Unknown species code '{code}'") from None

    def code(self, index):
        return self.species_codes[index]

    def to_text(self):
        return "".join(f"{code}\n" for code in self.species_codes)

    @classmethod
    def from_text(cls, text):
        return cls(tuple(line.strip() for line in text.splitlines() if line.strip()))


@dataclass(frozen=True)
class TrainMetadata:
    id: str
    primary_label: str
    secondary_labels: FrozenSet[str] = frozenset()
    rating: float = 5.0
    date: Optional[datetime.date] = None
    latitude: Optional[float] = None
    longitude: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "secondary_labels", frozenset(self.secondary_labels))
        if not 0 <= self.rating <= 5:
            raise DataError(f"{self.id}: rating {self.rating:g} outside 0-5")
        _check_coordinates(self.latitude, self.longitude, self.id)

    @property
    def labels(self):
        return frozenset({self.primary_label}) | self.secondary_labels


@dataclass(frozen=True)
class TrainRecording:
    id: str
    samples: np.ndarray
    sample_rate: int
    primary_label: str
    secondary_labels: FrozenSet[str] = frozenset()
    rating: float = 5.0
    date: Optional[datetime.date] = None
    latitude: Optional[float] = None
    longitude: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen_array(self.samples, AUDIO_DTYPE))
        object.__setattr__(self, "secondary_labels", frozenset(self.secondary_labels))
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError(f"{self.id}: recording must be a non-empty mono waveform")
        if not 0 <= self.rating <= 5:
            raise DataError(f"{self.id}: rating {self.rating} outside 0-5")
        _check_coordinates(self.latitude, self.longitude, self.id)

    @property
    def labels(self):
        return frozenset({self.primary_label}) | self.secondary_labels

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class Soundscape:
    id: str
    samples: np.ndarray
    sample_rate: int
    latitude: Optional[float] = None
    longitude: Optional[float] = None
    date: Optional[datetime.date] = None
    truth: Optional[Tuple[FrozenSet[str], ...]] = None

    def __post_init__(self):
        window = WINDOW_SECONDS * self.sample_rate
        samples = np.asarray(self.samples)
        n_windows = samples.size // window
        if samples.ndim != 1 or n_windows < 1:
            raise DataError(f"{self.id}: soundscape shorter than one {WINDOW_SECONDS} s window")
        if samples.size != n_windows * window:
            logger.debug(f"{self.id}: dropping trailing {samples.size - n_windows * window} samples")
        object.__setattr__(self, "samples", _frozen_array(samples[:n_windows * window], AUDIO_DTYPE))
        if self.truth is not None:
            truth = tuple(frozenset(row) for row in self.truth)
            if len(truth) != n_windows:
                raise DataError(f"{self.id}: {len(truth)} truth rows for {n_windows} windows")
            object.__setattr__(self, "truth", truth)
        _check_coordinates(self.latitude, self.longitude, self.id)

    @property
    def n_windows(self):
        return self.samples.size // (WINDOW_SECONDS * self.sample_rate)

    def window(self, index):
        size = WINDOW_SECONDS * self.sample_rate
        return self.samples[index * size:(index + 1) * size]

    @property
    def row_ids(self):
        return [row_id(self.id, i) for i in range(self.n_windows)]

    def truth_map(self):
        if self.truth is None:
            return {}
        return dict(zip(self.row_ids, self.truth))


@dataclass(frozen=True)
class BinaryClip:
    id: str
    samples: np.ndarray
    sample_rate: int
    has_bird: bool

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen_array(self.samples, AUDIO_DTYPE))
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError(f"{self.id}: clip must be a non-empty mono waveform")


@dataclass(frozen=True)
class PredictionMatrix:
    soundscape_id: str
    values: np.ndarray
    row_duration: int = WINDOW_SECONDS

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.ndim != 2:
            raise DataError(f"{self.soundscape_id}: prediction matrix must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or values.size and (values.min() < 0 or values.max() > 1):
            raise DataError(f"{self.soundscape_id}: probabilities must be finite and within [0, 1]")
        object.__setattr__(self, "values", values)

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def n_classes(self):
        return self.values.shape[1]

    @property
    def row_ids(self):
        return [row_id(self.soundscape_id, i) for i in range(self.rows)]

    def replace(self, values):
        return PredictionMatrix(self.soundscape_id, values, self.row_duration)

    def to_frame(self, space):
        if space.n_classes != self.n_classes:
            raise DataError(f"{self.soundscape_id}: {self.n_classes} columns for {space.n_classes} species")
        frame = pd.DataFrame(self.values, columns=list(space.species_codes))
        frame.insert(0, "row_id", self.row_ids)
        return frame

    def to_csv_text(self, space):
        return self.to_frame(space).to_csv(index=False)

    @classmethod
    def from_csv_text(cls, text, space):
        frame = pd.read_csv(io.StringIO(text), dtype={"row_id": str})
        if list(frame.columns) != ["row_id"] + list(space.species_codes):
            raise DataError("Prediction CSV columns do not match the label space")
        ids = {parse_row_id(r)[0] for r in frame["row_id"]}
        if len(ids) != 1:
            raise DataError(f"Prediction CSV must hold exactly one soundscape, found {sorted(ids)}")
        seconds = [parse_row_id(r)[1] for r in frame["row_id"]]
        if seconds != [WINDOW_SECONDS * (i + 1) for i in range(len(seconds))]:
            raise DataError(f"Prediction CSV rows of {ids.pop()} are not consecutive windows")
        return cls(ids.pop(), frame[list(space.species_codes)].to_numpy(dtype=np.float64))


@dataclass(frozen=True)
class SubmissionRow:
    row_id: str
    birds: FrozenSet[str] = field(default_factory=frozenset)

    def __post_init__(self):
        parse_row_id(self.row_id)
        birds = frozenset(self.birds)
        if NOCALL in birds:
            raise DataError(f"{self.row_id}: '{NOCALL}' is the empty-set sentinel, not a species")
        object.__setattr__(self, "birds", birds)

    @property
    def birds_text(self):
        return " ".join(sorted(self.birds)) if self.birds else NOCALL

    @property
    def soundscape_id(self):
        return parse_row_id(self.row_id)[0]


def row_id(soundscape_id, index):
    return f"{soundscape_id}_{(index + 1) * WINDOW_SECONDS}"


def parse_row_id(value):
    """
    Splits '<soundscape_id>_<end_second>' into its parts

    :returns: Tuple of soundscape id and end second
    :rtype: tuple
    """
    value = str(value)
    soundscape_id, sep, tail = value.rpartition("_")
    if not sep or not soundscape_id or not tail.isdigit():
        raise DataError(f"Malformed row_id '{value}': expected '<soundscape>_<end_second>'")
    end_second = int(tail)
    if end_second <= 0 or end_second % WINDOW_SECONDS:
        raise DataError(f"Malformed row_id '{value}': end second must be a positive multiple of {WINDOW_SECONDS}")
    return soundscape_id, end_second


def _read_frame(csv_text, columns, what):
    try:
        frame = pd.read_csv(io.StringIO(csv_text), dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"{what}: {e}") from e
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"{what}: missing columns {missing}, expected header {','.join(columns)}")
    return frame


def _optional_float(text, owner, name):
    text = text.strip()
    if not text:
        return None
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{owner}: {name} '{text}' is not a number") from None


def _split_labels(text):
    text = text.strip()
    if text.startswith("["):
        # xeno-canto metadata stores secondary labels as a python list literal
        return frozenset(ast.literal_eval(text))
    return frozenset(text.split())


def _load_audio(audio_dir, filename, sample_rate):
    path = os.path.join(audio_dir, filename)
    samples, rate = read_wav(path)
    if sample_rate is not None and rate != sample_rate:
        raise DataError(f"{path}: sample rate {rate} Hz, expected {sample_rate} Hz (resampling is not supported)")
    return samples, rate


def parse_train_rows(csv_text, space=None):
    """
    Parses training metadata without touching the audio

    :param csv_text: CSV text with header filename,primary_label,secondary_labels,rating,date,latitude,longitude
    :type csv_text: str

    :param space: When given, rows with species outside it are rejected with a warning
    :type space: LabelSpace

    :returns: One TrainMetadata per accepted row
    :rtype: list
    """
    frame = _read_frame(csv_text, TRAIN_COLUMNS, "train metadata")
    rows = []
    for _, row in frame.iterrows():
        filename = row["filename"].strip()
        primary = row["primary_label"].strip()
        secondary = _split_labels(row["secondary_labels"])
        if space is not None:
            unknown = sorted(code for code in {primary} | secondary if code not in space)
            if unknown:
                logger.warning(f"Rejecting {filename}: unknown species {unknown}")
                continue
        try:
            rating = float(row["rating"])
        except ValueError:
            raise DataError(f"{filename}: rating '{row['rating']}' is not a number") from None
        rows.append(TrainMetadata(
            id=filename,
            primary_label=primary,
            secondary_labels=secondary,
            rating=rating,
            date=Utils.parse_date(row["date"]),
            latitude=_optional_float(row["latitude"], filename, "latitude"),
            longitude=_optional_float(row["longitude"], filename, "longitude"),
        ))
    return rows


def parse_train_metadata(csv_text, audio_dir, space=None, sample_rate=None):
    """
    Parses training metadata and loads the referenced audio

    :param audio_dir: Directory the filenames are relative to
    :type audio_dir: str

    :param sample_rate: Expected sample rate; None accepts any
    :type sample_rate: int

    :returns: One TrainRecording per accepted row
    :rtype: list
    """
    recordings = []
    for meta in parse_train_rows(csv_text, space):
        samples, rate = _load_audio(audio_dir, meta.id, sample_rate)
        recordings.append(TrainRecording(
            id=meta.id,
            samples=samples,
            sample_rate=rate,
            primary_label=meta.primary_label,
            secondary_labels=meta.secondary_labels,
            rating=meta.rating,
            date=meta.date,
            latitude=meta.latitude,
            longitude=meta.longitude,
        ))
    return recordings


def train_metadata_row(rec):
    return {
        "filename": rec.id,
        "primary_label": rec.primary_label,
        "secondary_labels": " ".join(sorted(rec.secondary_labels)),
        "rating": f"{rec.rating:g}",
        "date": rec.date.isoformat() if rec.date else "",
        "latitude": "" if rec.latitude is None else repr(float(rec.latitude)),
        "longitude": "" if rec.longitude is None else repr(float(rec.longitude)),
    }


def serialize_train_metadata(recordings):
    """
    Serializes TrainRecordings, or rows already built by train_metadata_row, as training metadata CSV
    """
    rows = [train_metadata_row(r) if isinstance(r, (TrainRecording, TrainMetadata)) else r for r in recordings]
    return pd.DataFrame(rows, columns=TRAIN_COLUMNS).to_csv(index=False)


def parse_soundscape_truth(csv_text, space=None):
    """
    Parses a row_id,birds CSV (truth or submission)

    :returns: Mapping of row_id to frozenset of species codes, empty for 'nocall'
    :rtype: dict
    """
    frame = _read_frame(csv_text, LABEL_COLUMNS, "label CSV")
    truth = {}
    for _, row in frame.iterrows():
        rid = row["row_id"].strip()
        parse_row_id(rid)
        if rid in truth:
            raise DataError(f"Duplicate row_id '{rid}'")
        tokens = row["birds"].split()
        if tokens == [NOCALL]:
            truth[rid] = frozenset()
            continue
        if NOCALL in tokens:
            raise DataError(f"{rid}: '{NOCALL}' cannot be combined with species codes")
        if space is not None:
            for code in tokens:
                space.index(code)
        truth[rid] = frozenset(tokens)
    return truth


def serialize_label_sets(rows):
    """
    Serializes SubmissionRows, or a mapping of row_id to label set, as row_id,birds CSV
    """
    if isinstance(rows, dict):
        rows = [SubmissionRow(rid, birds) for rid, birds in rows.items()]
    frame = pd.DataFrame([(r.row_id, r.birds_text) for r in rows], columns=LABEL_COLUMNS)
    return frame.to_csv(index=False)


def parse_soundscape_metadata(csv_text, audio_dir, truth=None, sample_rate=None):
    """
    Loads soundscapes listed as soundscape_id,filename,latitude,longitude,date and
    attaches their truth rows when a truth mapping is given.
    """
    frame = _read_frame(csv_text, SOUNDSCAPE_COLUMNS, "soundscape metadata")
    by_file = {}
    if truth is not None:
        for rid, labels in truth.items():
            sid, end_second = parse_row_id(rid)
            by_file.setdefault(sid, []).append((end_second, labels))
    soundscapes = []
    for _, row in frame.iterrows():
        sid = row["soundscape_id"].strip()
        samples, rate = _load_audio(audio_dir, row["filename"].strip(), sample_rate)
        rows = None
        if truth is not None:
            if sid not in by_file:
                raise DataError(f"{sid}: no truth rows")
            ordered = sorted(by_file[sid], key=lambda item: item[0])
            n_windows = samples.size // (WINDOW_SECONDS * rate)
            expected = list(range(WINDOW_SECONDS, WINDOW_SECONDS * n_windows + 1, WINDOW_SECONDS))
            ends = [end for end, _ in ordered]
            if ends != expected:
                raise DataError(f"{sid}: truth rows end at seconds {ends[:6]}, expected {expected[:6]} "
                                f"for {n_windows} windows")
            rows = [labels for _, labels in ordered]
        soundscapes.append(Soundscape(
            id=sid,
            samples=samples,
            sample_rate=rate,
            latitude=_optional_float(row["latitude"], sid, "latitude"),
            longitude=_optional_float(row["longitude"], sid, "longitude"),
            date=Utils.parse_date(row["date"]),
            truth=rows,
        ))
    return soundscapes


def serialize_soundscape_metadata(soundscapes, filenames):
    frame = pd.DataFrame([{
        "soundscape_id": s.id,
        "filename": filenames[s.id],
        "latitude": "" if s.latitude is None else repr(float(s.latitude)),
        "longitude": "" if s.longitude is None else repr(float(s.longitude)),
        "date": s.date.isoformat() if s.date else "",
    } for s in soundscapes], columns=SOUNDSCAPE_COLUMNS)
    return frame.to_csv(index=False)


def parse_binary_metadata(csv_text, audio_dir, sample_rate=None):
    """
    Loads presence/absence clips in the freefield1010 / BirdVox layout (itemid,hasbird)
    """
    frame = _read_frame(csv_text, BINARY_COLUMNS, "binary metadata")
    clips = []
    for _, row in frame.iterrows():
        item = row["itemid"].strip()
        flag = row["hasbird"].strip()
        if flag not in ("0", "1"):
            raise DataError(f"{item}: hasbird must be 0 or 1, got '{flag}'")
        samples, rate = _load_audio(audio_dir, f"{item}.wav", sample_rate)
        clips.append(BinaryClip(item, samples, rate, flag == "1"))
    return clips


def serialize_binary_metadata(clips):
    frame = pd.DataFrame([(c.id, int(c.has_bird)) for c in clips], columns=BINARY_COLUMNS)
    return frame.to_csv(index=False)


def build_label_space(recordings):
    """
    Sorted union of all primary and secondary labels
    """
    if not recordings:
        raise DataError("Cannot build a label space from an empty recording list")
    codes = set()
    for rec in recordings:
        codes |= rec.labels
    return LabelSpace(tuple(sorted(codes)))
