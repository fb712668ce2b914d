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
Deterministic synthetic corpus: species are sets of tonal call elements in
separate frequency bands, recordings are calls over pink noise. Everything is
a pure function of the config and the seed.
"""

import os
import logging
import datetime
from dataclasses import dataclass, asdict
from typing import Tuple

import numpy as np
import librosa
from joblib import Parallel, delayed

from soundscape.audio_dsp import DEFAULT_SAMPLE_RATE, write_wav
from soundscape.datamodel import (WINDOW_SECONDS, BinaryClip, Soundscape, TrainRecording,
                                  serialize_binary_metadata, serialize_label_sets,
                                  serialize_soundscape_metadata, serialize_train_metadata,
                                  train_metadata_row)
from soundscape.errors import ConfigError, DataError
from soundscape.utils import Utils

logger = logging.getLogger(__name__)

ELEMENT_GAP_SECONDS = 0.03
PEAK_LIMIT = 0.9
LOW_EDGE_HZ = 300.0


@dataclass(frozen=True)
class SyntheticSpecies:
    code: str
    signature: Tuple[Tuple[float, float, float], ...]

    @property
    def frequencies(self):
        return [freq for freq, _, _ in self.signature]

    @property
    def call_seconds(self):
        return sum(dur for _, dur, _ in self.signature) + ELEMENT_GAP_SECONDS * (len(self.signature) - 1)


@dataclass(frozen=True)
class SynthConfig:
    n_species: int = 8
    n_train_clips: int = 160
    clip_min_seconds: float = 30.0
    clip_max_seconds: float = 60.0
    calls_per_species: int = 4
    p_secondary: float = 0.3
    n_soundscapes: int = 6
    n_empty_soundscapes: int = 1
    soundscape_seconds: float = 60.0
    call_probability: float = 0.15
    n_binary_clips: int = 40
    binary_seconds: float = 10.0
    n_background_clips: int = 8
    background_seconds: float = 30.0
    noise_level: float = 0.05
    overlap: float = 0.0
    sample_rate: int = DEFAULT_SAMPLE_RATE
    site_latitude: float = 47.0
    site_longitude: float = 8.0
    site_date: str = "2020-06-01"
    seed: int = 0

    def __post_init__(self):
        if self.n_species < 1:
            raise ConfigError("synth: need at least one species")
        if not 0 < self.clip_min_seconds <= self.clip_max_seconds:
            raise ConfigError("synth: need 0 < clip_min_seconds <= clip_max_seconds")
        if not 0 <= self.n_empty_soundscapes <= self.n_soundscapes:
            raise ConfigError("synth: n_empty_soundscapes must lie in [0, n_soundscapes]")
        if self.soundscape_seconds < WINDOW_SECONDS:
            raise ConfigError(f"synth: soundscapes must last at least {WINDOW_SECONDS} s")
        if self.noise_level < 0 or not 0 <= self.overlap < 1:
            raise ConfigError("synth: noise_level must be >= 0 and overlap within [0, 1)")
        for name in ("p_secondary", "call_probability"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"synth: {name} must lie in [0, 1]")
        try:
            datetime.date.fromisoformat(self.site_date)
        except ValueError:
            raise ConfigError(f"synth: site_date '{self.site_date}' is not an ISO date") from None

    @property
    def site_day(self):
        return datetime.date.fromisoformat(self.site_date)

    def to_dict(self):
        return asdict(self)


def make_species(n, melspec, seed=0, overlap=0.0):
    """
    n species with disjoint frequency bands spread evenly on the mel scale
    between the melspec limits. overlap in [0, 1) widens each band into its
    neighbours.

    :rtype: list
    """
    lo = max(melspec.fmin, LOW_EDGE_HZ)
    hi = 0.9 * melspec.fmax
    if lo >= hi:
        raise ConfigError(f"melspec range {melspec.fmin}-{melspec.fmax} Hz too narrow for synthetic species")
    edges = np.linspace(librosa.hz_to_mel(lo, htk=True), librosa.hz_to_mel(hi, htk=True), n + 1)
    width = edges[1] - edges[0]
    rng = Utils.rng(seed, 7)
    species = []
    for i in range(n):
        band_lo = max(edges[0], edges[i] + 0.2 * width - overlap * width)
        band_hi = min(edges[-1], edges[i + 1] - 0.2 * width + overlap * width)
        n_elements = int(rng.integers(2, 4))
        mels = np.sort(rng.uniform(band_lo, band_hi, n_elements))
        signature = tuple((float(librosa.mel_to_hz(m, htk=True)), float(rng.uniform(0.1, 0.3)),
                           float(rng.uniform(0.3, 0.6))) for m in mels)
        species.append(SyntheticSpecies(f"sp{i + 1:02d}", signature))
    return species


def render_call(species, sample_rate):
    """
    Waveform of one call: the signature elements in sequence, each a
    Hann-windowed tone.
    """
    parts = []
    gap = np.zeros(int(ELEMENT_GAP_SECONDS * sample_rate))
    for k, (freq, dur, amp) in enumerate(species.signature):
        n = int(dur * sample_rate)
        t = np.arange(n) / sample_rate
        parts.append(amp * np.hanning(n) * np.sin(2 * np.pi * freq * t))
        if k < len(species.signature) - 1:
            parts.append(gap)
    return np.concatenate(parts)


def pink_noise(n, rng):
    """
    Unit-RMS noise with a 1/f power spectrum
    """
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.arange(spectrum.size)
    spectrum[1:] /= np.sqrt(freqs[1:])
    spectrum[0] = 0
    noise = np.fft.irfft(spectrum, n)
    return noise / max(np.sqrt(np.mean(noise ** 2)), 1e-12)


def _limit_peak(samples):
    peak = np.max(np.abs(samples)) if samples.size else 0.0
    return samples * (PEAK_LIMIT / peak) if peak > PEAK_LIMIT else samples


def _place(samples, call, offset):
    samples[offset:offset + call.size] += call[:samples.size - offset]


def gen_train_clip(species, length_s, noise_level, seed, sample_rate=DEFAULT_SAMPLE_RATE, calls_per_species=4,
                   site=(47.0, 8.0), date=None, clip_id=None):
    """
    Weakly labelled training clip: calls of every given species at seeded
    offsets over pink noise. The first species is the primary label.

    :param species: Non-empty list of SyntheticSpecies
    :param site: Latitude and longitude the recording coordinates scatter around
    :rtype: TrainRecording
    """
    if not species:
        raise DataError("A training clip needs at least one species")
    rng = Utils.rng(seed, 11)
    n = int(round(length_s * sample_rate))
    samples = noise_level * pink_noise(n, rng) if noise_level > 0 else np.zeros(n)
    for sp in species:
        call = render_call(sp, sample_rate)
        for _ in range(calls_per_species):
            _place(samples, call, int(rng.integers(0, max(1, n - call.size + 1))))
    latitude = float(np.clip(site[0] + rng.uniform(-2, 2), -90, 90))
    longitude = float(np.clip(site[1] + rng.uniform(-2, 2), -180, 180))
    if date is not None:
        date = date + datetime.timedelta(days=int(rng.integers(-30, 31)))
    return TrainRecording(
        id=clip_id or f"{species[0].code}/synth_{seed}.wav",
        samples=_limit_peak(samples),
        sample_rate=sample_rate,
        primary_label=species[0].code,
        secondary_labels=frozenset(sp.code for sp in species[1:]) - {species[0].code},
        rating=float(rng.integers(1, 6)),
        date=date,
        latitude=latitude,
        longitude=longitude,
    )


def gen_soundscape(schedule, species, seed, noise_level=0.05, sample_rate=DEFAULT_SAMPLE_RATE,
                   site=(47.0, 8.0, None), soundscape_id="synth"):
    """
    Soundscape whose 5 s windows contain exactly the scheduled species, one
    call each, fully inside the window.

    :param schedule: One set of species codes per window
    :param species: SyntheticSpecies list the codes refer to
    :param site: Latitude, longitude and date of the recording site
    :rtype: Soundscape
    """
    if not schedule:
        raise DataError("A soundscape schedule needs at least one window")
    by_code = {sp.code: sp for sp in species}
    unknown = sorted({code for row in schedule for code in row} - set(by_code))
    if unknown:
        raise DataError(f"Schedule references unknown species {unknown}")
    rng = Utils.rng(seed, 13)
    window = WINDOW_SECONDS * sample_rate
    n = window * len(schedule)
    samples = noise_level * pink_noise(n, rng) if noise_level > 0 else np.zeros(n)
    for i, row in enumerate(schedule):
        for code in sorted(row):
            call = render_call(by_code[code], sample_rate)
            if call.size > window:
                raise DataError(f"{code}: call longer than a {WINDOW_SECONDS} s window")
            _place(samples, call, i * window + int(rng.integers(0, window - call.size + 1)))
    return Soundscape(soundscape_id, _limit_peak(samples), sample_rate, latitude=site[0], longitude=site[1],
                      date=site[2], truth=tuple(frozenset(row) for row in schedule))


def gen_background_clip(length_s, noise_level, seed, sample_rate=DEFAULT_SAMPLE_RATE):
    """
    Noise-only clip for background mixing
    """
    rng = Utils.rng(seed, 17)
    return _limit_peak(max(noise_level, 1e-3) * pink_noise(int(round(length_s * sample_rate)), rng))


def gen_binary_clip(species, has_bird, length_s, noise_level, seed, sample_rate=DEFAULT_SAMPLE_RATE, clip_id=None):
    """
    Presence/absence clip: with has_bird, a few calls of randomly drawn
    species; without, noise plus broadband bursts standing in for other
    environment sounds.

    :rtype: BinaryClip
    """
    rng = Utils.rng(seed, 19)
    n = int(round(length_s * sample_rate))
    samples = max(noise_level, 1e-3) * pink_noise(n, rng)
    if has_bird:
        for _ in range(int(rng.integers(2, 5))):
            call = render_call(species[int(rng.integers(len(species)))], sample_rate)
            _place(samples, call, int(rng.integers(0, max(1, n - call.size + 1))))
    else:
        for _ in range(int(rng.integers(1, 4))):
            burst = int(rng.uniform(0.05, 0.3) * sample_rate)
            _place(samples, 0.3 * np.hanning(burst) * rng.standard_normal(burst),
                   int(rng.integers(0, max(1, n - burst + 1))))
    return BinaryClip(clip_id or f"synth_{seed}", _limit_peak(samples), sample_rate, bool(has_bird))


def _write_train_clip(out_dir, species, length_s, cfg, seed, clip_id):
    rec = gen_train_clip(species, length_s, cfg.noise_level, seed, cfg.sample_rate, cfg.calls_per_species,
                         site=(cfg.site_latitude, cfg.site_longitude), date=cfg.site_day, clip_id=clip_id)
    path = os.path.join(out_dir, "train_audio", clip_id)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    write_wav(path, rec.samples, rec.sample_rate)
    return train_metadata_row(rec)


def _write_binary_clip(out_dir, species, has_bird, cfg, seed, clip_id):
    clip = gen_binary_clip(species, has_bird, cfg.binary_seconds, cfg.noise_level, seed, cfg.sample_rate, clip_id)
    write_wav(os.path.join(out_dir, "binary_audio", f"{clip_id}.wav"), clip.samples, clip.sample_rate)
    return BinaryClip(clip.id, clip.samples[:1], clip.sample_rate, clip.has_bird)


def write_corpus(out_dir, cfg, melspec, jobs=1):
    """
    Writes a complete corpus in the on-disk formats the pipeline reads:
    train_audio/ + train_metadata.csv, soundscapes/ + soundscapes.csv +
    soundscape_labels.csv, background/, binary_audio/ + binary_metadata.csv.

    :returns: The generated species
    :rtype: list
    """
    species = make_species(cfg.n_species, melspec, cfg.seed, cfg.overlap)
    rng = Utils.rng(cfg.seed, 23)
    for sub in ("train_audio", "soundscapes", "background", "binary_audio"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    train_jobs = []
    for i in range(cfg.n_train_clips):
        primary = species[i % len(species)]
        chosen = [primary]
        if len(species) > 1 and rng.random() < cfg.p_secondary:
            others = [sp for sp in species if sp.code != primary.code]
            chosen.append(others[int(rng.integers(len(others)))])
        length_s = float(rng.uniform(cfg.clip_min_seconds, cfg.clip_max_seconds))
        train_jobs.append((chosen, length_s, int(rng.integers(2 ** 31)), f"{primary.code}/XC{i:05d}.wav"))
    rows = Parallel(n_jobs=jobs)(delayed(_write_train_clip)(out_dir, chosen, length_s, cfg, seed, clip_id)
                                 for chosen, length_s, seed, clip_id in train_jobs)
    Utils.atomic_write_text(os.path.join(out_dir, "train_metadata.csv"), serialize_train_metadata(rows))

    n_windows = int(cfg.soundscape_seconds // WINDOW_SECONDS)
    soundscapes, filenames, truth = [], {}, {}
    for i in range(cfg.n_soundscapes):
        sid = f"synth{i:03d}"
        p = 0.0 if i < cfg.n_empty_soundscapes else cfg.call_probability
        schedule = [frozenset(sp.code for sp in species if rng.random() < p) for _ in range(n_windows)]
        s = gen_soundscape(schedule, species, int(rng.integers(2 ** 31)), cfg.noise_level, cfg.sample_rate,
                           site=(cfg.site_latitude, cfg.site_longitude, cfg.site_day), soundscape_id=sid)
        filenames[sid] = f"{sid}.wav"
        write_wav(os.path.join(out_dir, "soundscapes", filenames[sid]), s.samples, s.sample_rate)
        truth.update(s.truth_map())
        soundscapes.append(s)
    Utils.atomic_write_text(os.path.join(out_dir, "soundscapes.csv"),
                            serialize_soundscape_metadata(soundscapes, filenames))
    Utils.atomic_write_text(os.path.join(out_dir, "soundscape_labels.csv"), serialize_label_sets(truth))

    for i in range(cfg.n_background_clips):
        samples = gen_background_clip(cfg.background_seconds, cfg.noise_level, int(rng.integers(2 ** 31)),
                                      cfg.sample_rate)
        write_wav(os.path.join(out_dir, "background", f"bg{i:03d}.wav"), samples, cfg.sample_rate)

    binary_jobs = [(i % 2 == 0, int(rng.integers(2 ** 31)), f"bin{i:04d}") for i in range(cfg.n_binary_clips)]
    clips = Parallel(n_jobs=jobs)(delayed(_write_binary_clip)(out_dir, species, has_bird, cfg, seed, clip_id)
                                  for has_bird, seed, clip_id in binary_jobs)
    Utils.atomic_write_text(os.path.join(out_dir, "binary_metadata.csv"), serialize_binary_metadata(clips))
    logger.info(f"Wrote {cfg.n_train_clips} training clips, {cfg.n_soundscapes} soundscapes, "
                f"{cfg.n_background_clips} background clips and {cfg.n_binary_clips} binary clips to {out_dir}")
    return species
