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
Training-time augmentation: random crops, six-way segmentation, mixup between
and within recordings, and background-noise mixing.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from soundscape.errors import ConfigError, DataError
from soundscape.audio_dsp import MelSpec

logger = logging.getLogger(__name__)

N_PARTS = 6


@dataclass(frozen=True)
class MixupConfig:
    alpha: float = 1.0
    p_between: float = 0.5
    max_between_rounds: int = 2
    p_within: float = 0.5
    within_first: bool = True

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"mixup: alpha must be positive, got {self.alpha}")
        for name in ("p_between", "p_within"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"mixup: {name} must lie in [0, 1], got {getattr(self, name)}")
        if self.max_between_rounds < 0:
            raise ConfigError(f"mixup: max_between_rounds must be >= 0, got {self.max_between_rounds}")


@dataclass(frozen=True)
class BackgroundConfig:
    p: float = 0.5
    snr_min: float = 0.0
    snr_max: float = 12.0
    noise_dir: Optional[str] = None

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ConfigError(f"background: p must lie in [0, 1], got {self.p}")
        if self.snr_min > self.snr_max:
            raise ConfigError(f"background: snr_min {self.snr_min} > snr_max {self.snr_max}")


@dataclass(frozen=True)
class SegmentedSpec:
    parts: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        if self.parts.ndim != 3 or self.parts.shape[0] != N_PARTS:
            raise DataError(f"{self.source_id}: expected {N_PARTS} parts, got array of shape {self.parts.shape}")

    @property
    def frames_per_part(self):
        return self.parts.shape[2]

    def concat(self):
        return np.concatenate(list(self.parts), axis=1)


def crop_waveform(samples, n_samples, rng):
    """
    Cyclically extends samples to at least n_samples, then takes a window of
    exactly n_samples at a uniformly drawn offset.
    """
    samples = np.asarray(samples)
    if samples.size == 0:
        raise DataError("Cannot crop an empty waveform")
    if n_samples <= 0:
        raise DataError(f"Crop length must be positive, got {n_samples}")
    if samples.size < n_samples:
        samples = np.tile(samples, -(-n_samples // samples.size))
    offset = int(rng.integers(0, samples.size - n_samples + 1))
    return samples[offset:offset + n_samples].copy()


def crop_random_window(recording, duration=30.0, rng=None):
    """
    Random crop of duration seconds from a TrainRecording; short recordings
    are repeated before cropping.
    """
    if duration <= 0:
        raise DataError(f"Crop duration must be positive, got {duration}")
    rng = rng if rng is not None else np.random.default_rng()
    return crop_waveform(recording.samples, int(round(duration * recording.sample_rate)), rng)


def segment_six(spec, source_id=""):
    """
    Splits a spectrogram into six equal, contiguous time slices after dropping
    the trailing frames that do not divide by six.

    :param spec: MelSpec or array of shape mel x frames
    :returns: SegmentedSpec with parts of shape 6 x mel x frames_per_part
    """
    values = spec.values if isinstance(spec, MelSpec) else np.asarray(spec)
    frames = values.shape[1]
    if frames < N_PARTS:
        raise DataError(f"{source_id}: {frames} frames cannot be split into {N_PARTS} parts")
    per_part = frames // N_PARTS
    trimmed = values[:, :per_part * N_PARTS]
    parts = np.stack(np.split(trimmed, N_PARTS, axis=1))
    return SegmentedSpec(parts, source_id)


def _spec_values(spec):
    return spec.parts if isinstance(spec, SegmentedSpec) else np.asarray(spec)


def mixup_between(a, target_a, b, target_b, lam):
    """
    Mixes two recordings: lam * a + (1 - lam) * b for the spectrogram and the
    elementwise maximum (label union) for the targets. The endpoints keep the
    target of the recording that is fully present.

    :param a: SegmentedSpec or spectrogram array
    :param b: Same type and shape as a
    :returns: Tuple of mixed spectrogram (type of a) and mixed target
    """
    values_a, values_b = _spec_values(a), _spec_values(b)
    if values_a.shape != values_b.shape:
        raise DataError(f"mixup: shape mismatch {values_a.shape} vs {values_b.shape}")
    target_a, target_b = np.asarray(target_a, dtype=np.float64), np.asarray(target_b, dtype=np.float64)
    if target_a.shape != target_b.shape:
        raise DataError(f"mixup: target length mismatch {target_a.shape} vs {target_b.shape}")
    if not 0 <= lam <= 1:
        raise DataError(f"mixup: lambda must lie in [0, 1], got {lam}")
    mixed = lam * values_a + (1.0 - lam) * values_b
    if lam == 1:
        target = target_a.copy()
    elif lam == 0:
        target = target_b.copy()
    else:
        target = np.maximum(target_a, target_b)
    if isinstance(a, SegmentedSpec):
        mixed = SegmentedSpec(mixed, a.source_id)
    return mixed, target


def mixup_within(spec, lam, permutation):
    """
    Mixes the six parts of one recording: part_i <- lam * part_i + (1 - lam) * part_perm(i)
    """
    permutation = np.asarray(permutation)
    if sorted(permutation.tolist()) != list(range(N_PARTS)):
        raise DataError(f"mixup: {permutation.tolist()} is not a permutation of 0..{N_PARTS - 1}")
    if not 0 <= lam <= 1:
        raise DataError(f"mixup: lambda must lie in [0, 1], got {lam}")
    parts = spec.parts
    return SegmentedSpec(lam * parts + (1.0 - lam) * parts[permutation], spec.source_id)


def rms(samples):
    return float(np.sqrt(np.mean(np.square(samples, dtype=np.float64))))


def mix_background(signal, noise, snr_db):
    """
    Adds noise, tiled or cropped to the signal length, scaled so that the
    signal-to-noise ratio equals snr_db. snr_db = inf returns the signal.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if np.isinf(snr_db) and snr_db > 0:
        return signal.copy()
    noise = np.asarray(noise, dtype=np.float64)
    if noise.size == 0:
        raise DataError("Background noise is empty")
    noise = np.resize(noise, signal.size)
    signal_rms, noise_rms = rms(signal), rms(noise)
    if signal_rms == 0:
        raise DataError("Signal is silent: signal-to-noise ratio is undefined")
    if noise_rms == 0:
        raise DataError("Background noise is silent")
    gain = signal_rms / noise_rms * 10.0 ** (-snr_db / 20.0)
    return signal + gain * noise


class Augmenter:
    """
    Applies the augmentation schedule of one training batch. Background mixing
    works on waveforms, mixup on segmented spectrograms.
    """

    def __init__(self, mixup, background, noise_bank=()):
        self.mixup = mixup
        self.background = background
        self.noise_bank = list(noise_bank)
        if background.p > 0 and not self.noise_bank:
            logger.info("No background noise clips available, background mixing disabled")

    def add_background(self, waveform, rng):
        if not self.noise_bank or rng.random() >= self.background.p:
            return waveform
        noise = self.noise_bank[int(rng.integers(len(self.noise_bank)))]
        snr_db = rng.uniform(self.background.snr_min, self.background.snr_max)
        if rms(waveform) == 0:
            return waveform
        return mix_background(waveform, crop_waveform(noise, waveform.size, rng), snr_db)

    def _within(self, specs, rng):
        mixed = []
        for spec in specs:
            if rng.random() < self.mixup.p_within:
                spec = mixup_within(spec, rng.beta(self.mixup.alpha, self.mixup.alpha), rng.permutation(N_PARTS))
            mixed.append(spec)
        return mixed

    def _between(self, specs, targets, rng):
        for _ in range(self.mixup.max_between_rounds):
            if len(specs) < 2 or rng.random() >= self.mixup.p_between:
                continue
            lam = rng.beta(self.mixup.alpha, self.mixup.alpha)
            partners = rng.permutation(len(specs))
            pairs = [mixup_between(specs[i], targets[i], specs[j], targets[j], lam) for i, j in enumerate(partners)]
            specs = [spec for spec, _ in pairs]
            targets = [target for _, target in pairs]
        return specs, targets

    def mix_batch(self, specs, targets, rng, segmented=True):
        """
        Mixup over a batch of specs with their target vectors

        :param segmented: False for whole spectrograms (binary model), which skips within-recording mixing
        :returns: Tuple of mixed specs and targets
        """
        specs, targets = list(specs), [np.asarray(t, dtype=np.float64) for t in targets]
        if segmented and self.mixup.within_first:
            specs = self._within(specs, rng)
        specs, targets = self._between(specs, targets, rng)
        if segmented and not self.mixup.within_first:
            specs = self._within(specs, rng)
        return specs, targets
