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
Layered run configuration: config/common.ini, the task's melspec.ini, an
optional user ini file and section.key=value overrides, in that order.
"""

import io
import os
import logging
import dataclasses
import configparser

from soundscape.audio_dsp import MelSpecConfig
from soundscape.augment import BackgroundConfig, MixupConfig
from soundscape.errors import ConfigError
from soundscape.evaluation import BootstrapConfig
from soundscape.postprocessing import PostProcessConfig
from soundscape.synth_corpus import SynthConfig
from soundscape.utils import Utils
from sound_classifier.layers import BackboneConfig, GeMConfig
from sound_classifier.trainer import BinaryTrainConfig, LossConfig, TrainConfig

logger = logging.getLogger(__name__)

TASKS = ("s1", "s2")
CONFIG_DIR_ENV = "SOUNDSCAPE_CONFIG_DIR"
MELSPEC_KEYS = ("window_size", "hop_size", "fmin", "fmax", "mel_bins", "power", "top_db", "allow_empty_filters")
MELSPEC_INT_KEYS = ("window_size", "hop_size", "mel_bins")
TRUE_WORDS = ("1", "yes", "true", "on")
FALSE_WORDS = ("0", "no", "false", "off")


def default_config_dir():
    return os.environ.get(CONFIG_DIR_ENV) or os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                                                          "config")


class RunConfig:
    """
    Every key has a default in common.ini; user files and overrides may only
    change existing keys.
    """

    def __init__(self, task="s1", config_file=None, overrides=(), config_dir=None):
        if task not in TASKS:
            raise ConfigError(f"Unknown task '{task}', expected one of {list(TASKS)}")
        self.task = task
        config_dir = config_dir or default_config_dir()
        self.config = configparser.ConfigParser(interpolation=None)
        common = os.path.join(config_dir, "common.ini")
        melspec = os.path.join(config_dir, task, "melspec.ini")
        for path in (common, melspec):
            if not os.path.isfile(path):
                raise ConfigError(f"Missing config file {path}")
        self.config.read([common, melspec])
        if config_file is not None:
            self._merge_file(config_file)
        for item in overrides or ():
            self._apply_override(item)

    def _merge_file(self, path):
        user = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as config_file:
                user.read_file(config_file)
        except OSError as e:
            raise ConfigError(f"{path}: cannot read config file ({e.strerror})") from e
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from e
        for section in user.sections():
            for key, value in user[section].items():
                self.set(section, key, value, origin=path)

    def _apply_override(self, item):
        name, sep, value = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot or not section or not key:
            raise ConfigError(f"Override '{item}' must look like section.key=value")
        self.set(section, key.strip(), value.strip(), origin="override")

    def set(self, section, key, value, origin="override"):
        key = key.lower()
        if not self.config.has_section(section):
            raise ConfigError(f"{origin}: unknown config section [{section}]")
        if not self.config.has_option(section, key):
            raise ConfigError(f"{origin}: unknown config key '{key}' in section [{section}]")
        self.config[section][key] = value

    def get(self, section, key):
        try:
            return self.config[section][key].strip()
        except KeyError as k:
            logging.error(f"{k} is not a key in section [{section}] of the run config")
            raise ConfigError(f"'{key}' is not a key in section [{section}] of the run config") from None

    def _convert(self, section, key, kind):
        value = self.get(section, key)
        try:
            return kind(value)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = '{value}' is not a valid {kind.__name__}") from None

    def get_int(self, section, key):
        return self._convert(section, key, int)

    def get_float(self, section, key):
        return self._convert(section, key, float)

    def get_bool(self, section, key):
        value = self.get(section, key).lower()
        if value in TRUE_WORDS:
            return True
        if value in FALSE_WORDS:
            return False
        raise ConfigError(f"[{section}] {key} = '{value}' is not a boolean")

    @property
    def seed(self):
        return self.get_int("general", "seed")

    @property
    def jobs(self):
        return self.get_int("general", "jobs")

    @property
    def progress(self):
        return self.get_bool("general", "progress")

    @property
    def log_level(self):
        return self.get("logs", "level")

    def path(self, key):
        return self.get("general", key)

    def melspec(self):
        base = MelSpecConfig.preset(self.get("melspec", "preset"), self.get_int("melspec", "sample_rate"))
        changes = {}
        for key in MELSPEC_KEYS:
            value = self.get("melspec", key)
            if not value:
                continue
            if key == "top_db":
                changes[key] = None if value.lower() == "none" else self.get_float("melspec", key)
            elif key == "allow_empty_filters":
                changes[key] = self.get_bool("melspec", key)
            elif key in MELSPEC_INT_KEYS:
                changes[key] = self.get_int("melspec", key)
            else:
                changes[key] = self.get_float("melspec", key)
        return dataclasses.replace(base, **changes) if changes else base

    def _backbone(self, section):
        return BackboneConfig.from_text(self.get(section, "blocks"),
                                        input_offset=self.get_float("model", "input_offset"),
                                        input_scale=self.get_float("model", "input_scale"))

    def backbone(self):
        return self._backbone("model")

    def binary_backbone(self):
        return self._backbone("binary")

    def gem(self):
        return GeMConfig(p=self.get_float("model", "gem_p"), eps=self.get_float("model", "gem_eps"),
                         trainable=self.get_bool("model", "gem_trainable"))

    def mixup(self):
        return MixupConfig(alpha=self.get_float("mixup", "alpha"), p_between=self.get_float("mixup", "p_between"),
                           max_between_rounds=self.get_int("mixup", "max_between_rounds"),
                           p_within=self.get_float("mixup", "p_within"),
                           within_first=self.get_bool("mixup", "within_first"))

    def background(self):
        noise_dir = self.get("background", "noise_dir")
        return BackgroundConfig(p=self.get_float("background", "p"), snr_min=self.get_float("background", "snr_min"),
                                snr_max=self.get_float("background", "snr_max"),
                                noise_dir=os.path.join(self.path("data_dir"), noise_dir) if noise_dir else None)

    def train(self):
        return TrainConfig(epochs=self.get_int("train", "epochs"), batch_size=self.get_int("train", "batch_size"),
                           lr_max=self.get_float("train", "lr_max"), lr_min=self.get_float("train", "lr_min"),
                           crop_seconds=self.get_float("train", "crop_seconds"),
                           adam_betas=(self.get_float("train", "adam_beta1"), self.get_float("train", "adam_beta2")),
                           adam_eps=self.get_float("train", "adam_eps"),
                           weight_decay=self.get_float("train", "weight_decay"))

    def loss(self):
        return LossConfig(label_smoothing=self.get_float("loss", "label_smoothing"),
                          use_rating_weights=self.get_bool("loss", "use_rating_weights"))

    def binary_train(self):
        return BinaryTrainConfig(epochs=self.get_int("binary", "epochs"),
                                 batch_size=self.get_int("binary", "batch_size"),
                                 lr_max=self.get_float("binary", "lr_max"), lr_min=self.get_float("binary", "lr_min"),
                                 crop_seconds=self.get_float("binary", "clip_seconds"),
                                 adam_betas=(self.get_float("train", "adam_beta1"), self.get_float("train", "adam_beta2")),
                                 adam_eps=self.get_float("train", "adam_eps"),
                                 weight_decay=self.get_float("train", "weight_decay"))

    def postprocess(self):
        floats = ("boost_gamma", "smooth_center", "smooth_neighbor", "binary_factor", "radius_km", "day_window",
                  "percentile")
        flags = ("use_boost", "use_smoothing", "use_binary", "use_filter")
        return PostProcessConfig(**{k: self.get_float("postprocess", k) for k in floats},
                                 **{k: self.get_bool("postprocess", k) for k in flags})

    def bootstrap(self):
        return BootstrapConfig(k=self.get_int("bootstrap", "k"),
                               outer_fraction=self.get_float("bootstrap", "outer_fraction"),
                               j=self.get_int("bootstrap", "j"),
                               inner_fraction=self.get_float("bootstrap", "inner_fraction"),
                               seed=self.get_int("bootstrap", "seed"), average=self.get("bootstrap", "average"))

    @property
    def use_bootstrap(self):
        return self.get_bool("bootstrap", "use_bootstrap")

    def percentile_grid(self):
        text = self.get("bootstrap", "grid")
        try:
            return [float(q) for q in text.split(",") if q.strip()]
        except ValueError:
            raise ConfigError(f"[bootstrap] grid = '{text}' must be comma-separated numbers") from None

    def synth(self):
        ints = ("n_species", "n_train_clips", "calls_per_species", "n_soundscapes", "n_empty_soundscapes",
                "n_binary_clips", "n_background_clips")
        floats = ("clip_min_seconds", "clip_max_seconds", "p_secondary", "soundscape_seconds", "call_probability",
                  "binary_seconds", "background_seconds", "noise_level", "overlap", "site_latitude", "site_longitude")
        return SynthConfig(**{k: self.get_int("synth", k) for k in ints},
                           **{k: self.get_float("synth", k) for k in floats},
                           site_date=self.get("synth", "site_date"),
                           sample_rate=self.get_int("melspec", "sample_rate"), seed=self.seed)

    def to_text(self):
        buffer = io.StringIO()
        self.config.write(buffer)
        return buffer.getvalue()

    def dump(self, path):
        Utils.atomic_write_text(path, self.to_text())
