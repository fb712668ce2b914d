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

import os
import sys
import glob
import logging
import argparse

import pandas as pd

from soundscape.audio_dsp import read_wav
from soundscape.datamodel import (LabelSpace, PredictionMatrix, build_label_space, parse_binary_metadata,
                                  parse_soundscape_metadata, parse_soundscape_truth, parse_train_metadata,
                                  parse_train_rows, serialize_label_sets)
from soundscape.errors import ConfigError, DataError, SoundscapeError
from soundscape.evaluation import (bootstrap_evaluate, cv3_file_ids, optimize_percentile, threshold_prediction_fn,
                                   truth_by_file)
from soundscape.inference import (average_binary, binary_from_csv_text, binary_to_csv_text, predict_all,
                                  predict_binary, predict_soundscape)
from soundscape.postprocessing import PostProcessor, SpeciesGeoIndex, sites_from_metadata
from soundscape.run_config import TASKS, RunConfig
from soundscape.synth_corpus import write_corpus
from soundscape.utils import Utils
from sound_classifier.bird import BIRD
from sound_classifier.binary import BINARY

COMMANDS = ("gen-data", "train", "train-binary", "infer", "postprocess", "evaluate", "sweep-threshold")


class UsageParser(argparse.ArgumentParser):
    """
    Bad usage exits with status 1; status 2 is reserved for data errors
    """

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


def parser():
    parser = UsageParser(prog="soundscape_cli.py",
                         description="Bird call detection in soundscapes: synthetic data, training, inference, "
                                     "post-processing and bootstrapped evaluation")
    parser.add_argument("command", choices=COMMANDS, help=" | ".join(COMMANDS))
    parser.add_argument("-config", dest="config", type=str, help="user ini file read after the defaults")
    parser.add_argument("-task", dest="task", type=str, default="s1", help=f"melspec setting: {' | '.join(TASKS)}")
    parser.add_argument("-override", dest="overrides", action="append", default=[],
                        help="section.key=value, may be repeated")
    parser.add_argument("-jobs", dest="jobs", type=int, help="worker count (overrides general.jobs)")
    parser.add_argument("-seed", dest="seed", type=int, help="seed (overrides general.seed)")
    parser.add_argument("-name", dest="name", type=str, help="model name, the folder under model_dir")
    parser.add_argument("-checkpoint", dest="checkpoints", action="append", default=[],
                        help="bird checkpoint for infer, may be repeated")
    parser.add_argument("-binary_checkpoint", dest="binary_checkpoints", action="append", default=[],
                        help="binary checkpoint for infer, may be repeated")
    parser.add_argument("-predictions", dest="predictions", action="append", default=[],
                        help="folder of per-soundscape bird predictions, one per model, may be repeated")
    parser.add_argument("-binary_predictions", dest="binary_predictions", action="append", default=[],
                        help="folder of per-soundscape binary predictions, averaged when repeated")
    parser.add_argument("-output", dest="output", type=str, help="output file or folder of the command")
    return parser


def read_text(path):
    try:
        with open(path, encoding="utf-8") as text_file:
            return text_file.read()
    except OSError as e:
        raise DataError(f"{path}: cannot read ({e.strerror})") from e


def data_path(cfg, *parts):
    return os.path.join(cfg.path("data_dir"), *parts)


def model_name(path):
    stem = os.path.splitext(os.path.basename(path))[0]
    return f"{os.path.basename(os.path.dirname(os.path.abspath(path)))}_{stem}"


def load_noise_bank(cfg):
    background = cfg.background()
    if background.p <= 0 or not background.noise_dir or not os.path.isdir(background.noise_dir):
        return []
    sample_rate = cfg.melspec().sample_rate
    bank = []
    for path in sorted(glob.glob(os.path.join(background.noise_dir, "*.wav"))):
        samples, rate = read_wav(path)
        if rate != sample_rate:
            raise DataError(f"{path}: sample rate {rate} Hz, expected {sample_rate} Hz")
        bank.append(samples)
    logging.info(f"Loaded {len(bank)} background clips from {background.noise_dir}")
    return bank


def load_soundscapes(cfg, with_truth=False):
    truth = parse_soundscape_truth(read_text(data_path(cfg, "soundscape_labels.csv"))) if with_truth else None
    return parse_soundscape_metadata(read_text(data_path(cfg, "soundscapes.csv")), data_path(cfg, "soundscapes"),
                                     truth=truth, sample_rate=cfg.melspec().sample_rate)


def load_prediction_dir(folder):
    space = LabelSpace.from_text(read_text(os.path.join(folder, "labels.txt")))
    paths = sorted(glob.glob(os.path.join(folder, "*.csv")))
    if not paths:
        raise DataError(f"{folder}: no prediction files")
    return space, [PredictionMatrix.from_csv_text(read_text(p), space) for p in paths]


def load_predictions(folders):
    if not folders:
        raise ConfigError("Give at least one -predictions folder")
    space, model_matrices = None, []
    for folder in folders:
        folder_space, matrices = load_prediction_dir(folder)
        if space is not None and folder_space != space:
            raise DataError(f"{folder}: label space differs from {folders[0]}")
        space = folder_space
        model_matrices.append(matrices)
    return space, model_matrices


def load_binary(folders):
    if not folders:
        return None
    per_model = []
    for folder in folders:
        paths = sorted(glob.glob(os.path.join(folder, "*.csv")))
        if not paths:
            raise DataError(f"{folder}: no binary prediction files")
        per_model.append(dict(binary_from_csv_text(read_text(p)) for p in paths))
    ids = sorted(per_model[0])
    for folder, found in zip(folders, per_model):
        if sorted(found) != ids:
            raise DataError(f"{folder}: binary predictions cover other soundscapes than {folders[0]}")
    return {sid: average_binary([found[sid] for found in per_model]) for sid in ids}


def make_postprocessor(cfg, space):
    post = cfg.postprocess()
    index, sites = None, {}
    if post.use_filter:
        index = SpeciesGeoIndex.build(parse_train_rows(read_text(data_path(cfg, "train_metadata.csv"))))
        sites = sites_from_metadata(read_text(data_path(cfg, "soundscapes.csv")))
    return PostProcessor(post, space, index, sites)


def blended_predictions(cfg, args):
    space, model_matrices = load_predictions(args.predictions)
    processor = make_postprocessor(cfg, space)
    return processor, processor.blend(model_matrices, load_binary(args.binary_predictions))


def restrict_truth(truth, blended):
    """
    Truth rows of the predicted soundscapes
    """
    files = truth_by_file(truth)
    predicted = {m.soundscape_id for m in blended}
    missing = sorted(predicted - set(files))
    if missing:
        raise DataError(f"No truth rows for {missing}")
    return {rid: labels for sid in sorted(predicted) for rid, labels in files[sid].items()}


def gen_data(cfg, args):
    out_dir = args.output or cfg.path("data_dir")
    species = write_corpus(out_dir, cfg.synth(), cfg.melspec(), jobs=cfg.jobs)
    cfg.dump(os.path.join(out_dir, "run_config.ini"))
    logging.info(f"Species: {', '.join(sp.code for sp in species)}")


def train(cfg, args):
    melspec = cfg.melspec()
    recordings = parse_train_metadata(read_text(data_path(cfg, "train_metadata.csv")), data_path(cfg, "train_audio"),
                                      sample_rate=melspec.sample_rate)
    space = build_label_space(recordings)
    bird = BIRD(cfg, args.name or "bird")
    bird.train(recordings, space, load_noise_bank(cfg))
    logging.info(f"Checkpoint written to {bird.params_path(cfg.seed)}")


def train_binary(cfg, args):
    clips = parse_binary_metadata(read_text(data_path(cfg, "binary_metadata.csv")), data_path(cfg, "binary_audio"),
                                  sample_rate=cfg.melspec().sample_rate)
    binary = BINARY(cfg, args.name or "binary")
    binary.train(clips)
    logging.info(f"Checkpoint written to {binary.params_path(cfg.seed)}")


def infer(cfg, args):
    if not args.checkpoints and not args.binary_checkpoints:
        raise ConfigError("infer needs at least one -checkpoint or -binary_checkpoint")
    melspec = cfg.melspec()
    soundscapes = load_soundscapes(cfg)
    out_dir = args.output or cfg.path("output_dir")
    for path in args.checkpoints:
        model, space = BIRD(cfg).load(path)
        folder = os.path.join(out_dir, "predictions", model_name(path))
        for m in predict_all(predict_soundscape, model, soundscapes, melspec, cfg.jobs):
            Utils.atomic_write_text(os.path.join(folder, f"{m.soundscape_id}.csv"), m.to_csv_text(space))
        Utils.atomic_write_text(os.path.join(folder, "labels.txt"), space.to_text())
        cfg.dump(os.path.join(folder, "run_config.ini"))
        logging.info(f"Wrote predictions of {len(soundscapes)} soundscapes to {folder}")
    for path in args.binary_checkpoints:
        model = BINARY(cfg).load(path)
        folder = os.path.join(out_dir, "binary_predictions", model_name(path))
        probs = predict_all(predict_binary, model, soundscapes, melspec, cfg.jobs)
        for s, p in zip(soundscapes, probs):
            Utils.atomic_write_text(os.path.join(folder, f"{s.id}.csv"), binary_to_csv_text(s.id, p))
        cfg.dump(os.path.join(folder, "run_config.ini"))
        logging.info(f"Wrote binary predictions of {len(soundscapes)} soundscapes to {folder}")


def postprocess(cfg, args):
    processor, blended = blended_predictions(cfg, args)
    threshold, rows = processor.threshold(blended)
    output = args.output or os.path.join(cfg.path("output_dir"), "submission.csv")
    Utils.atomic_write_text(output, serialize_label_sets(rows))
    cfg.dump(os.path.join(os.path.dirname(os.path.abspath(output)), "run_config.ini"))
    logging.info(f"Wrote {len(rows)} submission rows to {output} (threshold {threshold:.6g})")


def evaluate(cfg, args):
    processor, blended = blended_predictions(cfg, args)
    truth = restrict_truth(parse_soundscape_truth(read_text(data_path(cfg, "soundscape_labels.csv")),
                                                  processor.space), blended)
    ids = cv3_file_ids(truth)
    predict = threshold_prediction_fn(blended, processor.cfg.percentile, processor.space)
    report = bootstrap_evaluate(predict, ids, truth, cfg.bootstrap(), cfg.jobs)
    output = args.output or os.path.join(cfg.path("output_dir"), "bootstrap_report.json")
    Utils.atomic_write_text(output, report.to_json())
    report.plot_histogram(os.path.splitext(output)[0] + ".png")
    cfg.dump(os.path.join(os.path.dirname(os.path.abspath(output)), "run_config.ini"))
    logging.info(report.summary())
    print(report.summary())


def sweep_threshold(cfg, args):
    processor, blended = blended_predictions(cfg, args)
    truth = restrict_truth(parse_soundscape_truth(read_text(data_path(cfg, "soundscape_labels.csv")),
                                                  processor.space), blended)
    ids = set(cv3_file_ids(truth))
    selected = [m for m in blended if m.soundscape_id in ids]
    truth = restrict_truth(truth, selected)
    best, curve = optimize_percentile(selected, truth, processor.space, cfg.percentile_grid(), cfg.bootstrap(),
                                      use_bootstrap=cfg.use_bootstrap, jobs=cfg.jobs)
    output = args.output or os.path.join(cfg.path("output_dir"), "threshold_curve.csv")
    frame = pd.DataFrame([(repr(q), repr(score)) for q, score in curve], columns=["percentile", "f1"])
    Utils.atomic_write_text(output, frame.to_csv(index=False))
    plot_curve(curve, best, os.path.splitext(output)[0] + ".png")
    cfg.dump(os.path.join(os.path.dirname(os.path.abspath(output)), "run_config.ini"))
    logging.info(f"Best percentile {best}")
    print(f"best percentile: {best}")


def plot_curve(curve, best, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([q for q, _ in curve], [s for _, s in curve], linewidth=2.0, color="b", alpha=0.5, marker="o")
    ax.axvline(best, color="k", linestyle="--", label=f"best {best}")
    ax.set_xlabel("percentile")
    ax.set_ylabel("F1")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


HANDLERS = {
    "gen-data": gen_data,
    "train": train,
    "train-binary": train_binary,
    "infer": infer,
    "postprocess": postprocess,
    "evaluate": evaluate,
    "sweep-threshold": sweep_threshold,
}


def run(argv=None):
    """
    Runs one command and returns the exit status: 0 success, 1 usage or
    config error, 2 data or file system error, 3 numeric failure.
    """
    args = parser().parse_args(argv)
    try:
        overrides = list(args.overrides)
        if args.jobs is not None:
            overrides.append(f"general.jobs={args.jobs}")
        if args.seed is not None:
            overrides.append(f"general.seed={args.seed}")
        cfg = RunConfig(args.task, args.config, overrides)
        Utils.setup_logging(cfg.log_level)
        HANDLERS[args.command](cfg, args)
    except SoundscapeError as e:
        logging.error(f"{args.command} failed: {e}")
        return e.exit_code
    except OSError as e:
        logging.error(f"{args.command} failed: {e}")
        return DataError.exit_code
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
