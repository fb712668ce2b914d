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
import time
import logging
import argparse

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from soundscape.datamodel import build_label_space, parse_row_id, parse_soundscape_truth, parse_train_metadata
from soundscape.errors import SoundscapeError
from soundscape.evaluation import bootstrap_evaluate, cv3_file_ids, optimize_percentile, threshold_prediction_fn
from soundscape.inference import predict_all, predict_soundscape
from soundscape.run_config import RunConfig
from soundscape.synth_corpus import write_corpus
from soundscape.utils import Utils
from sound_classifier.bird import BIRD
from soundscape_cli import data_path, load_noise_bank, load_soundscapes, make_postprocessor, read_text

# About one cell in eight of the synthetic soundscapes holds a call
SYNTH_OVERRIDES = [
    "bootstrap.grid=0.7,0.75,0.8,0.825,0.85,0.875,0.9,0.925,0.95",
    "bootstrap.use_bootstrap=False",
]
TARGET_F1 = 0.80


def parser():
    parser = argparse.ArgumentParser(description="Train bird classifiers on a synthetic corpus and bootstrap-evaluate "
                                                 "single seeds against their ensemble")
    parser.add_argument("-task", type=str, default="s2", help="s1 | s2 (default)")
    parser.add_argument("-seeds", type=int, default=3, help="number of seeds to train (default 3)")
    parser.add_argument("-output", type=str, default="benchmark_output", help="working folder (default benchmark_output)")
    parser.add_argument("-jobs", type=int, default=1, help="worker count")
    parser.add_argument("-override", dest="overrides", action="append", default=[], help="section.key=value")
    return parser.parse_args()


def print_gh_markdown(table_data):
    """
    Logs a table of results in github markdown format
    :param table_data
    :type  table_data: <class 'dict'>
    """
    logging.info(f"<p><table>")
    logging.info(f"<thead>")
    logging.info(f"<tr><th>Model</th><th>Percentile</th><th>F1 average</th><th>median</th><th>min</th><th>max</th><th>std</th><th>Runtime (on cpu)</th></tr>")
    logging.info(f"</thead>")
    logging.info(f"<tbody>")
    for model, data in table_data.items():
        report = data["report"]
        logging.info(f"<tr><td>{model}</td><td>{data['q']}</td><td>{report.average:.4f}</td><td>{report.median:.4f}</td><td>{report.min:.4f}</td><td>{report.max:.4f}</td><td>{report.std:.4f}</td><td>{data['time']:.2f}s</td></tr>")
    logging.info(f"</tbody>")
    logging.info(f"</table></p>")


def evaluate_blend(cfg, processor, model_matrices, truth):
    """
    Picks the percentile on the CV-3 files, then bootstraps F1 at that percentile

    :returns: The chosen percentile and the BootstrapReport
    :rtype: tuple
    """
    blended = processor.blend(model_matrices)
    ids = cv3_file_ids(truth)
    kept = set(ids)
    selected = [m for m in blended if m.soundscape_id in kept]
    selected_truth = {rid: labels for rid, labels in truth.items() if parse_row_id(rid)[0] in kept}
    q, _ = optimize_percentile(selected, selected_truth, processor.space, cfg.percentile_grid(), cfg.bootstrap(),
                               use_bootstrap=cfg.use_bootstrap, jobs=cfg.jobs)
    report = bootstrap_evaluate(threshold_prediction_fn(selected, q, processor.space), ids, selected_truth,
                                cfg.bootstrap(), cfg.jobs)
    return q, report


def plot(table_data, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    colors = ["r", "g", "b", "c", "m", "y"]
    for i, (model, data) in enumerate(table_data.items()):
        color = "k" if model == "ensemble" else colors[i % len(colors)]
        ax.hist(data["report"].scores, bins=30, color=color, alpha=0.4, label=f"{model} ({data['report'].average:.3f})")
    ax.axvline(TARGET_F1, color="k", linestyle="--")
    ax.set_xlabel("row-wise micro F1")
    ax.set_ylabel("resamples")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="[%(asctime)s] %(name)s:%(levelname)s in %(filename)s:%(lineno)s - %(message)s", filemode='w')

    args = parser()

    overrides = SYNTH_OVERRIDES + [f"general.data_dir={os.path.join(args.output, 'data')}",
                                   f"general.model_dir={os.path.join(args.output, 'models')}",
                                   f"general.output_dir={args.output}",
                                   f"general.jobs={args.jobs}"] + args.overrides
    try:
        cfg = RunConfig(args.task, overrides=overrides)
        melspec = cfg.melspec()

        start = time.time()
        write_corpus(cfg.path("data_dir"), cfg.synth(), melspec, jobs=cfg.jobs)
        logging.info(f"Synthetic corpus written in {time.time() - start:.2f}s")

        recordings = parse_train_metadata(read_text(data_path(cfg, "train_metadata.csv")),
                                          data_path(cfg, "train_audio"), sample_rate=melspec.sample_rate)
        space = build_label_space(recordings)
        noise_bank = load_noise_bank(cfg)
        soundscapes = load_soundscapes(cfg)
        truth = parse_soundscape_truth(read_text(data_path(cfg, "soundscape_labels.csv")), space)
        processor = make_postprocessor(cfg, space)

        table_data = {}
        per_seed = []
        bird = BIRD(cfg, "benchmark")
        for seed in range(cfg.seed, cfg.seed + args.seeds):
            start = time.time()
            model, _ = bird.train(recordings, space, noise_bank, seed=seed)
            matrices = predict_all(predict_soundscape, model, soundscapes, melspec, cfg.jobs)
            elapsed = time.time() - start
            per_seed.append(matrices)
            q, report = evaluate_blend(cfg, processor, [matrices], truth)
            table_data[f"seed {seed}"] = {"report": report, "q": q, "time": elapsed}
            logging.info(f"seed {seed}: {report.summary()}")

        q, report = evaluate_blend(cfg, processor, per_seed, truth)
        table_data["ensemble"] = {"report": report, "q": q,
                                  "time": sum(data["time"] for data in table_data.values())}
        logging.info(f"ensemble: {report.summary()}")
    except SoundscapeError as e:
        logging.error(f"Benchmark failed: {e}")
        sys.exit(e.exit_code)

    print_gh_markdown(table_data)

    worst = min(data["report"].average for model, data in table_data.items() if model != "ensemble")
    if table_data["ensemble"]["report"].average < worst:
        logging.warning(f"Ensemble scores below the worst single seed ({worst:.4f})")
    if table_data["ensemble"]["report"].average < TARGET_F1:
        logging.warning(f"Ensemble average F1 below {TARGET_F1}")

    plot(table_data, os.path.join(args.output, "f1_bootstrap.png"))
    logging.info(f"Plot written to {os.path.join(args.output, 'f1_bootstrap.png')}")
