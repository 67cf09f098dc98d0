"""Command-line entry point: ``maskloc synth|train|detect|eval|ablate``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation.
"""

from __future__ import annotations

import csv
import functools
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import baselines, classifier, detector, evalkit, experiments, posopt, synth
from .cam import heatmap_image
from .config import ConfigError, build, read_config

EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 2, 3, 4


class DataError(Exception):
    pass


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (DataError, synth.ParseError, classifier.DatasetError, classifier.WeightFileError, FileNotFoundError) as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except (AssertionError, FloatingPointError) as exc:
            click.echo(f"internal error: {exc}", err=True)
            sys.exit(EXIT_INTERNAL)

    return wrapper


def _entries(path):
    return read_config(path) if path else {}


def _load_split(dataset, split):
    data = synth.load_dataset(dataset, [split])
    samples = data[split]
    if not samples:
        raise DataError(f"split {split!r} of {dataset} is empty")
    return samples


def _detector_config(path, samples, size_error=None, **overrides):
    entries = _entries(path)
    if "radius_nm" not in entries and "radius_nm" not in overrides:
        overrides["radius_nm"] = samples[0].radius_px * samples[0].nm_per_px
    cfg, _ = build(detector.DetectorConfig, entries, path, size_error=size_error, **overrides)
    return cfg


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


@click.group()
def main():
    """Weakly supervised particle localization with annealed Gaussian masks."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory (overrides 'out' key).")
@click.option("--seed", type=int, default=None)
@_guard
def synth_cmd(config_path, out, seed):
    """Generate a synthetic dataset from a SceneSpec config."""
    entries = read_config(config_path)
    spec, extras = build(synth.SceneSpec, entries, config_path, allowed_extra=("n", "out"), seed=seed)
    try:
        n = int(extras.get("n", 600))
    except ValueError:
        raise ConfigError("not an integer", key="n", line=entries["n"][1], path=config_path) from None
    if n < 10:
        raise ConfigError("need at least 10 samples", key="n", line=entries.get("n", (0, None))[1], path=config_path)
    out = out or extras.get("out")
    if not out:
        raise ConfigError("no output directory (set 'out' or pass --out)", key="out")
    splits = synth.generate_dataset(spec, n)
    synth.save_dataset(splits, out, spec.radius_px, spec.nm_per_px)
    for name, bal in synth.class_balance(splits).items():
        click.echo(f"{name}: {bal['positive'] + bal['negative']} images ({bal['positive']} positive, {bal['negative']} negative)")


main.add_command(synth_cmd, name="synth")


@main.command()
@click.option("--dataset", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Weight file to write.")
@click.option("--seed", type=int, default=None)
@_guard
def train(dataset, config_path, out, seed):
    """Train the presence classifier on the train split; report val accuracy."""
    cfg, _ = build(classifier.TrainConfig, _entries(config_path), config_path, seed=seed)
    data = synth.load_dataset(dataset, ["train", "val"])
    if not data["train"]:
        raise DataError("training split is empty")
    model = classifier.train([(s.image, s.label) for s in data["train"]], cfg)
    classifier.save_weights(model, out)
    report = {"weights": str(out), "seed": cfg.seed}
    if data["val"]:
        x = np.stack([s.image for s in data["val"]])
        y = np.array([s.label for s in data["val"]])
        scores, _ = classifier.predict_batch(model, x)
        report["val_accuracy"] = float(np.mean((scores >= 0.5) == y))
        report["val_images"] = len(y)
        click.echo(f"val_accuracy={report['val_accuracy']:.4f}")
    evalkit.write_json(Path(str(out) + ".report.json"), report)


@main.command()
@click.option("--weights", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--dataset", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--split", default="test", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--method", type=click.Choice(["opt", "sliding", "dog"]), default="opt", show_default=True)
@click.option("--size-error", type=float, default=None, help="Relative radius corruption, e.g. 0.2 for +20%.")
@click.option("--dump-heatmaps", is_flag=True)
@click.option("--dump-trajectories", is_flag=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--contrast-threshold", type=float, default=None, help="DoG contrast threshold.")
@_guard
def detect(weights, dataset, split, config_path, out, method, size_error, dump_heatmaps, dump_trajectories, seed, threads, contrast_threshold):
    """Write one detection JSON per image plus manifest.json."""
    samples = _load_split(dataset, split)
    cfg = _detector_config(config_path, samples, size_error)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if method != "dog" and weights is None:
        raise ConfigError("--weights is required for this method", key="weights")
    model = classifier.load_weights(weights) if weights else None

    if method == "dog":
        dcfg = baselines.DoGConfig(radius_px=cfg.radius_px(samples[0].nm_per_px))
        if contrast_threshold is not None:
            dcfg = dcfg.with_(contrast_threshold=contrast_threshold)
        results = baselines.dog_detect_dataset([s.image for s in samples], dcfg)
    else:

        def run(i):
            s = samples[i]
            if method == "sliding":
                return baselines.sliding_window_detect(model, s.image, cfg, s.nm_per_px), None
            log = detector.DetectLog()
            dets = detector.detect(model, s.image, cfg, s.nm_per_px, np.random.default_rng([seed, i]), log)
            return dets, log

        outputs = _map(run, range(len(samples)), threads)
        results = [d for d, _ in outputs]
        for s, (_, log) in zip(samples, outputs):
            if log is None:
                continue
            if dump_heatmaps:
                for k, heat in enumerate(log.heatmaps):
                    synth.write_pgm(out / f"{s.image_id}_cam{k}.pgm", heatmap_image(heat))
            if dump_trajectories:
                for k, traj in enumerate(log.trajectories):
                    posopt.write_trajectory_csv(out / f"{s.image_id}_traj{k}.csv", traj)
    for s, dets in zip(samples, results):
        detector.write_detections(out / f"{s.image_id}.json", dets)
    manifest = {"split": split, "method": method, "seed": seed, "images": [s.image_id for s in samples]}
    evalkit.write_json(out / "manifest.json", manifest)
    click.echo(f"{sum(len(d) for d in results)} detections in {len(samples)} images")


@main.command(name="eval")
@click.option("--detections", type=click.Path(file_okay=False), required=True)
@click.option("--dataset", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--split", default="test", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Metrics JSON (default: <detections>/metrics.json).")
@click.option("--pr-csv", type=click.Path(dir_okay=False), default=None)
@_guard
def eval_cmd(detections, dataset, split, out, pr_csv):
    """Score a detection directory against the split's annotations."""
    samples = _load_split(dataset, split)
    det_dir = Path(detections)
    gts = {s.image_id: evalkit.centers_to_boxes(s.centers, s.radius_px) for s in samples}
    preds = {}
    missing = 0
    for s in samples:
        f = det_dir / f"{s.image_id}.json"
        if f.exists():
            preds[s.image_id] = [(d.box, d.score) for d in detector.read_detections(f)]
        else:
            missing += 1
            preds[s.image_id] = []
    if missing == len(samples):
        click.echo(f"warning: no detection files found in {det_dir}", err=True)
    report = evalkit.metrics_report(preds, gts)
    out = Path(out) if out else det_dir / "metrics.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    evalkit.write_json(out, report)
    if pr_csv:
        evalkit.write_pr_csv(pr_csv, preds, gts)
    click.echo(f"mAP50={report['mAP50']:.4f} precision={report['precision']:.4f} recall={report['recall']:.4f} f1={report['f1']:.4f}")


@main.command()
@click.option("--suite", required=True, help=f"One of: {', '.join(sorted(experiments.ABLATION_SUITES))}")
@click.option("--dataset", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--weights", type=click.Path(exists=True, dir_okay=False), multiple=True, required=True, help="Repeat once per seed to vary the classifier too.")
@click.option("--split", default="test", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seeds", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="First seed.")
@click.option("--limit", type=int, default=None, help="Use only the first N images of the split.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="CSV table to write.")
@_guard
def ablate(suite, dataset, weights, split, config_path, seeds, seed, limit, out):
    """Run an ablation suite; one CSV row per setting, mean and std over seeds."""
    if suite not in experiments.ABLATION_SUITES:
        raise ConfigError(f"unknown suite {suite!r}; valid suites: {', '.join(sorted(experiments.ABLATION_SUITES))}", key="suite")
    samples = _load_split(dataset, split)[:limit]
    base = _detector_config(config_path, samples)
    models = [classifier.load_weights(w) for w in weights]
    rows = []
    for label, method, cfg in experiments.suite_configs(suite, base):
        maps, fwd = [], []
        for k in range(seeds):
            res = experiments.run_method(models[k % len(models)], samples, cfg, method, seed=seed + k)
            maps.append(res.map50)
            fwd.append(res.forwards_per_detection)
        rows.append([suite, label, method, seeds, np.mean(maps), np.std(maps), np.mean(fwd), np.std(fwd)])
        click.echo(f"{label:>16}  mAP50 {100 * np.mean(maps):6.2f} +- {100 * np.std(maps):5.2f}  forwards/detection {np.mean(fwd):8.1f}")
    tmp = Path(out).with_name(Path(out).name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["suite", "setting", "method", "seeds", "map50_mean", "map50_std", "forwards_per_detection_mean", "forwards_per_detection_std"])
        for r in rows:
            w.writerow(r[:4] + [f"{v:.6f}" for v in r[4:]])
    tmp.replace(out)


if __name__ == "__main__":
    main()
