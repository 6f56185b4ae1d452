"""``ram`` command line: train, sweep, report, glimpse-debug."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import report as rep
from .dataset import (
    AugmentConfig,
    ConfigError,
    IdxConsistencyError,
    IdxFormatError,
    ImageSample,
    augment,
    load_idx_arrays,
)
from .glimpse import GlimpseConfig, Location, retina, write_pgm
from .model import RamParams, forward_episode
from .nncore import load_params, save_params
from .sweep import RunResult, SweepSpec, compare, format_trend, load_results, run_sweep
from .training import RunConfig, prepare_data, train

log = logging.getLogger("ram")


def _add_data_flags(p):
    p.add_argument("--data-dir", help="directory with MNIST IDX files")
    p.add_argument("--canvas", type=int, help="augmented canvas side in pixels")
    p.add_argument("--rotation-max", type=float, help="max rotation in degrees")
    p.add_argument("--pixel-noise-std", type=float, help="additive pixel noise std")
    p.add_argument("--seed", type=int, help="run seed (also seeds test-set augmentation)")


def _apply_data_flags(cfg: RunConfig, args) -> RunConfig:
    aug = cfg.augment
    if args.canvas is not None:
        aug = replace(aug, canvas_size=args.canvas)
    if args.rotation_max is not None:
        aug = replace(aug, rotation_max=args.rotation_max)
    if args.pixel_noise_std is not None:
        aug = replace(aug, pixel_noise_std=args.pixel_noise_std)
    if args.seed is not None:
        aug = replace(aug, seed=args.seed)
        cfg = replace(cfg, seed=args.seed)
    cfg = replace(cfg, augment=aug.validate())
    if args.data_dir:
        cfg = replace(cfg, data_dir=args.data_dir)
    return cfg


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg = _apply_data_flags(cfg, args)
    if args.epochs is not None:
        cfg = replace(cfg, hyper=replace(cfg.hyper, epochs=args.epochs))
    if args.checkpoint_every is not None:
        cfg = replace(cfg, checkpoint_every=args.checkpoint_every)
    cfg.hyper.validate()
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "config.json"))
    data = prepare_data(cfg)
    with rep.FileSink(os.path.join(args.out, "metrics.csv")) as sink:
        res = train(cfg, data, sink, checkpoint_dir=args.out)
    save_params(os.path.join(args.out, "checkpoint.npz"), res.params.tensors, res.params.meta())
    epochs = max(res.epochs_run, 1)
    result = RunResult("baseline", None, cfg, res.final_accuracy, res.best_accuracy, res.wall_seconds,
                       res.wall_seconds / epochs, res.train_seconds / epochs, res.status, res.message,
                       os.path.join(args.out, "metrics.csv"))
    with open(os.path.join(args.out, "result.json"), "w") as fh:
        json.dump(result.to_dict(), fh, indent=2)
    print(f"{res.status}: test accuracy {res.final_accuracy:.4f} (best eval {res.best_accuracy:.4f}) "
          f"in {res.wall_seconds:.1f}s over {res.epochs_run} epochs")
    return 0 if res.status == "completed" else 1


def cmd_sweep(args) -> int:
    spec = SweepSpec.load(args.spec)
    base = RunConfig.load(args.baseline) if args.baseline else RunConfig()
    base = _apply_data_flags(base, args)
    data = prepare_data(base)
    results = run_sweep(spec, base, data, parallelism=args.parallel, out_dir=args.out)
    trend = compare(results)
    text = format_trend(trend)
    print(text)
    with open(os.path.join(args.out, "trends.txt"), "w") as fh:
        fh.write(text + "\n")
    rep.summary_table(results, os.path.join(args.out, "summary.csv"))
    bad = [r for r in results if r.status != "completed"]
    for r in bad:
        print(f"run {r.parameter}={r.value} seed={r.config.seed}: {r.status} {r.message}", file=sys.stderr)
    return 0 if not bad else 2


def cmd_report(args) -> int:
    results = load_results(args.inp)
    if not results:
        print(f"no result.json files under {args.inp}", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    rep.summary_table(results, os.path.join(args.out, "summary.csv"))
    streams = [(f"{r.parameter}={r.value} s{r.config.seed}", r.records) for r in results]
    rep.plot_accuracy_vs_time(streams, os.path.join(args.out, "accuracy_vs_time.svg"),
                              title=f"Accuracy vs time, varying {results[0].parameter}")
    trend = compare(results)
    ok = [row for row in trend.rows if row.completed]
    try:
        xs = [float(row.value) for row in ok]
        rep.plot_trend(xs, [row.train_seconds_per_epoch for row in ok], os.path.join(args.out, "time_vs_value.svg"),
                       xlabel=trend.parameter, ylabel="training seconds / epoch",
                       title=f"Training time vs {trend.parameter}")
    except (TypeError, ValueError):
        pass
    with open(os.path.join(args.out, "trends.json"), "w") as fh:
        json.dump(trend.to_dict(), fh, indent=2, default=str)
    text = format_trend(trend)
    with open(os.path.join(args.out, "trends.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return 0


def _parse_image_ref(ref: str):
    path, _, idx = ref.rpartition("#")
    if not path:
        raise SystemExit(f"--image expects <images-idx>#<n>, got {ref!r}")
    images_path = path
    labels_path = path.replace("images-idx3", "labels-idx1")
    if labels_path == images_path or not os.path.exists(labels_path):
        raise SystemExit(f"cannot find labels file next to {images_path}")
    return images_path, labels_path, int(idx)


def cmd_glimpse_debug(args) -> int:
    images_path, labels_path, n = _parse_image_ref(args.image)
    images, labels = load_idx_arrays(images_path, labels_path)
    sample = ImageSample(images[n], int(labels[n]))
    if args.canvas:
        aug = AugmentConfig(canvas_size=args.canvas, rotation_max=args.rotation_max,
                            pixel_noise_std=args.pixel_noise_std, seed=args.seed)
        sample = augment(sample, aug, np.random.default_rng(args.seed))
    x, y = (float(v) for v in args.loc.split(","))
    os.makedirs(args.out, exist_ok=True)
    write_pgm(os.path.join(args.out, "image.pgm"), sample.pixels)
    if args.checkpoint:
        tensors, meta = load_params(args.checkpoint)
        params = RamParams.from_meta(meta, tensors)
        cfg = params.glimpse
    else:
        params = None
        cfg = GlimpseConfig(1, args.scales, args.bandwidth)
    obs = retina(sample.pixels, Location(x, y), cfg)
    for s, patch in enumerate(obs.patches, start=1):
        write_pgm(os.path.join(args.out, f"scale{s}.pgm"), patch, upscale=args.upscale)
    print(f"label {sample.label}; wrote image.pgm and {len(obs.patches)} scale patches to {args.out}")
    if params is not None:
        trace = forward_episode(sample, params, args.std, np.random.default_rng(args.seed))
        with open(os.path.join(args.out, "trace.json"), "w") as fh:
            json.dump(trace.to_json(), fh, indent=2)
        print(f"episode reward {trace.reward:.0f}; trace.json written")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ram", description="Recurrent attention model on augmented MNIST")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", help="run config JSON (defaults to the baseline)")
    p.add_argument("--out", default="runs/train")
    p.add_argument("--epochs", type=int)
    p.add_argument("--checkpoint-every", type=int)
    _add_data_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="vary one hyperparameter against a baseline")
    p.add_argument("--spec", required=True, help="sweep spec JSON")
    p.add_argument("--baseline", help="baseline run config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", type=int, default=1)
    _add_data_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="tables and SVG figures from a sweep directory")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("glimpse-debug", help="dump the scale patches of one glimpse as PGM")
    p.add_argument("--image", required=True, help="<images-idx-file>#<index>")
    p.add_argument("--loc", required=True, help="x,y in [-1, 1]")
    p.add_argument("--bandwidth", type=int, default=12)
    p.add_argument("--scales", type=int, default=4)
    p.add_argument("--canvas", type=int, default=0, help="augment onto a canvas first (0 = raw digit)")
    p.add_argument("--rotation-max", type=float, default=0.0)
    p.add_argument("--pixel-noise-std", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", help="also run one episode with these parameters and dump trace.json")
    p.add_argument("--std", type=float, default=0.0, help="location noise std for the traced episode")
    p.add_argument("--upscale", type=int, default=8)
    p.add_argument("--out", default="glimpse_debug")
    p.set_defaults(func=cmd_glimpse_debug)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IdxFormatError, IdxConsistencyError, FileNotFoundError) as exc:
        print(f"ram {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
