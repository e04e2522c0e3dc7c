"""Command-line interface.

    trafficdt synth    --out DIR                      frames + truth.csv
    trafficdt segment  --frames DIR --out MASKDIR      dynamic-texture masks
    trafficdt features --frames DIR --masks MASKDIR --out features.csv
    trafficdt train    --features CSV --truth CSV --out MODEL
    trafficdt predict  --model MODEL --features CSV --out report.csv
    trafficdt baseline --frames DIR --out report.csv   GMM counter
    trafficdt eval     --report report.csv             metric,value lines

``--config``, ``--seed`` and ``--split`` are accepted by every subcommand.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from trafficdt import featex, gpreg
from trafficdt.config import Config, load_config
from trafficdt.errors import InputError, NumericalError
from trafficdt.imageio import read_csv, read_masks, read_truth, write_csv, write_masks, write_frames, write_truth
from trafficdt.pipeline import (
    Dataset,
    RunReport,
    SplitSpec,
    StageError,
    baseline_counts,
    evaluate,
    features,
    load_frames,
    predict_report,
    segment_dataset,
    split,
    train_gp,
    write_metrics,
)
from trafficdt.synth import synth_scene

log = logging.getLogger("trafficdt")


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.split is not None:
        cfg = dataclasses.replace(cfg, pipeline=dataclasses.replace(cfg.pipeline, split=args.split))
    return cfg


def _split(cfg: Config) -> SplitSpec:
    return SplitSpec.parse(cfg.pipeline.split)


def _frames(args, cfg: Config) -> np.ndarray:
    return load_frames(args.frames, cfg.pipeline.rows, cfg.pipeline.cols)


def read_features(path) -> np.ndarray:
    header, rows = read_csv(path)
    if tuple(h.strip() for h in header) != ("frame",) + featex.FEATURE_NAMES:
        raise InputError(f"{path}: unexpected feature header")
    try:
        data = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric feature value") from exc
    if data.shape[0] == 0:
        raise InputError(f"{path}: no feature rows")
    frames = data[:, 0].astype(int)
    if not np.array_equal(frames, np.arange(len(frames))):
        raise InputError(f"{path}: frame column must run 0..N-1")
    return data[:, 1:]


def write_features(path, X: np.ndarray) -> None:
    write_csv(path, ("frame",) + featex.FEATURE_NAMES,
              ([i, *row] for i, row in enumerate(X)))


def cmd_synth(args, cfg: Config) -> None:
    scene = synth_scene(cfg.synth)
    out = Path(args.out)
    write_frames(out / "frames", scene.frames)
    write_truth(out / "truth.csv", dict(enumerate(scene.truth.tolist())))
    log.info("wrote %d frames to %s", len(scene.frames), out)


def cmd_segment(args, cfg: Config) -> None:
    frames = _frames(args, cfg)
    train, _ = split(len(frames), _split(cfg))
    masks = segment_dataset(frames, train, cfg)
    write_masks(args.out, masks)


def cmd_features(args, cfg: Config) -> None:
    frames = _frames(args, cfg)
    masks = read_masks(args.masks)
    if masks.shape != frames.shape:
        raise InputError(f"masks {masks.shape} do not match frames {frames.shape}")
    write_features(args.out, features(frames, masks, cfg))


def cmd_train(args, cfg: Config) -> None:
    X = read_features(args.features)
    truth = read_truth(args.truth)
    train, _ = split(len(X), _split(cfg))
    ds = Dataset(np.zeros((len(X), 1, 1)), truth)
    model = train_gp(X[train], ds.truth_array(train), cfg)
    gpreg.save_model(model, args.out)


def cmd_predict(args, cfg: Config) -> None:
    X = read_features(args.features)
    model = gpreg.load_model(args.model)
    truth = read_truth(args.truth) if args.truth else {}
    _, test = split(len(X), _split(cfg))
    predict_report(model, X, test, truth, cfg).write(args.out)


def cmd_baseline(args, cfg: Config) -> None:
    frames = _frames(args, cfg)
    truth = read_truth(args.truth) if args.truth else {}
    ds = Dataset(frames, truth)
    _, test = split(len(ds), _split(cfg))
    order, result = baseline_counts(ds, _split(cfg), cfg, keep_masks=bool(args.masks))
    by_frame = {int(f): i for i, f in enumerate(order)}
    report = RunReport(
        frames=test,
        estimates=np.array([result.counts[by_frame[int(i)]] for i in test], dtype=int),
        truth=[truth.get(int(i)) for i in test],
    )
    report.write(args.out)
    if args.counts:
        write_csv(args.counts, ("frame", "count"),
                  ((f, result.counts[by_frame[f]]) for f in range(len(ds))))
    if args.boxes:
        write_csv(args.boxes, ("frame", "top", "left", "height", "width"),
                  ((f, *b.bbox) for f in range(len(ds)) for b in result.blobs[by_frame[f]]))
    if args.masks:
        write_masks(args.masks, result.masks[[by_frame[f] for f in range(len(ds))]])


def read_report(path) -> RunReport:
    header, rows = read_csv(path)
    if [h.strip() for h in header[:3]] != ["frame", "truth", "estimate"]:
        raise InputError(f"{path}: expected header 'frame,truth,estimate'")
    try:
        frames = np.array([int(r[0]) for r in rows], dtype=int)
        truth = [int(r[1]) if r[1].strip() else None for r in rows]
        est = np.array([int(r[2]) for r in rows], dtype=int)
    except (IndexError, ValueError) as exc:
        raise InputError(f"{path}: malformed report row") from exc
    return RunReport(frames, est, truth)


def cmd_eval(args, cfg: Config) -> None:
    sys.stdout.write("metric,value\n" + write_metrics(evaluate(read_report(args.report))))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="overrides motionseg.seed and synth.seed")
    common.add_argument("--split", help="prefix:<fraction> or middle:<frames>")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="trafficdt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic scene")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", parents=[common], help="dynamic-texture motion masks")
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("features", parents=[common], help="feature vector per frame")
    p.add_argument("--frames", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", parents=[common], help="fit the GP on training frames")
    p.add_argument("--features", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="GP counts for test frames")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--truth")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("baseline", parents=[common], help="GMM + blob-analysis counts")
    p.add_argument("--frames", required=True)
    p.add_argument("--truth")
    p.add_argument("--out", required=True)
    p.add_argument("--counts", help="per-frame frame,count CSV")
    p.add_argument("--boxes", help="per-blob frame,top,left,height,width CSV")
    p.add_argument("--masks", help="directory for opened foreground masks")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", parents=[common], help="metrics of a report CSV")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        args.func(args, _config(args))
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InputError, NumericalError, OSError) as exc:
        print(f"error: [{stage}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
