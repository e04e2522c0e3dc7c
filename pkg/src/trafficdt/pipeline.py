"""End-to-end runs: data loading, splits, both counters and their evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from trafficdt import featex, gpreg, motionseg
from trafficdt.config import Config
from trafficdt.errors import InputError
from trafficdt.gmmbase import gmm_count
from trafficdt.imageio import list_images, read_pgm, resize_bilinear, write_csv

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; the message starts with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Dataset:
    frames: np.ndarray
    truth: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 3 or self.frames.shape[0] == 0:
            raise InputError("dataset needs a non-empty (T, R, C) frame stack")
        bad = [k for k in self.truth if not 0 <= k < len(self)]
        if bad:
            raise InputError(f"truth refers to frames outside the video: {bad[:5]}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    def truth_array(self, indices) -> np.ndarray:
        missing = [int(i) for i in indices if int(i) not in self.truth]
        if missing:
            raise InputError(f"no ground truth for frames {missing[:5]}")
        return np.array([self.truth[int(i)] for i in indices], dtype=float)


@dataclass(frozen=True)
class SplitSpec:
    kind: str
    fraction: float = 0.6
    block_len: int = 400

    def __post_init__(self):
        if self.kind == "prefix_fraction":
            if not 0 < self.fraction < 1:
                raise InputError("prefix fraction must lie in (0, 1)")
        elif self.kind == "middle_block":
            if self.block_len < 1:
                raise InputError("middle block length must be positive")
        else:
            raise InputError(f"unknown split kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "SplitSpec":
        """``prefix:0.6`` or ``middle:400``."""
        kind, _, value = text.partition(":")
        try:
            if kind in ("prefix", "prefix_fraction"):
                return cls("prefix_fraction", fraction=float(value))
            if kind in ("middle", "middle_block"):
                return cls("middle_block", block_len=int(value))
        except ValueError as exc:
            raise InputError(f"bad split {text!r}") from exc
        raise InputError(f"bad split {text!r}; use prefix:<fraction> or middle:<frames>")


def split(n_frames: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Train and test frame indices."""
    if n_frames < 1:
        raise InputError("cannot split an empty dataset")
    idx = np.arange(n_frames)
    if spec.kind == "prefix_fraction":
        n_train = math.floor(spec.fraction * n_frames)
        return idx[:n_train], idx[n_train:]
    if spec.block_len > n_frames:
        raise InputError(f"middle block of {spec.block_len} frames exceeds {n_frames} frames")
    start = (n_frames - spec.block_len) // 2
    train = idx[start : start + spec.block_len]
    return train, np.concatenate([idx[:start], idx[start + spec.block_len :]])


def load_frames(path, rows: int = 160, cols: int = 110) -> np.ndarray:
    """Read every image in a directory (sorted by name) and resize to ``rows x cols``."""
    frames = [resize_bilinear(read_pgm(p), rows, cols) for p in list_images(path)]
    return np.stack(frames)


@dataclass
class RunReport:
    frames: np.ndarray
    estimates: np.ndarray
    truth: List[Optional[int]]
    means: Optional[np.ndarray] = None
    variances: Optional[np.ndarray] = None

    @property
    def metrics(self) -> Dict[str, float]:
        return evaluate(self)

    def rows(self):
        for i, (fr, est, tr) in enumerate(zip(self.frames, self.estimates, self.truth)):
            row = [int(fr), tr, int(est)]
            if self.means is not None:
                row += [float(self.means[i]), float(self.variances[i])]
            yield row

    def header(self) -> tuple:
        base = ("frame", "truth", "estimate")
        return base + (("mean", "variance") if self.means is not None else ())

    def write(self, path) -> None:
        write_csv(path, self.header(), self.rows())


def evaluate(report: RunReport) -> Dict[str, float]:
    """MAE, RMSE and max absolute error over frames that have ground truth."""
    pairs = [(e, t) for e, t in zip(report.estimates, report.truth) if t is not None]
    if not pairs:
        raise InputError("no test frame has ground truth")
    err = np.array([float(e) - float(t) for e, t in pairs])
    return {
        "mae": float(np.mean(np.abs(err))),
        "rmse": float(np.sqrt(np.mean(err**2))),
        "max_abs_error": float(np.max(np.abs(err))),
    }


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except (InputError, ArithmeticError, ValueError) as exc:
                raise StageError(name, exc) from exc

        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner

    return wrap


def geometry_of(config: Config) -> motionseg.PatchGeometry:
    c = config.motionseg
    return motionseg.PatchGeometry(c.patch_rows, c.patch_cols, c.patch_len, c.stride_space, c.stride_time)


@_stage("segment")
def fit_segmenter(frames: np.ndarray, config: Config) -> motionseg.DtMixture:
    c = config.motionseg
    patches = motionseg.extract_patches(frames, geometry_of(config))
    opts = motionseg.EmOptions(max_iter=c.max_iter, tol=c.tol, seed=c.seed)
    mixture = motionseg.em_fit_mixture(patches, c.n_components, c.n_states, opts)
    log.info("fitted %d-component mixture on %d patches (%d EM steps)",
             mixture.K, len(patches), len(mixture.loglik_history) - 1)
    return mixture


@_stage("segment")
def segment(frames: np.ndarray, mixture: motionseg.DtMixture, config: Config) -> np.ndarray:
    return motionseg.segment_video(frames, mixture, geometry_of(config))


def segment_dataset(frames: np.ndarray, train_idx: np.ndarray, config: Config) -> np.ndarray:
    """Fit the mixture on the training block and segment the whole video."""
    train_idx = np.asarray(train_idx)
    if train_idx.size == 0:
        raise StageError("segment", InputError("empty training split"))
    mixture = fit_segmenter(frames[train_idx.min() : train_idx.max() + 1], config)
    return segment(frames, mixture, config)


@_stage("features")
def features(frames: np.ndarray, masks: np.ndarray, config: Config) -> np.ndarray:
    return featex.extract_all(frames, masks, config.featex.edge_threshold)


@_stage("train")
def train_gp(X: np.ndarray, y: np.ndarray, config: Config) -> gpreg.GpModel:
    c = config.gpreg
    beta0 = gpreg.KernelParams(*c.beta0) if c.beta0 is not None else None
    return gpreg.fit(X, y, beta0, gpreg.FitOptions(max_iter=c.max_iter, grad_tol=c.grad_tol))


@_stage("predict")
def predict_report(model: gpreg.GpModel, X: np.ndarray, test_idx, truth: Dict[int, int],
                   config: Config) -> RunReport:
    test_idx = np.asarray(test_idx)
    mean, var = gpreg.predict_batch(model, X[test_idx])
    raw = config.pipeline.report_raw_mean
    return RunReport(
        frames=test_idx,
        estimates=gpreg.round_count(mean),
        truth=[truth.get(int(i)) for i in test_idx],
        means=mean if raw else None,
        variances=var if raw else None,
    )


def run_proposed(dataset: Dataset, spec: SplitSpec, config: Config = Config()) -> RunReport:
    train, test = split(len(dataset), spec)
    y = dataset.truth_array(train)
    masks = segment_dataset(dataset.frames, train, config)
    X = features(dataset.frames, masks, config)
    model = train_gp(X[train], y, config)
    return predict_report(model, X, test, dataset.truth, config)


@_stage("baseline")
def baseline_counts(dataset: Dataset, spec: SplitSpec, config: Config = Config(),
                    keep_masks: bool = False):
    """Run the GMM counter with burn-in covering the training split.

    Training frames are fed first, so for a middle-block split the burn-in
    sees exactly the training block. Returns the frame order used and the
    raw per-frame result.
    """
    train, test = split(len(dataset), spec)
    burn_in = config.gmmbase.burn_in
    if burn_in is None:
        burn_in = len(train)
    order = np.concatenate([train, test])
    result = gmm_count(dataset.frames[order], config.gmmbase, burn_in=burn_in, keep_masks=keep_masks)
    return order, result


def run_baseline(dataset: Dataset, spec: SplitSpec, config: Config = Config()) -> RunReport:
    _, test = split(len(dataset), spec)
    order, result = baseline_counts(dataset, spec, config)
    est = dict(zip(order.tolist(), result.counts.tolist()))
    return RunReport(
        frames=test,
        estimates=np.array([est[int(i)] for i in test], dtype=int),
        truth=[dataset.truth.get(int(i)) for i in test],
    )


def write_metrics(metrics: Dict[str, float]) -> str:
    return "".join(f"{k},{v:.17g}\n" for k, v in metrics.items())
