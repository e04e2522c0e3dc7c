"""Benchmark counter: adaptive per-pixel GMM foreground, opening, blob analysis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import ndimage

from trafficdt.errors import InputError

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class GmmConfig:
    n_components: int = 3
    learning_rate: float = 0.01
    background_fraction: float = 0.7
    match_radius: float = 2.5
    init_variance: float = 900.0
    min_variance: float = 4.0
    burn_in: Optional[int] = None
    min_blob_area: int = 150
    opening_size: int = 3


@dataclass(frozen=True)
class Blob:
    pixel_count: int
    top: int
    left: int
    height: int
    width: int

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        return (self.top, self.left, self.height, self.width)


class PixelGmm:
    """Per-pixel adaptive Gaussian mixture over grey levels.

    State arrays have shape ``(R, C, Kg)``. The first frame seeds component
    0 at its own value with full weight; the remaining components start
    empty (zero weight).
    """

    def __init__(self, first_frame, config: GmmConfig = GmmConfig()):
        frame = np.asarray(first_frame, dtype=float)
        if frame.ndim != 2:
            raise InputError(f"expected a 2-D frame, got shape {frame.shape}")
        cfg = config
        if not (0 < cfg.learning_rate < 1 and 0 < cfg.background_fraction < 1):
            raise InputError("learning_rate and background_fraction must lie in (0, 1)")
        if cfg.n_components < 1:
            raise InputError("n_components must be positive")
        self.config = cfg
        shape = frame.shape + (cfg.n_components,)
        self.mean = np.zeros(shape)
        self.var = np.full(shape, cfg.init_variance)
        self.weight = np.zeros(shape)
        self.mean[..., 0] = frame
        self.weight[..., 0] = 1.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape[:2]

    def _order(self) -> np.ndarray:
        # descending weight / sigma, stable so equal keys keep component order
        return np.argsort(-self.weight / np.sqrt(self.var), axis=-1, kind="stable")

    def update(self, frame) -> np.ndarray:
        """Absorb one frame; returns its boolean foreground mask."""
        v = np.asarray(frame, dtype=float)
        if v.shape != self.shape:
            raise InputError(f"frame shape {v.shape} does not match model shape {self.shape}")
        cfg = self.config
        alpha = cfg.learning_rate
        rows, cols = np.indices(self.shape)

        order = self._order()
        mean_s = np.take_along_axis(self.mean, order, -1)
        var_s = np.take_along_axis(self.var, order, -1)
        w_s = np.take_along_axis(self.weight, order, -1)
        hit = (np.abs(v[..., None] - mean_s) <= cfg.match_radius * np.sqrt(var_s)) & (w_s > 0)
        matched = hit.any(axis=-1)
        first = np.argmax(hit, axis=-1)
        k_match = np.take_along_axis(order, first[..., None], -1)[..., 0]
        k_weak = order[..., -1]

        self.weight *= 1.0 - alpha
        r, c, k = rows[matched], cols[matched], k_match[matched]
        self.weight[r, c, k] += alpha
        mu = self.mean[r, c, k]
        x = v[matched]
        mu_new = (1.0 - alpha) * mu + alpha * x
        var_new = (1.0 - alpha) * self.var[r, c, k] + alpha * (x - mu_new) ** 2
        self.mean[r, c, k] = mu_new
        self.var[r, c, k] = np.maximum(var_new, cfg.min_variance)

        miss = ~matched
        r, c, k = rows[miss], cols[miss], k_weak[miss]
        self.mean[r, c, k] = v[miss]
        self.var[r, c, k] = cfg.init_variance
        self.weight[r, c, k] = alpha
        self.weight /= self.weight.sum(axis=-1, keepdims=True)

        # background = smallest prefix of the re-sorted components reaching Tb
        order = self._order()
        w_s = np.take_along_axis(self.weight, order, -1)
        n_bg = np.argmax(np.cumsum(w_s, axis=-1) >= cfg.background_fraction, axis=-1) + 1
        rank = np.argmax(order == k_match[..., None], axis=-1)
        return miss | (rank >= n_bg)


def gmm_update(model: PixelGmm, frame) -> np.ndarray:
    return model.update(frame)


def square_element(size: int = 3) -> np.ndarray:
    return np.ones((size, size), dtype=bool)


def morph_open(mask, se: Optional[np.ndarray] = None) -> np.ndarray:
    """Erosion then dilation.

    Off-image pixels count as foreground for the erosion and background for
    the dilation, so shapes touching the border are not eaten away.
    """
    mask = np.asarray(mask, dtype=bool)
    se = square_element(3) if se is None else np.asarray(se, dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=se, border_value=1)
    return ndimage.binary_dilation(eroded, structure=se, border_value=0)


def blob_analyze(mask, min_area: int = 150) -> List[Blob]:
    """8-connected components with at least ``min_area`` pixels, ordered by (top, left)."""
    if min_area < 1:
        raise InputError("min_area must be at least 1")
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n == 0:
        return []
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    blobs = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sizes[lab] < min_area:
            continue
        rs, cs = sl
        blobs.append(Blob(int(sizes[lab]), rs.start, cs.start, rs.stop - rs.start, cs.stop - cs.start))
    blobs.sort(key=lambda b: (b.top, b.left))
    return blobs


@dataclass
class GmmCountResult:
    counts: np.ndarray
    burn_in: np.ndarray
    blobs: list
    masks: Optional[np.ndarray] = None


def gmm_count(
    frames,
    config: GmmConfig = GmmConfig(),
    burn_in: Optional[int] = None,
    keep_masks: bool = False,
) -> GmmCountResult:
    """Per-frame blob counts; frames inside the burn-in report 0 and are flagged.

    With ``keep_masks`` the opened foreground masks are returned as well.
    """
    video = np.asarray(frames, dtype=float)
    if video.ndim != 3 or video.shape[0] == 0:
        raise InputError("gmm_count needs a non-empty (T, R, C) video")
    if burn_in is None:
        burn_in = config.burn_in if config.burn_in is not None else 0
    T = video.shape[0]
    burn_in = int(min(max(burn_in, 0), T))
    model = PixelGmm(video[0], config)
    se = square_element(config.opening_size)
    counts = np.zeros(T, dtype=int)
    flags = np.arange(T) < burn_in
    masks = np.zeros(video.shape, dtype=bool) if keep_masks else None
    all_blobs = []
    for t in range(T):
        fg = model.update(video[t])
        if flags[t]:
            all_blobs.append([])
            continue
        opened = morph_open(fg, se)
        if keep_masks:
            masks[t] = opened
        blobs = blob_analyze(opened, config.min_blob_area)
        counts[t] = len(blobs)
        all_blobs.append(blobs)
    return GmmCountResult(counts, flags, all_blobs, masks)
