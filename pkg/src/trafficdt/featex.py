"""Per-frame low-level features of the motion region.

Four segment features (area, perimeter, perimeter/area, edge pixels) and
twelve GLCM texture features (homogeneity, energy, entropy at 0, 45, 90
and 135 degrees), 16 values per frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from trafficdt.errors import InputError

N_LEVELS = 8
ORIENTATIONS = (0, 45, 90, 135)

# (row, col) displacement from a pixel to its neighbour at each orientation
OFFSETS = {0: (0, 1), 45: (-1, 1), 90: (-1, 0), 135: (-1, -1)}

FEATURE_NAMES = ("area", "perimeter", "pa_ratio", "edges") + tuple(
    f"{name}{theta}" for theta in ORIENTATIONS for name in ("g", "e", "h")
)
N_FEATURES = len(FEATURE_NAMES)

DEFAULT_EDGE_THRESHOLD = 100.0


@dataclass(frozen=True)
class Glcm:
    probs: np.ndarray
    orientation: int
    pair_count: int


def _check_shapes(a: np.ndarray, mask: np.ndarray) -> None:
    if a.shape != mask.shape:
        raise InputError(f"frame shape {a.shape} does not match mask shape {mask.shape}")


def segment_area(mask) -> int:
    return int(np.count_nonzero(mask))


def segment_perimeter(mask) -> int:
    """Foreground pixels with a 4-neighbour that is background or off-image."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return 0
    padded = np.pad(mask, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return int(np.count_nonzero(mask & ~interior))


def sobel_magnitude(frame) -> np.ndarray:
    """L2 magnitude of the 3x3 Sobel gradient, replicated borders."""
    a = np.asarray(frame, dtype=float)
    gr = ndimage.sobel(a, axis=0, mode="nearest")
    gc = ndimage.sobel(a, axis=1, mode="nearest")
    return np.hypot(gr, gc)


def edge_pixel_count(frame, mask, threshold: float = DEFAULT_EDGE_THRESHOLD) -> int:
    frame = np.asarray(frame)
    mask = np.asarray(mask, dtype=bool)
    _check_shapes(frame, mask)
    return int(np.count_nonzero(mask & (sobel_magnitude(frame) > threshold)))


def quantize8(frame) -> np.ndarray:
    """Map intensities in [0, 255] to levels 0..7 (floor(v / 32), clamped)."""
    levels = np.floor(np.asarray(frame, dtype=float) / 32.0)
    return np.clip(levels, 0, N_LEVELS - 1).astype(np.intp)


def glcm(levels, mask, orientation: int) -> Glcm:
    """Ordered co-occurrence probabilities over pairs with both pixels in the mask."""
    levels = np.asarray(levels)
    mask = np.asarray(mask, dtype=bool)
    _check_shapes(levels, mask)
    if orientation not in OFFSETS:
        raise InputError(f"orientation must be one of {ORIENTATIONS}")
    dr, dc = OFFSETS[orientation]
    R, C = levels.shape
    # source pixels p such that p + d stays on the image
    r0, r1 = max(0, -dr), R - max(0, dr)
    c0, c1 = max(0, -dc), C - max(0, dc)
    src = (slice(r0, r1), slice(c0, c1))
    dst = (slice(r0 + dr, r1 + dr), slice(c0 + dc, c1 + dc))
    both = mask[src] & mask[dst]
    i = levels[src][both]
    j = levels[dst][both]
    counts = np.bincount(i * N_LEVELS + j, minlength=N_LEVELS * N_LEVELS)
    counts = counts.reshape(N_LEVELS, N_LEVELS).astype(float)
    total = int(both.sum())
    probs = counts / total if total else counts
    return Glcm(probs, orientation, total)


def texture_features(g: Glcm) -> tuple[float, float, float]:
    """Homogeneity, energy and entropy (-sum p ln p) of a GLCM."""
    p = g.probs
    if g.pair_count == 0:
        return 0.0, 0.0, 0.0
    i, j = np.indices(p.shape)
    homogeneity = float(np.sum(p / (1.0 + np.abs(i - j))))
    energy = float(np.sum(p * p))
    nz = p[p > 0]
    entropy = float(-np.sum(nz * np.log(nz)))
    return homogeneity, energy, entropy


def extract_features(frame, mask, edge_threshold: float = DEFAULT_EDGE_THRESHOLD) -> np.ndarray:
    """The 16-value feature vector, ordered as ``FEATURE_NAMES``."""
    frame = np.asarray(frame)
    mask = np.asarray(mask, dtype=bool)
    _check_shapes(frame, mask)
    out = np.zeros(N_FEATURES)
    area = segment_area(mask)
    if area == 0:
        return out
    perimeter = segment_perimeter(mask)
    out[0] = area
    out[1] = perimeter
    out[2] = perimeter / area
    out[3] = edge_pixel_count(frame, mask, edge_threshold)
    levels = quantize8(frame)
    for k, theta in enumerate(ORIENTATIONS):
        out[4 + 3 * k : 7 + 3 * k] = texture_features(glcm(levels, mask, theta))
    return out


def extract_all(frames, masks, edge_threshold: float = DEFAULT_EDGE_THRESHOLD) -> np.ndarray:
    """``(T, 16)`` feature matrix for a ``(T, R, C)`` video and its masks."""
    frames = np.asarray(frames)
    masks = np.asarray(masks, dtype=bool)
    if frames.shape != masks.shape:
        raise InputError(f"frames {frames.shape} and masks {masks.shape} differ in shape")
    return np.stack([extract_features(f, m, edge_threshold) for f, m in zip(frames, masks)])
