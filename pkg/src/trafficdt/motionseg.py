"""Motion segmentation with a mixture of dynamic textures.

The video is cut into a bag of spatio-temporal patches, the patches are
clustered by EM over a mixture of linear dynamical systems, and the
component with the most state-noise energy is taken as the moving-vehicle
region. Frames are ``(T, R, C)`` arrays throughout.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import logsumexp

from trafficdt.errors import InputError, NumericalError
from trafficdt.lds import LdsParams, kalman_loglik_batch, learn_lds

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PatchGeometry:
    patch_rows: int = 7
    patch_cols: int = 7
    patch_len: int = 5
    stride_space: int = 4
    stride_time: int = 5

    def __post_init__(self):
        for name in ("patch_rows", "patch_cols", "patch_len", "stride_space", "stride_time"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be positive")

    @property
    def m(self) -> int:
        return self.patch_rows * self.patch_cols

    def grid_shape(self, video_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        """Number of (temporal, row, column) patch positions for a ``(T, R, C)`` video."""
        T, R, C = video_shape
        if T < self.patch_len or R < self.patch_rows or C < self.patch_cols:
            return (0, 0, 0)
        return (
            (T - self.patch_len) // self.stride_time + 1,
            (R - self.patch_rows) // self.stride_space + 1,
            (C - self.patch_cols) // self.stride_space + 1,
        )


@dataclass
class PatchGrid:
    """Bag of mean-subtracted patches.

    ``data`` has shape ``(N, m, patch_len)``: each patch is an observation
    sequence whose columns are the row-major vectorized pixel blocks.
    ``positions`` holds the ``(t0, r0, c0)`` corner of every patch.
    """

    geometry: PatchGeometry
    video_shape: tuple[int, int, int]
    positions: np.ndarray
    data: np.ndarray

    def __len__(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_sequences(cls, data: np.ndarray) -> "PatchGrid":
        """Wrap an arbitrary ``(N, m, T)`` stack (no spatial layout)."""
        data = np.asarray(data, dtype=float)
        if data.ndim != 3:
            raise InputError(f"expected (N, m, T) stack, got shape {data.shape}")
        N, m, T = data.shape
        geom = PatchGeometry(patch_rows=1, patch_cols=m, patch_len=T)
        return cls(geom, (T, 1, m), np.zeros((N, 3), dtype=int), data)


def _as_video(frames) -> np.ndarray:
    video = np.asarray(frames, dtype=float)
    if video.ndim != 3:
        raise InputError(f"expected (T, R, C) frames, got shape {video.shape}")
    return video


def extract_patches(frames, geometry: PatchGeometry = PatchGeometry()) -> PatchGrid:
    """Enumerate patches in row-major spatial order, then temporal order."""
    video = _as_video(frames)
    g = geometry
    if video.shape[0] < g.patch_len:
        raise InputError(f"{video.shape[0]} frames is shorter than patch length {g.patch_len}")
    if video.shape[1] < g.patch_rows or video.shape[2] < g.patch_cols:
        raise InputError("frame is smaller than one patch")
    nt, nr, nc = g.grid_shape(video.shape)

    win = sliding_window_view(video, (g.patch_len, g.patch_rows, g.patch_cols))
    win = win[:: g.stride_time, :: g.stride_space, :: g.stride_space][:nt, :nr, :nc]
    # (nt, nr, nc, L, pr, pc) -> (nr, nc, nt, pr, pc, L)
    win = win.transpose(1, 2, 0, 4, 5, 3)
    data = win.reshape(nr * nc * nt, g.m, g.patch_len).copy()
    data -= data.mean(axis=(1, 2), keepdims=True)

    rr, cc, tt = np.meshgrid(
        np.arange(nr) * g.stride_space,
        np.arange(nc) * g.stride_space,
        np.arange(nt) * g.stride_time,
        indexing="ij",
    )
    positions = np.stack([tt.ravel(), rr.ravel(), cc.ravel()], axis=1)
    return PatchGrid(g, tuple(video.shape), positions, data)


@dataclass(frozen=True)
class EmOptions:
    max_iter: int = 20
    tol: float = 1e-4
    seed: int = 0


@dataclass(frozen=True)
class DtMixture:
    components: tuple[LdsParams, ...]
    weights: np.ndarray
    loglik_history: tuple[float, ...] = ()
    geometry: Optional[PatchGeometry] = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if len(self.components) != w.shape[0]:
            raise InputError("one weight per component required")
        if np.any(w < 0) or abs(w.sum() - 1.0) >= 1e-10:
            raise InputError("weights must be nonnegative and sum to one")
        if len({c.m for c in self.components}) > 1:
            raise InputError("components have differing observation dimensions")
        w.setflags(write=False)
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "weights", w)

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def motion_component(self) -> int:
        """Index of the component with the largest trace(Q); ties go to the lower index."""
        return int(np.argmax([np.trace(c.Q) for c in self.components]))


def component_logliks(components, data: np.ndarray) -> np.ndarray:
    """``(N, K)`` matrix of per-component sequence log-likelihoods."""
    return np.stack([kalman_loglik_batch(c, data) for c in components], axis=1)


def _posterior(ll: np.ndarray, weights: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore"):
        joint = ll + np.log(weights)
    per_patch = logsumexp(joint, axis=1)
    resp = np.exp(joint - per_patch[:, None])
    resp /= resp.sum(axis=1, keepdims=True)
    return float(per_patch.sum()), per_patch, resp


def responsibilities(mixture: DtMixture, patches: PatchGrid) -> np.ndarray:
    ll = component_logliks(mixture.components, patches.data)
    return _posterior(ll, mixture.weights)[2]


def _learn(data: np.ndarray, n: int) -> LdsParams:
    return learn_lds(list(data), n)


def _m_step(data, labels, per_patch, K, n):
    """Re-learn every component from its hard-assigned patches.

    A component left without patches (or whose patches are rank deficient)
    is re-seeded from the patches the current mixture explains worst.
    """
    N = data.shape[0]
    reseed = np.argsort(per_patch, kind="stable")[: max(n + 1, math.ceil(N / (2 * K)))]
    components, counts = [], []
    for k in range(K):
        idx = np.flatnonzero(labels == k)
        comp = None
        if idx.size:
            try:
                comp = _learn(data[idx], n)
            except InputError:
                comp = None
        if comp is None:
            log.info("re-seeding empty component %d from %d worst patches", k, reseed.size)
            idx = reseed
            comp = _learn(data[idx], n)
        components.append(comp)
        counts.append(idx.size)
    return components, np.asarray(counts, dtype=float)


def em_fit_mixture(
    patches: PatchGrid, K: int = 2, n: int = 5, opts: EmOptions = EmOptions()
) -> DtMixture:
    """Fit a K-component dynamic texture mixture by classification EM.

    E-step responsibilities are proportional to ``weight_k * p_k(patch)``;
    the M-step re-learns each component on the patches it wins and sets the
    weights to the mean responsibilities. An M-step that would lower the
    total data log-likelihood is discarded and iteration stops, so the
    recorded history never decreases.
    """
    data = patches.data
    N = data.shape[0]
    if K < 1:
        raise InputError("K must be positive")
    if K > N:
        raise InputError(f"K={K} exceeds the number of patches {N}")

    rng = np.random.default_rng(opts.seed)
    labels = rng.permutation(np.arange(N) % K)
    components = []
    for k in range(K):
        try:
            components.append(_learn(data[labels == k], n))
        except InputError as exc:
            raise InputError(f"cannot initialize component {k}: {exc}") from exc
    weights = np.bincount(labels, minlength=K) / N

    total, per_patch, resp = _posterior(component_logliks(components, data), weights)
    history = [total]
    for it in range(opts.max_iter):
        labels = np.argmax(resp, axis=1)
        new_components, counts = _m_step(data, labels, per_patch, K, n)
        empty = np.bincount(labels, minlength=K) == 0
        new_weights = np.where(empty, counts / N, resp.mean(axis=0))
        new_weights = new_weights / new_weights.sum()

        new_total, new_per_patch, new_resp = _posterior(
            component_logliks(new_components, data), new_weights
        )
        if not np.isfinite(new_total):
            raise NumericalError(f"non-finite total log-likelihood at EM iteration {it}")
        if new_total < total:
            log.debug("EM iteration %d would lower log-likelihood; stopping", it)
            break
        rel = abs(new_total - total) / max(abs(total), 1e-300)
        components, weights = new_components, new_weights
        total, per_patch, resp = new_total, new_per_patch, new_resp
        history.append(total)
        log.debug("EM iteration %d: total log-likelihood %.6f", it, total)
        if rel < opts.tol:
            break

    return DtMixture(tuple(components), weights, tuple(history), patches.geometry)


def assign_patches(mixture: DtMixture, patches: PatchGrid) -> np.ndarray:
    """Maximum-likelihood component index of each patch."""
    return np.argmax(component_logliks(mixture.components, patches.data), axis=1)


def segment_video(
    frames, mixture: DtMixture, geometry: PatchGeometry = PatchGeometry()
) -> np.ndarray:
    """Binary ``(T, R, C)`` motion masks.

    A pixel is foreground when strictly more than half of the patches
    covering it are assigned to the motion component. Pixels no patch
    covers stay background.
    """
    if mixture.geometry is not None and mixture.geometry != geometry:
        if (mixture.geometry.m, mixture.geometry.patch_len) != (geometry.m, geometry.patch_len):
            raise InputError("mixture was fitted on a different patch geometry")
    if any(c.m != geometry.m for c in mixture.components):
        raise InputError(
            f"mixture observation dimension {mixture.components[0].m} "
            f"does not match patch size {geometry.m}"
        )
    video = _as_video(frames)
    patches = extract_patches(video, geometry)
    is_motion = assign_patches(mixture, patches) == mixture.motion_component

    votes = np.zeros(video.shape, dtype=np.int32)
    cover = np.zeros(video.shape, dtype=np.int32)
    g = geometry
    for (t0, r0, c0), hit in zip(patches.positions, is_motion):
        block = (slice(t0, t0 + g.patch_len), slice(r0, r0 + g.patch_rows), slice(c0, c0 + g.patch_cols))
        cover[block] += 1
        if hit:
            votes[block] += 1
    return 2 * votes > cover
