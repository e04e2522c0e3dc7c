"""Synthetic traffic scenes with known vehicle counts.

A static background (vertical gradient plus a fixed noise pattern) is
overlaid with textured rectangles that translate at constant velocity.
Each frame also gets fresh sensor noise, and every vehicle pixel flickers
around its own texture value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from trafficdt.errors import InputError


@dataclass(frozen=True)
class SynthConfig:
    rows: int = 160
    cols: int = 110
    n_frames: int = 300
    n_lanes: int = 4
    vehicle_rows: int = 14
    vehicle_cols: int = 12
    max_vehicles: int = 4
    spawn_rate: float = 0.012
    speed_min: float = 1.5
    speed_max: float = 3.0
    background_low: float = 60.0
    background_high: float = 110.0
    background_texture: float = 4.0
    noise_level: float = 3.0
    intensity_low: float = 140.0
    intensity_high: float = 230.0
    vehicle_texture: float = 15.0
    flicker: float = 20.0
    seed: int = 0


@dataclass(frozen=True)
class Track:
    """A rectangle at ``(top, left)`` on ``start`` moving ``(drow, dcol)`` per frame."""

    top: float
    left: float
    drow: float
    dcol: float
    height: int
    width: int
    start: int
    intensity: float

    def corner(self, t: int) -> Tuple[int, int]:
        dt = t - self.start
        return int(np.floor(self.top + dt * self.drow)), int(np.floor(self.left + dt * self.dcol))


@dataclass
class Scene:
    frames: np.ndarray
    truth: np.ndarray
    tracks: List[Track]


def _visible(track: Track, t: int, rows: int, cols: int):
    """Clipped (row slice, col slice, texture offset) of a track on frame t, or None."""
    if t < track.start:
        return None
    r, c = track.corner(t)
    r0, r1 = max(r, 0), min(r + track.height, rows)
    c0, c1 = max(c, 0), min(c + track.width, cols)
    if r0 >= r1 or c0 >= c1:
        return None
    return slice(r0, r1), slice(c0, c1), (r0 - r, c0 - c)


def background(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    grad = np.linspace(config.background_low, config.background_high, config.rows)
    bg = np.repeat(grad[:, None], config.cols, axis=1)
    return bg + config.background_texture * rng.standard_normal(bg.shape)


def render(config: SynthConfig, tracks: Sequence[Track], seed: int) -> Scene:
    rows, cols, T = config.rows, config.cols, config.n_frames
    for tr in tracks:
        if tr.height > rows or tr.width > cols:
            raise InputError("vehicle larger than the frame")
    rng = np.random.default_rng(seed)
    bg = background(config, rng)
    textures = [
        tr.intensity + config.vehicle_texture * rng.uniform(-1, 1, (tr.height, tr.width))
        for tr in tracks
    ]
    frames = np.empty((T, rows, cols), dtype=np.uint8)
    truth = np.zeros(T, dtype=int)
    for t in range(T):
        img = bg + config.noise_level * rng.standard_normal((rows, cols))
        for tr, tex in zip(tracks, textures):
            vis = _visible(tr, t, rows, cols)
            if vis is None:
                continue
            rs, cs, (dr, dc) = vis
            patch = tex[dr : dr + rs.stop - rs.start, dc : dc + cs.stop - cs.start]
            img[rs, cs] = patch + config.flicker * rng.uniform(-1, 1, patch.shape)
            truth[t] += 1
        frames[t] = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
    return Scene(frames, truth, list(tracks))


def random_tracks(config: SynthConfig, rng: np.random.Generator) -> List[Track]:
    """Vehicles entering at the top of each lane and driving down.

    Each lane has one speed, so vehicles in a lane never overlap. A lane
    only admits a new vehicle once the previous one has fully entered, and
    no spawn happens while ``max_vehicles`` are on screen.
    """
    cfg = config
    lane_w = cfg.cols / cfg.n_lanes
    if cfg.vehicle_cols > lane_w:
        raise InputError("vehicle wider than a lane")
    speeds = rng.uniform(cfg.speed_min, cfg.speed_max, cfg.n_lanes)
    tracks: List[Track] = []
    last_in_lane: List[Track | None] = [None] * cfg.n_lanes
    for t in range(cfg.n_frames):
        on_screen = sum(_visible(tr, t, cfg.rows, cfg.cols) is not None for tr in tracks)
        for lane in rng.permutation(cfg.n_lanes):
            draw = rng.random()
            if on_screen >= cfg.max_vehicles or draw >= cfg.spawn_rate:
                continue
            prev = last_in_lane[lane]
            if prev is not None and prev.corner(t)[0] < 2:
                continue
            left = lane * lane_w + (lane_w - cfg.vehicle_cols) / 2 + rng.uniform(-1, 1)
            left = float(np.clip(np.floor(left), 0, cfg.cols - cfg.vehicle_cols))
            tr = Track(
                top=-float(cfg.vehicle_rows) + 1.0,
                left=left,
                drow=float(speeds[lane]),
                dcol=0.0,
                height=cfg.vehicle_rows,
                width=cfg.vehicle_cols,
                start=t,
                intensity=float(rng.uniform(cfg.intensity_low, cfg.intensity_high)),
            )
            tracks.append(tr)
            last_in_lane[lane] = tr
            on_screen += 1
    return tracks


def synth_scene(config: SynthConfig = SynthConfig(), seed: int | None = None) -> Scene:
    """Render a random scene; identical ``(config, seed)`` gives identical bytes."""
    cfg = config
    if cfg.vehicle_rows * cfg.vehicle_cols < 150:
        raise InputError("vehicles must cover at least 150 pixels")
    if cfg.vehicle_rows > cfg.rows or cfg.vehicle_cols > cfg.cols:
        raise InputError("vehicle larger than the frame")
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng([seed, 1])
    tracks = random_tracks(cfg, rng)
    return render(cfg, tracks, seed)
