"""PGM frames, CSV tables and bilinear resizing."""

from __future__ import annotations

import csv
import re
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np

from trafficdt.errors import InputError

_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        m = _TOKEN.match(data, pos)
        if m is None:
            raise InputError("truncated PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    """Decode a binary (P5) or ASCII (P2) greymap to uint8 intensities."""
    path = Path(path)
    try:
        data = path.read_bytes()
        (magic, w, h, maxval), pos = _header_tokens(data, 4)
        width, height, maxval = int(w), int(h), int(maxval)
    except (OSError, ValueError, InputError) as exc:
        raise InputError(f"{path}: cannot read PGM header ({exc})") from exc
    if not (0 < maxval < 65536) or width < 1 or height < 1:
        raise InputError(f"{path}: invalid PGM dimensions or maxval")
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        raw = data[pos + 1 :]
        need = width * height * dtype.itemsize
        if len(raw) < need:
            raise InputError(f"{path}: truncated PGM raster")
        img = np.frombuffer(raw[:need], dtype=dtype).reshape(height, width)
    elif magic == b"P2":
        try:
            vals = [int(t) for t in data[pos:].split()[: width * height]]
        except ValueError as exc:
            raise InputError(f"{path}: bad ASCII raster") from exc
        if len(vals) < width * height:
            raise InputError(f"{path}: truncated PGM raster")
        img = np.array(vals).reshape(height, width)
    else:
        raise InputError(f"{path}: unsupported image format {magic!r}")
    if maxval != 255:
        img = np.floor(img.astype(float) * 255.0 / maxval + 0.5)
    return np.clip(img, 0, 255).astype(np.uint8)


def write_pgm(path, image) -> None:
    """Write an 8-bit binary PGM."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise InputError(f"PGM needs a 2-D image, got shape {img.shape}")
    img = np.clip(np.floor(img.astype(float) + 0.5), 0, 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def write_mask_pgm(path, mask) -> None:
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0))


def round_half_up(a) -> np.ndarray:
    return np.floor(np.asarray(a, dtype=float) + 0.5)


def resize_bilinear(image, rows: int, cols: int) -> np.ndarray:
    """Bilinear resize with pixel-centre alignment and edge clamping, rounded to uint8."""
    img = np.asarray(image, dtype=float)
    R, C = img.shape
    if (R, C) == (rows, cols):
        return np.clip(round_half_up(img), 0, 255).astype(np.uint8)

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    r0, r1, wr = axis(R, rows)
    c0, c1, wc = axis(C, cols)
    top = img[r0][:, c0] * (1 - wc) + img[r0][:, c1] * wc
    bottom = img[r1][:, c0] * (1 - wc) + img[r1][:, c1] * wc
    out = top * (1 - wr)[:, None] + bottom * wr[:, None]
    return np.clip(round_half_up(out), 0, 255).astype(np.uint8)


def frame_filename(index: int, width: int = 6, suffix: str = ".pgm") -> str:
    return f"{index:0{width}d}{suffix}"


def write_frames(directory, frames) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        p = directory / frame_filename(i)
        write_pgm(p, frame)
        paths.append(p)
    return paths


def write_masks(directory, masks) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, mask in enumerate(masks):
        p = directory / frame_filename(i)
        write_mask_pgm(p, mask)
        paths.append(p)
    return paths


def list_images(directory) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"{directory}: not a directory")
    files = sorted((p for p in directory.iterdir() if p.is_file() and not p.name.startswith(".")),
                   key=lambda p: p.name)
    if not files:
        raise InputError(f"{directory}: no image files")
    return files


def read_masks(directory) -> np.ndarray:
    return np.stack([read_pgm(p) > 127 for p in list_images(directory)])


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return str(int(f)) if f.is_integer() and abs(f) < 1e15 else format(f, ".17g")
    return str(v)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc})") from exc
    if not rows:
        raise InputError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def read_truth(path) -> Dict[int, int]:
    """Ground-truth counts from a ``frame,count`` CSV."""
    header, rows = read_csv(path)
    if [h.strip() for h in header[:2]] != ["frame", "count"]:
        raise InputError(f"{path}: expected header 'frame,count'")
    truth = {}
    for r in rows:
        try:
            frame, count = int(r[0]), int(r[1])
        except (IndexError, ValueError) as exc:
            raise InputError(f"{path}: bad row {r}") from exc
        if count < 0:
            raise InputError(f"{path}: negative count in row {r}")
        truth[frame] = count
    return truth


def write_truth(path, truth: Dict[int, int]) -> None:
    write_csv(path, ("frame", "count"), sorted(truth.items()))
