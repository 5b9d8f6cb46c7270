"""Captioned synthetic shapes: a flat-colour shape on a flat background."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .nn import make_rng
from .text import Vocabulary

SHAPES = ("circle", "square", "triangle", "cross")
COLORS = {
    "red": (1.0, -1.0, -1.0),
    "green": (-1.0, 1.0, -1.0),
    "blue": (-1.0, -1.0, 1.0),
    "yellow": (1.0, 1.0, -1.0),
}
BACKGROUNDS = {
    "black": (-1.0, -1.0, -1.0),
    "white": (1.0, 1.0, 1.0),
    "gray": (0.0, 0.0, 0.0),
}
COLOR_NAMES = tuple(COLORS)
BG_NAMES = tuple(BACKGROUNDS)
N_CLASSES = len(SHAPES) * len(COLORS) * len(BACKGROUNDS)
CAPTION_TEMPLATE = "a {color} {shape} on a {bg} background"


def build_vocabulary() -> Vocabulary:
    words = ["a", "on", "background"] + list(COLOR_NAMES) + list(SHAPES) + list(BG_NAMES)
    return Vocabulary(words)


def class_id(shape: int, color: int, bg: int) -> int:
    return (shape * len(COLORS) + color) * len(BACKGROUNDS) + bg


def class_attributes(cid: int):
    shape, rest = divmod(cid, len(COLORS) * len(BACKGROUNDS))
    color, bg = divmod(rest, len(BACKGROUNDS))
    return shape, color, bg


def caption_for(cid: int) -> str:
    shape, color, bg = class_attributes(cid)
    return CAPTION_TEMPLATE.format(color=COLOR_NAMES[color], shape=SHAPES[shape], bg=BG_NAMES[bg])


def shape_mask(shape: str, res: int, cx: float, cy: float, r: float) -> np.ndarray:
    """Boolean H×W mask, sampled at pixel centres (no anti-aliasing)."""
    y, x = np.mgrid[0:res, 0:res] + 0.5
    dx, dy = x - cx, y - cy
    if shape == "circle":
        return dx * dx + dy * dy <= r * r
    if shape == "square":
        h = 0.8 * r
        return (np.abs(dx) <= h) & (np.abs(dy) <= h)
    if shape == "cross":
        arm = r / 3
        return ((np.abs(dx) <= r) & (np.abs(dy) <= arm)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= r))
    if shape == "triangle":
        # upward triangle with circumradius r centred on (cx, cy); inside all three edges
        s3 = np.sqrt(3.0)
        return (dy <= r / 2) & (s3 * dx - dy <= r) & (-s3 * dx - dy <= r)
    raise ValueError(f"unknown shape {shape!r}")


@dataclass
class ShapesSample:
    image: np.ndarray  # 3×H×W float32 in [-1, 1]
    caption: str
    class_id: int


def gen_sample(seed: int, index: int, resolution: int = 64) -> ShapesSample:
    """Pure function of (seed, index, resolution)."""
    rng = make_rng([seed, index])
    shape, color, bg = (int(rng.integers(n)) for n in (len(SHAPES), len(COLORS), len(BACKGROUNDS)))
    jitter = resolution / 16
    cx = resolution / 2 + rng.uniform(-jitter, jitter)
    cy = resolution / 2 + rng.uniform(-jitter, jitter)
    r = rng.uniform(resolution / 5, resolution / 3)
    mask = shape_mask(SHAPES[shape], resolution, cx, cy, r)
    image = np.empty((3, resolution, resolution), dtype=np.float32)
    fg, bgc = COLORS[COLOR_NAMES[color]], BACKGROUNDS[BG_NAMES[bg]]
    for c in range(3):
        image[c] = np.where(mask, fg[c], bgc[c])
    cid = class_id(shape, color, bg)
    return ShapesSample(image, caption_for(cid), cid)


@dataclass
class ShapesDataset:
    images: np.ndarray     # M×3×H×W float32
    tokens: np.ndarray     # M×T int64
    class_ids: np.ndarray  # M int64
    captions: List[str]

    def __len__(self):
        return len(self.class_ids)

    def subset(self, idx) -> "ShapesDataset":
        idx = np.asarray(idx)
        return ShapesDataset(self.images[idx], self.tokens[idx], self.class_ids[idx],
                             [self.captions[i] for i in idx])


def gen_dataset(seed: int, count: int, resolution: int = 64, start: int = 0) -> ShapesDataset:
    if count < 1:
        raise ValueError("count must be ≥ 1")
    vocab = build_vocabulary()
    samples = [gen_sample(seed, start + i, resolution) for i in range(count)]
    return ShapesDataset(
        images=np.stack([s.image for s in samples]),
        tokens=np.array([vocab.encode(s.caption) for s in samples], dtype=np.int64),
        class_ids=np.array([s.class_id for s in samples], dtype=np.int64),
        captions=[s.caption for s in samples],
    )


def downsample(images: np.ndarray, resolution: int) -> np.ndarray:
    """2×2 average pooling until the images reach ``resolution``."""
    while images.shape[-1] > resolution:
        s = images.shape
        images = images.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2).mean(axis=(-3, -1))
    return images


def save_dataset(ds: ShapesDataset, out_dir) -> None:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "images.npy", ds.images)
    np.save(out / "tokens.npy", ds.tokens)
    np.save(out / "class_ids.npy", ds.class_ids)
    (out / "captions.txt").write_text("".join(c + "\n" for c in ds.captions), encoding="utf-8")
    build_vocabulary().save(out / "vocab.txt")


def load_dataset(data_dir) -> ShapesDataset:
    from pathlib import Path

    d = Path(data_dir)
    return ShapesDataset(np.load(d / "images.npy"), np.load(d / "tokens.npy"),
                         np.load(d / "class_ids.npy"),
                         (d / "captions.txt").read_text(encoding="utf-8").splitlines())
