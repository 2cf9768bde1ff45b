"""Procedural content/style images and a directory loader."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageio import read_image


def content_image(side: int, rng: np.random.Generator) -> np.ndarray:
    """Colored rectangles and discs over a linear color gradient."""
    yy, xx = np.mgrid[0:side, 0:side] / max(side - 1, 1)
    c0, c1 = rng.uniform(0, 1, (2, 3))
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
    img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp
    for _ in range(rng.integers(3, 7)):
        color = rng.uniform(0, 1, 3)[:, None, None]
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.08, 0.3)
        if rng.random() < 0.5:
            inside = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * rng.uniform(0.5, 1.5))
        else:
            inside = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        img = np.where(inside[None], color, img)
    return img


def style_image(side: int, rng: np.random.Generator) -> np.ndarray:
    """Periodic texture: a few oriented sinusoids pushed through a random 3-color palette."""
    yy, xx = np.mgrid[0:side, 0:side] / side
    field_ = np.zeros((side, side))
    for _ in range(rng.integers(2, 4)):
        freq = rng.integers(2, 9)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        field_ += np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    if rng.random() < 0.5:
        field_ = np.sign(field_) * np.abs(field_) ** 0.3
    t = (field_ - field_.min()) / max(np.ptp(field_), 1e-12)
    palette = rng.uniform(0, 1, (3, 3))
    w0 = np.clip(1 - 2 * t, 0, 1)
    w2 = np.clip(2 * t - 1, 0, 1)
    w1 = 1 - w0 - w2
    return (palette[0][:, None, None] * w0 + palette[1][:, None, None] * w1
            + palette[2][:, None, None] * w2)


def procedural_set(kind: str, count: int, side: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    make = {"content": content_image, "style": style_image}[kind]
    return np.stack([make(side, rng) for _ in range(count)])


def load_directory(path, side: int | None = None) -> np.ndarray:
    """All ``*.ppm`` images in a directory, in filename order, cropped to ``side`` if given."""
    files = sorted(Path(path).glob("*.ppm"))
    if not files:
        raise FileNotFoundError(f"no .ppm images in {path}")
    imgs = [read_image(f) for f in files]
    if side is not None:
        imgs = [im[:, :side, :side] for im in imgs]
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise ValueError(f"images in {path} have differing sizes: {sorted(shapes)}")
    return np.stack(imgs)
