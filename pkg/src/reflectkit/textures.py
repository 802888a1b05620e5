"""Procedural scenes for synthetic pairs: textured backgrounds and reflected objects."""

from __future__ import annotations

import numpy as np

from .imgcore import Image, gaussian_blur


def bilinear_upsample(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a (gh, gw[, c]) grid to (h, w[, c])."""
    grid = np.asarray(grid, dtype=np.float64)
    gh, gw = grid.shape[:2]
    ys = np.linspace(0.0, gh - 1, h) if h > 1 else np.zeros(1)
    xs = np.linspace(0.0, gw - 1, w) if w > 1 else np.zeros(1)
    y0 = np.clip(np.floor(ys).astype(int), 0, max(gh - 2, 0))
    x0 = np.clip(np.floor(xs).astype(int), 0, max(gw - 2, 0))
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    if grid.ndim == 3:
        fy, fx = fy[..., None], fx[..., None]
    top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x1] * fx
    bot = grid[y1][:, x0] * (1 - fx) + grid[y1][:, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def _soft_shape(h, w, rng, soft=0.8):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    if rng.random() < 0.5:
        r = rng.uniform(0.08, 0.3) * min(h, w)
        dist = np.hypot(yy - cy, xx - cx) - r
    else:
        hy, hx = rng.uniform(0.05, 0.3) * h, rng.uniform(0.05, 0.3) * w
        dist = np.maximum(np.abs(yy - cy) - hy, np.abs(xx - cx) - hx)
    return np.clip(0.5 - dist / (2 * soft), 0.0, 1.0)


def random_texture(h: int, w: int, rng: np.random.Generator) -> Image:
    """Smooth field with a handful of soft shapes and fine grain, sRGB in [0.05, 0.95].

    Colours are luminance-dominated (chroma within +/-0.08), as in most
    natural scenes.
    """
    lum = rng.uniform(0.25, 0.75, size=(5, 5, 1))
    chroma = rng.uniform(-0.08, 0.08, size=(5, 5, 3))
    img = bilinear_upsample(lum + chroma, h, w)
    for _ in range(int(rng.integers(3, 8))):
        a = _soft_shape(h, w, rng)[..., None]
        color = rng.uniform(0.15, 0.85) + rng.uniform(-0.08, 0.08, size=3)
        img = img * (1 - a) + color.astype(np.float32) * a
    grain = gaussian_blur(rng.standard_normal((h, w)).astype(np.float32), 0.8)
    img = img + 0.02 * grain[..., None]
    return Image(np.clip(img, 0.05, 0.95), "srgb")


def random_object(h: int, w: int, rng: np.random.Generator) -> Image:
    """A bright structured thing seen in glass: lamps, window bars, stripes."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    kind = int(rng.integers(0, 3))
    if kind == 0:
        period = rng.uniform(10, 20)
        theta = rng.uniform(0, np.pi)
        u = xx * np.cos(theta) + yy * np.sin(theta)
        lum = (np.sin(2 * np.pi * u / period) > 0).astype(np.float32)
    elif kind == 1:
        cells = int(rng.integers(2, 5))
        half = int(rng.integers(2, 4))
        bars = np.zeros((h, w), np.float32)
        for k in range(1, cells):
            cx, cy = int(k * w / cells), int(k * h / cells)
            bars[:, max(cx - half, 0):cx + half] = 1
            bars[max(cy - half, 0):cy + half, :] = 1
        lum = 1.0 - bars
    else:
        lum = np.zeros((h, w), np.float32)
        for _ in range(int(rng.integers(2, 6))):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            r = rng.uniform(0.08, 0.25) * min(h, w)
            lum = np.maximum(lum, (np.hypot(yy - cy, xx - cx) < r).astype(np.float32))
    tint = rng.uniform(0.8, 1.0, size=3).astype(np.float32)
    img = 0.95 * lum[..., None] * tint
    return Image(np.clip(img, 0.0, 1.0), "srgb")
