"""Reflection-location extraction and pair diagnostics.

The Maximum Reflection Filter marks pixels whose Sobel gradient magnitude in
the reflection-contaminated image exceeds that of the transmission image.
Ambient reflection lowers the contrast of the transmitted scene, so what
survives the comparison is mostly texture contributed by local reflections.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import cv2
import numpy as np

from .imgcore import (ImageLike, dilate, gaussian_blur, luminance_gradient, pixels,
                      save_image, sobel)

SMOOTH_MODES = ("none", "majority3x3")


@dataclass(frozen=True)
class MaxRFOptions:
    margin: float = 0.02
    pre_blur_sigma: float = 1.0
    smooth: str = "majority3x3"
    per_channel: bool = False

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.pre_blur_sigma < 0:
            raise ValueError("pre_blur_sigma must be >= 0")
        if self.smooth not in SMOOTH_MODES:
            raise ValueError(f"smooth must be one of {SMOOTH_MODES}")

    @classmethod
    def exact(cls) -> "MaxRFOptions":
        """Strict per-pixel comparison with no margin, blur or cleanup."""
        return cls(margin=0.0, pre_blur_sigma=0.0, smooth="none")


def _check_pair(I, T):
    a, b = pixels(I), pixels(T)
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    return a, b


def _gradient_magnitudes(data: np.ndarray, sigma: float, per_channel: bool):
    if per_channel and data.ndim == 3:
        planes = [data[:, :, c] for c in range(data.shape[2])]
        return [sobel(gaussian_blur(p, sigma)).magnitude for p in planes]
    return [luminance_gradient(data, sigma).magnitude]


def majority3x3(mask: np.ndarray) -> np.ndarray:
    """1 where at least 5 of the 9 neighbours (replicate border) are set."""
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    counts = cv2.boxFilter(m, -1, (3, 3), normalize=False, borderType=cv2.BORDER_REPLICATE)
    return counts >= 5


def maxrf(I: ImageLike, T: ImageLike, opts: MaxRFOptions | None = None):
    """Local reflection mask and the signed gradient comparison plane.

    Returns ``(mask, comparison)`` where ``comparison = G_I - G_T`` and
    ``mask = comparison > margin`` (optionally majority-smoothed). In
    per-channel mode the comparison is the channel-wise maximum.
    """
    opts = opts or MaxRFOptions()
    a, b = _check_pair(I, T)
    gi = _gradient_magnitudes(a, opts.pre_blur_sigma, opts.per_channel)
    gt = _gradient_magnitudes(b, opts.pre_blur_sigma, opts.per_channel)
    comparison = gi[0] - gt[0]
    for x, y in zip(gi[1:], gt[1:]):
        comparison = np.maximum(comparison, x - y)
    mask = comparison > opts.margin
    if opts.smooth == "majority3x3":
        mask = majority3x3(mask)
    return mask, comparison


class MaskMetrics(NamedTuple):
    precision: float
    recall: float
    iou: float


def _ratio(num: int, den: int) -> float:
    return 1.0 if den == 0 else num / den


def mask_metrics(pred: np.ndarray, ref: np.ndarray, dilate_radius: int = 0) -> MaskMetrics:
    """Precision against the dilated reference; recall and IoU on raw masks.

    Empty denominators count as perfect (0/0 = 1).
    """
    pred = np.asarray(pred, dtype=bool)
    ref = np.asarray(ref, dtype=bool)
    if pred.shape != ref.shape:
        raise ValueError(f"mask dimensions differ: {pred.shape} vs {ref.shape}")
    tolerant = dilate(ref, dilate_radius)
    n_pred = int(pred.sum())
    precision = _ratio(int((pred & tolerant).sum()), n_pred)
    tp = int((pred & ref).sum())
    recall = _ratio(tp, int(ref.sum()))
    iou = _ratio(tp, int((pred | ref).sum()))
    return MaskMetrics(precision, recall, iou)


def tv_norm(p: np.ndarray) -> float:
    """Anisotropic forward-difference total variation divided by pixel count."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("tv_norm expects a 2-D plane")
    total = np.abs(np.diff(p, axis=1)).sum() + np.abs(np.diff(p, axis=0)).sum()
    return float(total / p.size)


def gradient_difference_map(I: ImageLike, T: ImageLike) -> np.ndarray:
    """|G_I - G_T| on luminance; double edges here betray a misaligned pair."""
    a, b = _check_pair(I, T)
    return np.abs(luminance_gradient(a).magnitude - luminance_gradient(b).magnitude)


@dataclass
class AlignmentReport:
    best_shift: tuple[int, int]
    ncc_at_zero: float
    ncc_at_best: float
    aligned: bool
    diff_map: np.ndarray

    def summary(self) -> dict:
        return {
            "best_shift": list(self.best_shift),
            "ncc_at_zero": round(self.ncc_at_zero, 6),
            "ncc_at_best": round(self.ncc_at_best, 6),
            "aligned": self.aligned,
        }


def _ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    if den <= 0:
        return 0.0
    return float((a * b).sum() / den)


def shifted_overlap(a: np.ndarray, b: np.ndarray, dx: int, dy: int):
    """Views with ``a[y + dy, x + dx]`` paired against ``b[y, x]``."""
    h, w = a.shape
    ay = slice(max(0, dy), h + min(0, dy))
    ax = slice(max(0, dx), w + min(0, dx))
    by = slice(max(0, -dy), h + min(0, -dy))
    bx = slice(max(0, -dx), w + min(0, -dx))
    return a[ay, ax], b[by, bx]


def alignment_score(I: ImageLike, T: ImageLike, max_shift: int = 3,
                    delta: float = 0.02) -> AlignmentReport:
    """Exhaustive integer-shift NCC search over Sobel magnitude planes.

    ``best_shift = (dx, dy)`` means content of ``I`` sits ``dx`` columns
    right and ``dy`` rows below where it sits in ``T``.
    """
    a, b = _check_pair(I, T)
    if max_shift < 1:
        raise ValueError("max_shift must be >= 1")
    h, w = a.shape[:2]
    if min(h, w) <= 2 * max_shift:
        raise ValueError(f"{w}x{h} image too small for a +/-{max_shift} shift window")
    ga = luminance_gradient(a).magnitude.astype(np.float64)
    gb = luminance_gradient(b).magnitude.astype(np.float64)
    scores = {}
    for dx in range(-max_shift, max_shift + 1):
        for dy in range(-max_shift, max_shift + 1):
            scores[(dx, dy)] = _ncc(*shifted_overlap(ga, gb, dx, dy))
    best = min(scores, key=lambda s: (-scores[s], s != (0, 0), s))
    zero, top = scores[(0, 0)], scores[best]
    aligned = best == (0, 0) or (top - zero) <= delta
    diff = np.abs(ga - gb).astype(np.float32)
    return AlignmentReport(best, zero, top, aligned, diff)


def save_mask(path, mask: np.ndarray) -> None:
    save_image(path, np.asarray(mask, dtype=np.float32))


def save_plane(path, plane: np.ndarray) -> dict:
    """Write a real plane as 16-bit PNG after min/max normalization.

    The (min, max) pair goes to a JSON sidecar with the same basename.
    """
    path = Path(path)
    plane = np.asarray(plane, dtype=np.float64)
    lo, hi = float(plane.min()), float(plane.max())
    norm = (plane - lo) / (hi - lo) if hi > lo else np.zeros_like(plane)
    save_image(path, norm.astype(np.float32), bit_depth=16)
    meta = {"min": lo, "max": hi}
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return meta


def overlay(img: ImageLike, mask: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Mask alpha-blended in red over an sRGB image; returns HxWx3."""
    data = pixels(img)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    out = data.astype(np.float32).copy()
    m = np.asarray(mask, dtype=bool)
    red = np.array([1.0, 0.0, 0.0], dtype=np.float32)
    out[m] = (1 - alpha) * out[m] + alpha * red
    return out

