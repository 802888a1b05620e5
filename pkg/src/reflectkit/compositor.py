"""Synthetic aligned (I, T) pairs built in linear light.

A reflection has two parts: a smooth ambient veil over the whole frame and a
local, blurred virtual image of some object on the camera side. Both are
added to the linearised transmission and clipped, then re-encoded to sRGB.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Union

import cv2
import numpy as np

from .imgcore import (Image, dilate, gaussian_blur, linear_to_srgb, sobel,
                      srgb_to_linear)
from .textures import bilinear_upsample, random_object, random_texture

SUPPORT_GRADIENT_THRESHOLD = 1e-3
SUPPORT_DILATION = 2

Placement = Union[str, tuple]


@dataclass(frozen=True)
class ReflectionSpec:
    ambient_gain: float = 0.12
    ambient_grid: tuple = (4, 4)
    local_alpha: float = 0.5
    local_blur: float = 2.5
    placement: Placement = "random"
    seed: int = 0
    ambient_tint: bool = False

    def __post_init__(self):
        if not 0.0 <= self.ambient_gain <= 0.5:
            raise ValueError("ambient_gain must be in [0, 0.5]")
        if not 0.0 <= self.local_alpha <= 1.0:
            raise ValueError("local_alpha must be in [0, 1]")
        if self.local_blur < 0:
            raise ValueError("local_blur must be >= 0")
        gh, gw = self.ambient_grid
        if gh < 1 or gw < 1:
            raise ValueError("ambient_grid cells must be >= 1")
        if self.placement != "random":
            if len(self.placement) != 4:
                raise ValueError("placement must be 'random' or (x, y, w, h)")
            object.__setattr__(self, "placement", tuple(int(v) for v in self.placement))
        object.__setattr__(self, "ambient_grid", (int(gh), int(gw)))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ambient_grid"] = list(self.ambient_grid)
        if self.placement != "random":
            d["placement"] = list(self.placement)
        return d


@dataclass
class ComposedPair:
    I: Image
    T: Image
    ref_support: np.ndarray
    spec_used: ReflectionSpec
    clipped: np.ndarray = field(repr=False)

    @property
    def clipped_pixels(self) -> int:
        return int(self.clipped.sum())

    def metadata(self) -> dict:
        d = self.spec_used.to_dict()
        d["clipped_pixels"] = self.clipped_pixels
        return d


def make_ambient_field(h: int, w: int, gain: float, grid, rng: np.random.Generator) -> np.ndarray:
    """Smooth veil: uniform draws in [gain/2, gain] on a coarse grid, upsampled."""
    if gain < 0:
        raise ValueError("ambient gain must be >= 0")
    gh, gw = grid
    values = rng.uniform(0.5 * gain, gain, size=(gh, gw))
    if gain == 0:
        return np.zeros((h, w), np.float32)
    return np.clip(bilinear_upsample(values, h, w), 0.5 * gain, gain).astype(np.float32)


def _resolve_placement(obj_shape, canvas, placement, rng):
    oh, ow = obj_shape
    ch, cw = canvas
    if placement == "random":
        if oh > ch or ow > cw:
            raise ValueError(f"object {ow}x{oh} does not fit canvas {cw}x{ch}")
        x = int(rng.integers(0, cw - ow + 1))
        y = int(rng.integers(0, ch - oh + 1))
        return x, y, ow, oh
    x, y, w, h = placement
    if x < 0 or y < 0 or w < 1 or h < 1 or x + w > cw or y + h > ch:
        raise ValueError(f"placement {placement} outside canvas {cw}x{ch}")
    return x, y, w, h


def _fit(obj_lin: np.ndarray, w: int, h: int) -> np.ndarray:
    if obj_lin.shape[:2] == (h, w):
        return obj_lin
    out = cv2.resize(obj_lin, (w, h), interpolation=cv2.INTER_LINEAR)
    return out.reshape(h, w, -1)


def make_local_layer(obj: Image, canvas, spec: ReflectionSpec, rng: np.random.Generator,
                     channels: int = 3):
    """Blurred, attenuated object placed on an empty linear canvas.

    Returns ``(layer, support, rect)``; ``support`` marks where the layer
    has visible gradient, dilated by two pixels.
    """
    ch, cw = canvas
    rect = _resolve_placement((obj.height, obj.width), canvas, spec.placement, rng)
    layer = np.zeros((ch, cw, channels), np.float32)
    if spec.local_alpha == 0:
        return layer, np.zeros((ch, cw), bool), rect
    src = obj.to_linear().data
    if src.shape[2] != channels:
        src = np.repeat(src, channels, axis=2) if src.shape[2] == 1 else \
            src.mean(axis=2, keepdims=True)
    x, y, w, h = rect
    layer[y:y + h, x:x + w] = spec.local_alpha * _fit(src, w, h)
    if spec.local_blur > 0:
        layer = gaussian_blur(layer, spec.local_blur)
    mag = np.max([sobel(layer[:, :, c]).magnitude for c in range(channels)], axis=0)
    support = dilate(mag > SUPPORT_GRADIENT_THRESHOLD, SUPPORT_DILATION)
    return layer, support, rect


def compose_pair(T: Image, spec: ReflectionSpec, obj: Optional[Image] = None) -> ComposedPair:
    """I = encode(clip(linear(T) + ambient + local)) with all draws from ``spec.seed``."""
    if spec.local_alpha > 0 and obj is None:
        raise ValueError("an object image is required when local_alpha > 0")
    rng = np.random.default_rng(spec.seed)
    h, w, c = T.data.shape
    t_lin = T.to_linear().data
    if spec.ambient_tint:
        ambient = np.stack([make_ambient_field(h, w, spec.ambient_gain, spec.ambient_grid, rng)
                            for _ in range(c)], axis=2)
    else:
        ambient = make_ambient_field(h, w, spec.ambient_gain, spec.ambient_grid, rng)[..., None]
    if obj is not None:
        layer, support, rect = make_local_layer(obj, (h, w), spec, rng, channels=c)
        used = dataclasses.replace(spec, placement=rect)
    else:
        layer, support, used = 0.0, np.zeros((h, w), bool), spec
    i_lin = t_lin + ambient + layer
    clipped = (i_lin >= 1.0).any(axis=2)
    i_srgb = linear_to_srgb(np.clip(i_lin, 0.0, 1.0))
    if not np.any(ambient) and not np.any(layer):
        i_srgb = T.to_srgb().data.copy()
    return ComposedPair(Image(i_srgb, "srgb"), T, support, used, clipped)


def synthetic_pair(size: int, rng: np.random.Generator, spec: ReflectionSpec | None = None,
                   object_fraction=(0.3, 0.6)) -> ComposedPair:
    """Texture + random object composed with ``spec`` (seed drawn from ``rng``)."""
    T = random_texture(size, size, rng)
    lo, hi = object_fraction
    oh = int(rng.integers(max(2, int(lo * size)), max(3, int(hi * size)) + 1))
    ow = int(rng.integers(max(2, int(lo * size)), max(3, int(hi * size)) + 1))
    obj = random_object(oh, ow, rng)
    seed = int(rng.integers(0, 2**63 - 1))
    spec = dataclasses.replace(spec or ReflectionSpec(), seed=seed)
    return compose_pair(T, spec, obj)
