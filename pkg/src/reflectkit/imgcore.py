"""Image I/O, color conversion and the shared spatial kernels.

Layout convention: an :class:`Image` holds an ``(H, W, C)`` float32 array,
channel-interleaved, with ``C`` in {1, 3} and every sample in [0, 1].
Single-channel working buffers ("planes") are plain 2-D float32 arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import cv2
import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

ENCODINGS = ("srgb", "linear")
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_JPEG_MAGIC = b"\xff\xd8\xff"


class ImageFormatError(ValueError):
    """Raised for unreadable files or unsupported formats/bit depths."""


@dataclass
class Image:
    data: np.ndarray
    encoding: str = "srgb"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"image data must be HxWx1 or HxWx3, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if self.encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValueError("image samples must lie in [0, 1]")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def to_linear(self) -> "Image":
        if self.encoding == "linear":
            return self
        return Image(srgb_to_linear(self.data), "linear")

    def to_srgb(self) -> "Image":
        if self.encoding == "srgb":
            return self
        return Image(linear_to_srgb(self.data), "srgb")


class GradientMap(NamedTuple):
    gx: np.ndarray
    gy: np.ndarray
    magnitude: np.ndarray


ImageLike = Union[Image, np.ndarray]


def pixels(img: ImageLike) -> np.ndarray:
    """Raw sample array of an Image or array."""
    return img.data if isinstance(img, Image) else np.asarray(img)


# ---------------------------------------------------------------------------
# color transfer
# ---------------------------------------------------------------------------

def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    lo = x / np.float32(12.92)
    hi = ((x + np.float32(0.055)) / np.float32(1.055)) ** np.float32(2.4)
    return np.where(x <= 0.04045, lo, hi).astype(np.float32)


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float32), 0.0, 1.0)
    lo = x * np.float32(12.92)
    hi = np.float32(1.055) * x ** np.float32(1 / 2.4) - np.float32(0.055)
    return np.clip(np.where(x <= 0.0031308, lo, hi), 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def _sniff(path: Path) -> str:
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
    except OSError as exc:
        raise ImageFormatError(f"{path}: cannot read file ({exc.strerror})") from exc
    if head.startswith(_PNG_MAGIC):
        return "png"
    if head.startswith(_JPEG_MAGIC):
        return "jpeg"
    raise ImageFormatError(f"{path}: unsupported format (only PNG and JPEG are read)")


def load_image(path, target_encoding: str = "srgb") -> Image:
    """Decode a PNG (8/16-bit, gray or RGB) or JPEG file into an Image.

    Stored samples are taken to be sRGB-encoded; ``target_encoding="linear"``
    applies the sRGB EOTF per component.
    """
    path = Path(path)
    if target_encoding not in ENCODINGS:
        raise ValueError(f"unknown encoding {target_encoding!r}")
    _sniff(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageFormatError(f"{path}: decoder failed")
    if raw.dtype == np.uint8:
        scale = 1.0 / 255.0
    elif raw.dtype == np.uint16:
        scale = 1.0 / 65535.0
    else:
        raise ImageFormatError(f"{path}: unsupported sample type {raw.dtype}")
    if raw.ndim == 2:
        raw = raw[:, :, None]
    elif raw.shape[2] == 4:
        raw = raw[:, :, 2::-1]  # BGRA -> RGB, alpha dropped
    elif raw.shape[2] == 3:
        raw = raw[:, :, ::-1]
    elif raw.shape[2] == 2:
        raw = raw[:, :, :1]
    else:
        raise ImageFormatError(f"{path}: unsupported channel count {raw.shape[2]}")
    data = (raw.astype(np.float64) * scale).astype(np.float32)
    img = Image(data, "srgb")
    return img.to_linear() if target_encoding == "linear" else img


def quantize(data: np.ndarray, bit_depth: int = 8) -> np.ndarray:
    if bit_depth == 8:
        return np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)
    if bit_depth == 16:
        return np.round(np.clip(data.astype(np.float64), 0.0, 1.0) * 65535.0).astype(np.uint16)
    raise ValueError(f"unsupported bit depth {bit_depth}")


def save_image(path, img: ImageLike, bit_depth: int = 8) -> None:
    """Write an Image (or [0,1] array) as PNG. Linear images are sRGB-encoded first."""
    path = Path(path)
    if isinstance(img, Image):
        data = img.to_srgb().data
    else:
        data = np.asarray(img, dtype=np.float32)
    q = quantize(data, bit_depth)
    if q.ndim == 3 and q.shape[2] == 3:
        q = q[:, :, ::-1]
    elif q.ndim == 3:
        q = q[:, :, 0]
    if path.suffix.lower() != ".png":
        raise ImageFormatError(f"{path}: output must be PNG")
    if not cv2.imwrite(str(path), np.ascontiguousarray(q), [cv2.IMWRITE_PNG_COMPRESSION, 6]):
        raise ImageFormatError(f"{path}: write failed")


def probe_size(path) -> tuple[int, int]:
    """(width, height) from the file header, without decoding pixels."""
    path = Path(path)
    _sniff(path)
    try:
        with PILImage.open(path) as im:
            return im.size
    except Exception as exc:  # PIL raises a zoo of types on corrupt headers
        raise ImageFormatError(f"{path}: unreadable header ({exc})") from exc


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def to_grayscale(img: ImageLike) -> np.ndarray:
    data = pixels(img)
    if data.ndim == 2:
        return data.astype(np.float32, copy=True)
    if data.shape[2] == 1:
        return data[:, :, 0].astype(np.float32, copy=True)
    if data.shape[2] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {data.shape[2]}")
    return np.ascontiguousarray(data, dtype=np.float32) @ np.asarray(LUMA_WEIGHTS, np.float32)


_DIFF = np.array([-1, 0, 1], np.float32)
_SMOOTH = np.array([1, 2, 1], np.float32)
_ONE = np.ones(1, np.float32)


def _sobel_xy(p: np.ndarray):
    """Sobel responses of an (H, W) or (H, W, C) float32 array.

    Both directions take the central difference before the [1, 2, 1]
    smoothing, so adding a representable constant to the input leaves the
    output bit-identical.
    """
    border = cv2.BORDER_REPLICATE
    gx = cv2.sepFilter2D(p, cv2.CV_32F, _DIFF, _SMOOTH, borderType=border)
    dy = cv2.sepFilter2D(p, cv2.CV_32F, _ONE, _DIFF, borderType=border)
    gy = cv2.sepFilter2D(dy, cv2.CV_32F, _SMOOTH, _ONE, borderType=border)
    return gx.reshape(p.shape), gy.reshape(p.shape)


def _gradient_map(gx: np.ndarray, gy: np.ndarray) -> GradientMap:
    # numpy rather than cv2.magnitude, whose rounding depends on buffer alignment
    return GradientMap(gx, gy, np.sqrt(gx * gx + gy * gy))


def sobel(p: np.ndarray) -> GradientMap:
    """3x3 Sobel cross-correlation with replicate borders.

    ``gx`` responds positively to intensity increasing with column index,
    ``gy`` to intensity increasing with row index.
    """
    p = np.ascontiguousarray(p, dtype=np.float32)
    if p.ndim != 2:
        raise ValueError("sobel expects a 2-D plane")
    return _gradient_map(*_sobel_xy(p))


def luminance_gradient(img: ImageLike, sigma: float = 0.0) -> GradientMap:
    """Sobel gradient of the Rec.601 luminance, optionally pre-blurred.

    Sobel and the luminance weighting are both linear. Without blur the
    colour channels are differenced first and mixed last, which keeps the
    result exactly invariant to a constant added to every channel. A blur
    rounds that offset away regardless, so with ``sigma > 0`` the cheaper
    order (luminance, blur, Sobel on one plane) is used.
    """
    data = np.ascontiguousarray(pixels(img), dtype=np.float32)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    if data.ndim == 3 and data.shape[2] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {data.shape[2]}")
    if sigma > 0:
        data = gaussian_blur(to_grayscale(data), sigma)
    gx, gy = _sobel_xy(data)
    if data.ndim == 3:
        w = np.asarray(LUMA_WEIGHTS, np.float32)
        gx, gy = gx @ w, gy @ w
    return _gradient_map(gx, gy)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: ImageLike, sigma: float):
    """Separable Gaussian blur (radius ceil(3 sigma), replicate borders).

    Accepts a plane or an Image and returns the same kind.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if isinstance(img, Image):
        return Image(np.clip(gaussian_blur(img.data, sigma), 0.0, 1.0), img.encoding)
    data = np.asarray(img, dtype=np.float32)
    if sigma == 0:
        return data.copy()
    k = gaussian_kernel(sigma)
    if data.ndim == 2 or (data.ndim == 3 and data.shape[2] <= 4):
        k32 = k.astype(np.float32)
        out = cv2.sepFilter2D(np.ascontiguousarray(data), cv2.CV_32F, k32, k32,
                              borderType=cv2.BORDER_REPLICATE)
        return out.reshape(data.shape)
    out = ndimage.correlate1d(data, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a (2r+1)x(2r+1) square; nothing outside the frame."""
    mask = np.asarray(mask, dtype=bool)
    if radius <= 0:
        return mask.copy()
    return ndimage.maximum_filter(mask, size=2 * radius + 1, mode="constant", cval=False)


def crop(img: Image, x: int, y: int, w: int, h: int) -> Image:
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > img.width or y + h > img.height:
        raise ValueError(
            f"crop rectangle ({x}, {y}, {w}, {h}) outside {img.width}x{img.height} image")
    return Image(img.data[y:y + h, x:x + w].copy(), img.encoding)


def random_crop(img: Image, size: int, rng: np.random.Generator) -> tuple[Image, int, int]:
    """Square crop at an offset drawn uniformly (x first, then y) from ``rng``."""
    if size < 1 or size > min(img.height, img.width):
        raise ValueError(f"crop size {size} exceeds image {img.width}x{img.height}")
    x = int(rng.integers(0, img.width - size + 1))
    y = int(rng.integers(0, img.height - size + 1))
    return crop(img, x, y, size, size), x, y
