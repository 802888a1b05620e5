"""PSNR / SSIM in RGB and a directory-level evaluation harness."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imgcore import ImageLike, load_image, pixels

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def _pair(a: ImageLike, b: ImageLike):
    x = np.asarray(pixels(a), dtype=np.float64)
    y = np.asarray(pixels(b), dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def psnr(a: ImageLike, b: ImageLike, peak: float = 1.0) -> float:
    """PSNR in dB over all samples of all channels; +inf for identical inputs."""
    x, y = _pair(a, b)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim_window() -> np.ndarray:
    r = SSIM_WINDOW // 2
    t = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(t * t) / (2 * SSIM_SIGMA ** 2))
    return g / g.sum()


def _valid_filter(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = ndimage.correlate1d(x, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    return out[r:x.shape[0] - r, r:x.shape[1] - r]


def ssim_channel(x: np.ndarray, y: np.ndarray, peak: float = 1.0) -> float:
    g = ssim_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mx, my = _valid_filter(x, g), _valid_filter(y, g)
    sxx = _valid_filter(x * x, g) - mx * mx
    syy = _valid_filter(y * y, g) - my * my
    sxy = _valid_filter(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a: ImageLike, b: ImageLike, peak: float = 1.0) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5) over valid windows,
    averaged across channels."""
    x, y = _pair(a, b)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if min(x.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape[1]}x{x.shape[0]} smaller than the SSIM window")
    scores = [ssim_channel(x[..., c], y[..., c], peak) for c in range(x.shape[2])]
    return float(np.mean(scores))


@dataclass
class EvalRow:
    name: str
    psnr: float
    ssim: float


@dataclass
class EvalTable:
    rows: list
    unmatched: list

    @property
    def finite_psnr(self) -> list:
        return [r.psnr for r in self.rows if math.isfinite(r.psnr)]

    @property
    def excluded_infinite(self) -> int:
        return len(self.rows) - len(self.finite_psnr)

    @property
    def mean_psnr(self) -> float:
        finite = self.finite_psnr
        if finite:
            return float(np.mean(finite))
        return math.inf if self.rows else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows])) if self.rows else math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "psnr_db", "ssim"])
        for r in self.rows:
            w.writerow([r.name, _fmt_db(r.psnr), f"{r.ssim:.6f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        width = max([len("AVERAGE")] + [len(r.name) for r in self.rows])
        lines = [f"# rows with infinite PSNR excluded from the PSNR average: "
                 f"{self.excluded_infinite}",
                 f"{'name':<{width}}  {'psnr_db':>10}  {'ssim':>8}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {_fmt_db(r.psnr):>10}  {r.ssim:>8.4f}")
        lines.append(f"{'AVERAGE':<{width}}  {_fmt_db(self.mean_psnr):>10}  "
                     f"{self.mean_ssim:>8.4f}")
        return "\n".join(lines) + "\n"


def _fmt_db(v: float) -> str:
    return "inf" if v == math.inf else ("nan" if math.isnan(v) else f"{v:.4f}")


def _images(d: Path) -> dict:
    return {p.name: p for p in sorted(d.iterdir())
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES}


def _score(pair):
    name, pred_path, gt_path = pair
    a, b = load_image(pred_path), load_image(gt_path)
    return EvalRow(name, psnr(a, b), ssim(a, b))


def evaluate_dirs(pred_dir, gt_dir, workers: int = 4) -> EvalTable:
    """Score every prediction against the same-named ground truth.

    Predictions without a counterpart are listed in ``unmatched``.
    """
    preds, gts = _images(Path(pred_dir)), _images(Path(gt_dir))
    matched = [(n, preds[n], gts[n]) for n in sorted(preds) if n in gts]
    unmatched = [n for n in sorted(preds) if n not in gts]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(_score, matched))
    return EvalTable(rows, unmatched)
