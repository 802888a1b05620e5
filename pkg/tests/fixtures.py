"""On-disk fixtures shared by the dataset, CLI and acceptance tests."""

from pathlib import Path

import numpy as np

from reflectkit.compositor import synthetic_pair
from reflectkit.imgcore import gaussian_blur, save_image


def shift_replicate(img, dx, dy):
    """Content moved dx columns right and dy rows down, border pixels repeated."""
    h, w = img.shape[:2]
    ys = np.clip(np.arange(h) - dy, 0, h - 1)
    xs = np.clip(np.arange(w) - dx, 0, w - 1)
    return img[ys][:, xs]


def make_clip(root: Path, name: str, size=64, frames=3, seed=0, shift=None):
    """clip directory of compositor pairs sharing one transmission.

    With ``shift=(dx, dy)`` the last reflection frame is displaced.
    """
    rng = np.random.default_rng(seed)
    first = synthetic_pair(size, rng)
    T = first.T
    clip = Path(root) / name
    clip.mkdir(parents=True, exist_ok=True)
    save_image(clip / "T.png", T)
    from reflectkit.compositor import ReflectionSpec, compose_pair
    from reflectkit.textures import random_object
    for k in range(frames):
        obj = random_object(size // 3, size // 3, rng)
        pair = compose_pair(T, ReflectionSpec(seed=int(rng.integers(0, 2**31))), obj)
        data = pair.I.data
        if shift is not None and k == frames - 1:
            data = shift_replicate(data, *shift)
        save_image(clip / f"R_{k + 1:03d}.png", data)
    return clip


def make_dataset(root: Path, clips=3, size=64, frames=2, shifted=None):
    """``clips`` clip directories; ``shifted`` names one whose last frame moves 2 px."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for k in range(clips):
        name = f"clip_{k:02d}"
        make_clip(root, name, size=size, frames=frames, seed=k,
                  shift=(2, 0) if name == shifted else None)
    return root


def textured(seed, size=64):
    r = np.random.default_rng(seed)
    return gaussian_blur(r.random((size, size, 3)).astype(np.float32), 1.0)
