"""Training loop, data sources and inference for the toy cascade."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..analysis import MaxRFOptions, maxrf
from ..compositor import ReflectionSpec, synthetic_pair
from ..dataset import PairManifest, sample_patches
from ..imgcore import Image
from ..metrics import psnr
from .autograd import Tensor, weighted_sum
from .checkpoint import Checkpoint, CheckpointError
from .losses import GAMMA1, GAMMA2, loss_dnet, loss_rnet
from .nets import ParamStore, init_params, rdnet_forward, rrnet_forward
from .optim import Adam, cosine_lr

log = logging.getLogger(__name__)

MASK_TARGETS = ("maxrf", "maxrf-exact", "zero")

# Receptive-field radius of the full cascade: 4 convs in RDNet feed a mask
# into 6 convs of RRNet, each 3x3.
RECEPTIVE_RADIUS = 10


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, values):
        super().__init__(f"non-finite loss at iteration {iteration}: {values}")
        self.iteration = iteration


@dataclass
class TrainConfig:
    total_iters: int = 2000
    lr: float = 0.0006
    batch: int = 4
    patch: int = 64
    gamma1: float = GAMMA1
    gamma2: float = GAMMA2
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    detach_mask: bool = True
    joint: bool = True
    mask_target: str = "maxrf"
    log_every: int = 10

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        for name in ("total_iters", "batch", "patch", "log_every"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (self.lr > 0 and self.eps > 0):
            raise ValueError("lr and eps must be positive")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("gamma1 and gamma2 must be non-negative")
        if not all(0 <= b < 1 for b in self.betas):
            raise ValueError("betas must lie in [0, 1)")
        if self.mask_target not in MASK_TARGETS:
            raise ValueError(f"mask_target must be one of {MASK_TARGETS}")
        if not self.joint and self.total_iters < 2:
            raise ValueError("staged training needs at least 2 iterations")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def _rgb(img: Image) -> np.ndarray:
    data = img.to_srgb().data
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    return np.ascontiguousarray(data, dtype=np.float32)


def to_batch(arrays) -> np.ndarray:
    """Stack HxWxC arrays into an (N, C, H, W) float32 batch."""
    return np.ascontiguousarray(np.stack(arrays).transpose(0, 3, 1, 2), dtype=np.float32)


class PatchPool:
    """Fixed in-memory (I, T) pairs, visited in seeded shuffled epochs."""

    def __init__(self, pairs):
        self.pairs = [(_rgb(i) if isinstance(i, Image) else np.asarray(i, np.float32),
                       _rgb(t) if isinstance(t, Image) else np.asarray(t, np.float32))
                      for i, t in pairs]
        if not self.pairs:
            raise ValueError("empty data source")
        shapes = {p[0].shape for p in self.pairs} | {p[1].shape for p in self.pairs}
        if len(shapes) != 1:
            raise ValueError(f"patch shapes differ: {sorted(shapes)}")
        self._order = []

    def __len__(self):
        return len(self.pairs)

    def sample(self, batch: int, rng: np.random.Generator):
        chosen = []
        while len(chosen) < batch:
            if not self._order:
                self._order = list(rng.permutation(len(self.pairs)))
            chosen.append(self._order.pop(0))
        return ([self.pairs[k][0] for k in chosen], [self.pairs[k][1] for k in chosen])


class ManifestSource:
    """Fresh co-located crops from a manifest on every draw."""

    def __init__(self, manifest: PairManifest, size: int):
        if manifest.num_pairs == 0:
            raise ValueError("empty data source")
        self.manifest = manifest
        self.size = size
        self._cache = {}

    def sample(self, batch: int, rng: np.random.Generator):
        patches = sample_patches(self.manifest, self.size, batch, rng, self._cache)
        return [_rgb(p.I) for p in patches], [_rgb(p.T) for p in patches]


def synthetic_patches(count: int, size: int = 64, seed: int = 0,
                      spec: Optional[ReflectionSpec] = None) -> list:
    """``count`` compositor pairs as (I, T) sRGB arrays."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        pair = synthetic_pair(size, rng, spec)
        out.append((_rgb(pair.I), _rgb(pair.T)))
    return out


def mask_targets(images, transmissions, mode: str) -> np.ndarray:
    """(N, 1, H, W) float32 detection targets for a batch."""
    if mode == "zero":
        h, w = images[0].shape[:2]
        return np.zeros((len(images), 1, h, w), np.float32)
    opts = MaxRFOptions.exact() if mode == "maxrf-exact" else MaxRFOptions()
    masks = [maxrf(i, t, opts)[0] for i, t in zip(images, transmissions)]
    return np.stack(masks)[:, None].astype(np.float32)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class LogRow:
    iteration: int
    lr: float
    loss_dnet: float
    loss_rnet: float


@dataclass
class TrainResult:
    params: ParamStore
    checkpoint: Checkpoint
    log: list = field(default_factory=list)
    initial_batch: tuple = ()

    def write_log(self, path) -> None:
        write_log(path, self.log)


def write_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "lr", "loss_dnet", "loss_rnet"])
        for r in rows:
            w.writerow([r.iteration, repr(r.lr), repr(r.loss_dnet), repr(r.loss_rnet)])


def _stages(cfg: TrainConfig, params: ParamStore):
    """(first_iter, length, parameter names, which losses backpropagate)."""
    if cfg.joint:
        return [(0, cfg.total_iters, list(params.keys()), "both")]
    half = cfg.total_iters // 2
    rd = [k for k in params if k.startswith("rdnet.")]
    rr = [k for k in params if k.startswith("rrnet.")]
    return [(0, half, rd, "dnet"), (half, cfg.total_iters - half, rr, "rnet")]


def train(cfg: TrainConfig, source, params: Optional[ParamStore] = None) -> TrainResult:
    """Optimise both networks on batches from ``source``.

    Joint mode backpropagates L_DNet + L_RNet every step under one cosine
    schedule. Staged mode spends the first half of the iterations on RDNet
    alone and the second half on RRNet alone, each with its own Adam state
    and cosine schedule.
    """
    params = params if params is not None else init_params(cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    rows, initial = [], ()
    for start, length, names, which in _stages(cfg, params):
        opt = Adam(cfg.betas, cfg.eps)
        for k in range(length):
            it = start + k
            lr = cosine_lr(k, length, cfg.lr)
            imgs, trans = source.sample(cfg.batch, rng)
            if not initial:
                initial = (to_batch(imgs), to_batch(trans))
            x = Tensor(to_batch(imgs))
            t = Tensor(to_batch(trans))
            m = Tensor(mask_targets(imgs, trans, cfg.mask_target))
            params.zero_grad()
            m_hat = rdnet_forward(params, x)
            l_d = loss_dnet(m_hat, m, cfg.gamma1)
            t_hat = rrnet_forward(params, x, m_hat, cfg.detach_mask)
            l_r = loss_rnet(t_hat, t, cfg.gamma2)
            values = (float(l_d.data), float(l_r.data))
            if not all(math.isfinite(v) for v in values):
                raise TrainingDiverged(it, values)
            if it % cfg.log_every == 0 or it == cfg.total_iters - 1:
                rows.append(LogRow(it, lr, *values))
            if which == "both":
                weighted_sum([(1.0, l_d), (1.0, l_r)]).backward()
            elif which == "dnet":
                l_d.backward()
            else:
                l_r.backward()
            opt.step(params, lr, names)
    ckpt = to_checkpoint(params, cfg, cfg.total_iters)
    return TrainResult(params, ckpt, rows, initial)


def to_checkpoint(params: ParamStore, cfg: Optional[TrainConfig] = None,
                  iteration: int = 0) -> Checkpoint:
    meta = {"seed": params.seed, "scheme": params.scheme}
    return Checkpoint(params.arrays().copy(), cfg.to_dict() if cfg else {}, iteration, meta)


def from_checkpoint(ckpt: Checkpoint) -> ParamStore:
    reference = init_params(0)
    missing = [k for k in reference if k not in ckpt.tensors]
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {', '.join(missing)}")
    for k, v in reference.items():
        if ckpt.tensors[k].shape != v.shape:
            raise CheckpointError(f"{k}: shape {ckpt.tensors[k].shape}, expected {v.shape}")
    return ParamStore.from_arrays({k: ckpt.tensors[k] for k in reference},
                                  seed=ckpt.meta.get("seed"), scheme=ckpt.meta.get("scheme", "loaded"))


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def predict(params: ParamStore, batch: np.ndarray, mask: Optional[np.ndarray] = None):
    """(M_hat, T_hat) arrays for an (N, 3, H, W) batch; ``mask`` overrides RDNet."""
    x = Tensor(batch)
    m = rdnet_forward(params, x).data if mask is None else np.asarray(mask, np.float32)
    t = rrnet_forward(params, x, Tensor(m)).data
    return m, t


def _tiles(n: int, tile: int):
    return [(s, min(s + tile, n)) for s in range(0, n, tile)]


def infer(ckpt, image: Image, tile: int = 256, halo: int = 16):
    """Run both stages on a full image, tile by tile.

    Each tile is computed with a ``halo`` of surrounding context so that
    seams match whole-image inference; ``halo`` must cover the cascade's
    receptive radius.
    """
    if halo < RECEPTIVE_RADIUS:
        raise ValueError(f"halo must be at least {RECEPTIVE_RADIUS}")
    params = ckpt if isinstance(ckpt, ParamStore) else from_checkpoint(ckpt)
    rgb = _rgb(image)
    h, w = rgb.shape[:2]
    m_out = np.empty((h, w, 1), np.float32)
    t_out = np.empty((h, w, 3), np.float32)
    for y0, y1 in _tiles(h, tile):
        for x0, x1 in _tiles(w, tile):
            ya, yb = max(0, y0 - halo), min(h, y1 + halo)
            xa, xb = max(0, x0 - halo), min(w, x1 + halo)
            m, t = predict(params, to_batch([rgb[ya:yb, xa:xb]]))
            m_out[y0:y1, x0:x1, 0] = m[0, 0, y0 - ya:y1 - ya, x0 - xa:x1 - xa]
            t_out[y0:y1, x0:x1] = t[0].transpose(1, 2, 0)[y0 - ya:y1 - ya, x0 - xa:x1 - xa]
    return Image(np.clip(m_out, 0, 1), "srgb"), Image(np.clip(t_out, 0, 1), "srgb")


def heldout_psnr(params: ParamStore, pairs, mask: Optional[str] = None) -> list:
    """Per-pair PSNR of T_hat against T; ``mask="zero"`` forces an all-zero guide."""
    out = []
    for i, t in pairs:
        guide = np.zeros((1, 1) + i.shape[:2], np.float32) if mask == "zero" else None
        _, t_hat = predict(params, to_batch([i]), guide)
        out.append(psnr(t_hat[0].transpose(1, 2, 0), t))
    return out
