"""Pair manifests for video-mode captures: one transmission frame per clip and
many reflection frames sharing it.

Directory convention::

    root/
      clip_0001/
        T.png          # cloth-blocked transmission frame
        R_001.png      # reflection frames, any number >= 1
        R_002.png
        meta.json      # optional: {"device": "...", "scene_tags": [...]}
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import alignment_score
from .imgcore import Image, ImageFormatError, crop, load_image, probe_size, random_crop

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
_CACHE_LIMIT = 32  # decoded frames kept by sample_patches


@dataclass
class ClipEntry:
    clip_id: str
    transmission: str
    reflections: list
    width: int
    height: int
    device: str = "unknown"
    scene_tags: list = field(default_factory=list)

    def __post_init__(self):
        if not self.reflections:
            raise ValueError(f"clip {self.clip_id}: no reflection frames")


@dataclass
class PairManifest:
    clips: list
    root: Path = Path(".")
    version: int = MANIFEST_VERSION

    def __post_init__(self):
        ids = [c.clip_id for c in self.clips]
        if len(set(ids)) != len(ids):
            raise ValueError("clip ids must be unique")
        self.root = Path(self.root)

    def __len__(self):
        return len(self.clips)

    @property
    def num_pairs(self) -> int:
        return sum(len(c.reflections) for c in self.clips)

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def subset(self, clip_ids) -> "PairManifest":
        keep = set(clip_ids)
        return PairManifest([c for c in self.clips if c.clip_id in keep], self.root, self.version)

    # serialization ------------------------------------------------------

    def to_json(self, base_dir: Optional[Path] = None) -> str:
        """Canonical text: sorted keys, 2-space indent, LF, trailing newline.

        ``root`` is written relative to ``base_dir`` (the manifest's folder).
        """
        root = self.root
        if base_dir is not None:
            root = Path(os.path.relpath(self.root.resolve(), Path(base_dir).resolve()))
        doc = {
            "version": self.version,
            "root": root.as_posix(),
            "clips": [asdict(c) for c in self.clips],
        }
        return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str, base_dir: Optional[Path] = None) -> "PairManifest":
        doc = json.loads(text)
        if doc.get("version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {doc.get('version')!r}")
        root = Path(doc.get("root", "."))
        if base_dir is not None and not root.is_absolute():
            root = Path(base_dir) / root
        clips = [ClipEntry(**c) for c in doc["clips"]]
        return cls(clips, root, doc["version"])

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json(base_dir=path.parent))

    @classmethod
    def load(cls, path) -> "PairManifest":
        path = Path(path)
        return cls.from_json(path.read_text(encoding="utf-8"), base_dir=path.parent)


@dataclass
class BuildError:
    clip_id: str
    file: str
    message: str


def _scan_clip(clip_dir: Path, root: Path):
    clip_id = clip_dir.name
    t_path = clip_dir / "T.png"
    if not t_path.is_file():
        return None, [BuildError(clip_id, "T.png", "missing transmission frame")]
    refl = sorted(p for p in clip_dir.glob("R_*.png") if p.is_file())
    if not refl:
        return None, [BuildError(clip_id, "R_*.png", "no reflection frames")]
    errors = []
    try:
        width, height = probe_size(t_path)
    except ImageFormatError as exc:
        return None, [BuildError(clip_id, "T.png", str(exc))]
    for p in refl:
        try:
            size = probe_size(p)
        except ImageFormatError as exc:
            errors.append(BuildError(clip_id, p.name, str(exc)))
            continue
        if size != (width, height):
            errors.append(BuildError(
                clip_id, p.name, f"size {size[0]}x{size[1]} differs from T {width}x{height}"))
    if errors:
        return None, errors
    meta = {}
    meta_path = clip_dir / "meta.json"
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    entry = ClipEntry(
        clip_id=clip_id,
        transmission=t_path.relative_to(root).as_posix(),
        reflections=[p.relative_to(root).as_posix() for p in refl],
        width=width,
        height=height,
        device=str(meta.get("device", "unknown")),
        scene_tags=[str(t) for t in meta.get("scene_tags", [])],
    )
    return entry, []


def build_manifest(root) -> tuple[PairManifest, list]:
    """Index every ``clip_*`` directory under ``root``.

    Invalid clips are left out and described in the returned error list.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"{root}: not a directory")
    clips, errors = [], []
    for clip_dir in sorted(p for p in root.glob("clip_*") if p.is_dir()):
        entry, errs = _scan_clip(clip_dir, root)
        errors.extend(errs)
        if entry is not None:
            clips.append(entry)
    return PairManifest(clips, root), errors


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class PairRecord:
    clip_id: str
    reflection: str
    exists: bool
    dims_ok: bool
    aligned: Optional[bool] = None
    best_shift: Optional[list] = None
    ncc_at_zero: Optional[float] = None
    ncc_at_best: Optional[float] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.exists and self.dims_ok and self.aligned is not False and self.error is None


@dataclass
class ValidationReport:
    records: list
    check_alignment: bool

    @property
    def summary(self) -> dict:
        r = self.records
        return {
            "pairs": len(r),
            "exists": sum(x.exists for x in r),
            "dims_ok": sum(x.dims_ok for x in r),
            "aligned": sum(x.aligned is True for x in r),
            "misaligned": sum(x.aligned is False for x in r),
            "errors": sum(x.error is not None for x in r),
            "ok": sum(x.ok for x in r),
        }

    @property
    def flagged(self) -> list:
        return [x for x in self.records if not x.ok]

    def to_json(self) -> str:
        doc = {
            "check_alignment": self.check_alignment,
            "summary": self.summary,
            "records": [asdict(x) for x in self.records],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def text_summary(self) -> str:
        s = self.summary
        lines = [f"pairs: {s['pairs']}  exist: {s['exists']}  dims ok: {s['dims_ok']}  "
                 f"ok: {s['ok']}"]
        if self.check_alignment:
            lines.append(f"aligned: {s['aligned']}  misaligned: {s['misaligned']}")
        for x in self.flagged:
            why = x.error or ("missing" if not x.exists else
                              "dimension mismatch" if not x.dims_ok else
                              f"misaligned, best shift {tuple(x.best_shift)}")
            lines.append(f"  FLAG {x.clip_id}/{Path(x.reflection).name}: {why}")
        return "\n".join(lines)


def _check_pair(m: PairManifest, clip: ClipEntry, rel: str, check_alignment, max_shift, delta):
    rec = PairRecord(clip.clip_id, rel, exists=False, dims_ok=False)
    t_path, r_path = m.resolve(clip.transmission), m.resolve(rel)
    rec.exists = t_path.is_file() and r_path.is_file()
    if not rec.exists:
        return rec
    try:
        dims = {probe_size(t_path), probe_size(r_path)}
        rec.dims_ok = dims == {(clip.width, clip.height)}
        if rec.dims_ok and check_alignment:
            rep = alignment_score(load_image(r_path), load_image(t_path), max_shift, delta)
            rec.aligned = bool(rep.aligned)
            rec.best_shift = list(rep.best_shift)
            rec.ncc_at_zero = round(rep.ncc_at_zero, 6)
            rec.ncc_at_best = round(rep.ncc_at_best, 6)
    except (ImageFormatError, OSError, ValueError) as exc:
        rec.error = str(exc)
    return rec


def validate_manifest(m: PairManifest, check_alignment: bool = False, max_shift: int = 3,
                      delta: float = 0.02, workers: int = 4) -> ValidationReport:
    """Per-pair existence, size and (optionally) alignment checks. Never raises on I/O."""
    jobs = [(clip, rel) for clip in sorted(m.clips, key=lambda c: c.clip_id)
            for rel in clip.reflections]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        records = list(pool.map(
            lambda job: _check_pair(m, job[0], job[1], check_alignment, max_shift, delta), jobs))
    return ValidationReport(records, check_alignment)


# ---------------------------------------------------------------------------
# splitting and patch sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    seed: int = 0
    unit: str = "clip"

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if self.unit != "clip":
            raise ValueError("splits are by clip only")


def split_manifest(m: PairManifest, s: SplitSpec) -> tuple[PairManifest, PairManifest]:
    """Seeded clip-level split; frames of one clip never straddle the split."""
    n = len(m.clips)
    if n < 2:
        raise ValueError(f"need at least 2 clips to split, have {n}")
    order = np.random.default_rng(s.seed).permutation(n)
    # round() guards against 0.7 * 10 = 7.000000000000001
    n_train = math.ceil(round(s.train_fraction * n, 9))
    train_ids = {m.clips[i].clip_id for i in order[:n_train]}
    test_ids = {c.clip_id for c in m.clips} - train_ids
    return m.subset(train_ids), m.subset(test_ids)


@dataclass
class PatchPair:
    I: Image
    T: Image
    clip_id: str
    reflection: str
    x: int
    y: int
    size: int


def sample_patches(m: PairManifest, size: int = 320, count: int = 1,
                   rng: Optional[np.random.Generator] = None, cache: Optional[dict] = None) -> list:
    """Co-located random crops: clip, then frame, then one offset shared by I and T."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return []
    rng = rng if rng is not None else np.random.default_rng()
    eligible = []
    for c in m.clips:
        if min(c.width, c.height) < size:
            log.warning("skipping clip %s: %dx%d smaller than patch %d",
                        c.clip_id, c.width, c.height, size)
        else:
            eligible.append(c)
    if not eligible:
        raise ValueError(f"no clip is at least {size}x{size}")
    cache = {} if cache is None else cache

    def get(rel):
        if rel not in cache:
            if len(cache) >= _CACHE_LIMIT:
                cache.pop(next(iter(cache)))
            cache[rel] = load_image(m.resolve(rel))
        return cache[rel]

    out = []
    for _ in range(count):
        clip = eligible[int(rng.integers(0, len(eligible)))]
        rel = clip.reflections[int(rng.integers(0, len(clip.reflections)))]
        t_patch, x, y = random_crop(get(clip.transmission), size, rng)
        i_patch = crop(get(rel), x, y, size, size)
        out.append(PatchPair(i_patch, t_patch, clip.clip_id, rel, x, y, size))
    return out
