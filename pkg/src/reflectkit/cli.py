"""reflectkit command line: masks, diagnostics, synthesis, datasets, metrics, toy training.

Exit codes: 0 on full success, 1 when some items failed or were flagged,
2 on usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import MaxRFOptions, maxrf, overlay, save_mask, save_plane
from .compositor import ReflectionSpec, compose_pair
from .dataset import (PairManifest, SplitSpec, build_manifest, sample_patches,
                      split_manifest, validate_manifest)
from .imgcore import ImageFormatError, load_image, save_image
from .metrics import evaluate_dirs
from .textures import random_object

log = logging.getLogger("reflectkit")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    """Operational failure reported on stderr with exit code 1."""


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_maxrf(args) -> int:
    opts = MaxRFOptions.exact() if args.exact_eq1 else MaxRFOptions()
    changes = {}
    if args.margin is not None:
        changes["margin"] = args.margin
    if args.pre_blur is not None:
        changes["pre_blur_sigma"] = args.pre_blur
    if args.smooth is not None:
        changes["smooth"] = "none" if args.smooth == "none" else "majority3x3"
    opts = dataclasses.replace(opts, **changes)
    I = load_image(args.reflection)
    T = load_image(args.transmission)
    mask, comparison = maxrf(I, T, opts)
    out = Path(args.out)
    save_mask(out, mask)
    save_image(out.with_suffix(".overlay.png"), overlay(I, mask))
    if args.comparison_out:
        save_plane(args.comparison_out, comparison)
    print(f"{out}: {int(mask.sum())} of {mask.size} pixels flagged")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    m = PairManifest.load(args.manifest)
    report = validate_manifest(m, check_alignment=True, max_shift=args.max_shift,
                               delta=args.delta)
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    print(report.text_summary())
    for rec in report.flagged:
        _err(f"flagged: {rec.clip_id}/{Path(rec.reflection).name}")
    return EXIT_PARTIAL if report.flagged else EXIT_OK


def _compose_one(T, obj, base: ReflectionSpec, seed: int, out_dir: Path):
    rng = np.random.default_rng(seed)
    if obj is None and base.local_alpha > 0:
        side = min(T.height, T.width)
        oh = int(rng.integers(max(2, side * 3 // 10), max(3, side * 6 // 10) + 1))
        ow = int(rng.integers(max(2, side * 3 // 10), max(3, side * 6 // 10) + 1))
        obj = random_object(oh, ow, rng)
    spec = dataclasses.replace(base, seed=int(rng.integers(0, 2**63 - 1)))
    pair = compose_pair(T, spec, obj)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_image(out_dir / "I.png", pair.I)
    save_image(out_dir / "T.png", pair.T)
    save_mask(out_dir / "mask.png", pair.ref_support)
    _write_json(out_dir / "spec.json", pair.metadata())
    return pair


def cmd_compose(args) -> int:
    if args.count < 1:
        raise CliError("--count must be at least 1")
    T = load_image(args.transmission)
    obj = load_image(args.object) if args.object else None
    base = ReflectionSpec(ambient_gain=args.ambient, local_alpha=args.alpha,
                          local_blur=args.blur)
    seeds = np.random.default_rng(args.seed).integers(0, 2**63 - 1, size=args.count)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(args.count - 1)))
    with ThreadPoolExecutor(max_workers=4) as pool:
        pairs = list(pool.map(
            lambda k: _compose_one(T, obj, base, int(seeds[k]), out / f"{k:0{width}d}"),
            range(args.count)))
    clipped = sum(p.clipped_pixels for p in pairs)
    print(f"wrote {len(pairs)} pairs to {out} ({clipped} clipped pixels)")
    return EXIT_OK


def cmd_dataset_build(args) -> int:
    m, errors = build_manifest(args.root)
    m.save(args.out)
    print(f"{args.out}: {len(m.clips)} clips, {m.num_pairs} pairs")
    for e in errors:
        _err(f"{e.clip_id}/{e.file}: {e.message}")
    return EXIT_PARTIAL if errors else EXIT_OK


def cmd_dataset_validate(args) -> int:
    manifest = Path(args.manifest)
    m = PairManifest.load(manifest)
    report = validate_manifest(m, check_alignment=args.check_alignment,
                               max_shift=args.max_shift, delta=args.delta)
    out = Path(args.out) if args.out else manifest.parent / "validation.json"
    out.write_text(report.to_json(), encoding="utf-8")
    print(report.text_summary())
    for rec in report.flagged:
        _err(f"flagged: {rec.clip_id}/{Path(rec.reflection).name}")
    return EXIT_PARTIAL if report.flagged else EXIT_OK


def cmd_dataset_split(args) -> int:
    m = PairManifest.load(args.manifest)
    train, test = split_manifest(m, SplitSpec(args.fraction, args.seed))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train.save(out / "train.json")
    test.save(out / "test.json")
    print(f"train: {len(train.clips)} clips, test: {len(test.clips)} clips")
    return EXIT_OK


def cmd_dataset_patches(args) -> int:
    m = PairManifest.load(args.manifest)
    patches = sample_patches(m, args.size, args.count, np.random.default_rng(args.seed))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for k, p in enumerate(patches):
        stem = f"{k:05d}"
        save_image(out / f"{stem}_I.png", p.I)
        save_image(out / f"{stem}_T.png", p.T)
        index.append({"name": stem, "clip_id": p.clip_id, "reflection": p.reflection,
                      "x": p.x, "y": p.y, "size": p.size})
    _write_json(out / "patches.json", index)
    print(f"wrote {len(patches)} patch pairs to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    table = evaluate_dirs(args.pred, args.gt)
    prefix = Path(args.out_prefix)
    Path(f"{prefix}.csv").write_text(table.to_csv(), encoding="utf-8")
    Path(f"{prefix}.txt").write_text(table.to_text(), encoding="utf-8")
    sys.stdout.write(table.to_text())
    for name in table.unmatched:
        _err(f"no ground truth for {name}")
    if not table.rows:
        _err("no matching image pairs")
        return EXIT_PARTIAL
    return EXIT_PARTIAL if table.unmatched else EXIT_OK


def cmd_train_toy(args) -> int:
    from .cascade.train import (ManifestSource, PatchPool, TrainConfig, TrainingDiverged,
                                synthetic_patches, train)

    patch = args.patch or (64 if args.source == "synthetic" else 320)
    cfg = TrainConfig(total_iters=args.iters, lr=args.lr, batch=args.batch, patch=patch,
                      gamma1=args.gamma1, gamma2=args.gamma2, seed=args.seed,
                      detach_mask=not args.no_detach_mask, joint=not args.staged,
                      mask_target=args.mask_target, log_every=args.log_every)
    if args.source == "manifest":
        if not args.manifest:
            raise CliError("--source manifest requires --manifest")
        source = ManifestSource(PairManifest.load(args.manifest), patch)
    else:
        source = PatchPool(synthetic_patches(args.pool_size, patch, seed=args.seed))
    try:
        result = train(cfg, source)
    except TrainingDiverged as exc:
        raise CliError(str(exc)) from exc
    result.checkpoint.save(args.out_ckpt)
    result.write_log(args.log)
    first, last = result.log[0], result.log[-1]
    print(f"L_DNet {first.loss_dnet:.5f} -> {last.loss_dnet:.5f}, "
          f"L_RNet {first.loss_rnet:.5f} -> {last.loss_rnet:.5f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .cascade.checkpoint import Checkpoint
    from .cascade.train import infer

    ckpt = Checkpoint.load(args.ckpt)
    m_hat, t_hat = infer(ckpt, load_image(args.input))
    save_image(args.out, t_hat)
    save_image(args.mask_out, m_hat)
    print(f"wrote {args.out} and {args.mask_out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reflectkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    s = sub.add_parser("maxrf", help="local reflection mask from a reflection/transmission pair")
    s.add_argument("--reflection", required=True, help="image with reflection (I)")
    s.add_argument("--transmission", required=True, help="clean transmission image (T)")
    s.add_argument("--out", required=True, help="mask PNG; an .overlay.png is written beside it")
    s.add_argument("--margin", type=float, help="gradient margin (default 0.02)")
    s.add_argument("--pre-blur", type=float, help="Gaussian sigma before Sobel (default 1.0)")
    s.add_argument("--smooth", choices=("none", "majority"), help="cleanup pass (default majority)")
    s.add_argument("--exact-eq1", action="store_true",
                   help="plain strict comparison: margin 0, no blur, no smoothing")
    s.add_argument("--comparison-out", help="16-bit PNG of G_I - G_T (+ JSON range sidecar)")
    s.set_defaults(func=cmd_maxrf)

    s = sub.add_parser("diagnose", help="alignment diagnostics for every pair in a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--max-shift", type=int, default=3)
    s.add_argument("--delta", type=float, default=0.02, help="NCC improvement threshold")
    s.add_argument("--out", required=True, help="JSON report")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("compose", help="synthesize reflection pairs from a transmission image")
    s.add_argument("--transmission", required=True)
    s.add_argument("--object", help="local reflection object (random if omitted)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ambient", type=float, default=ReflectionSpec.ambient_gain)
    s.add_argument("--alpha", type=float, default=ReflectionSpec.local_alpha)
    s.add_argument("--blur", type=float, default=ReflectionSpec.local_blur)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_compose)

    ds = sub.add_parser("dataset", help="manifest build, validation, splitting, patches")
    dsub = ds.add_subparsers(dest="dataset_command", metavar="ACTION", required=True)

    s = dsub.add_parser("build", help="index clip_*/T.png + R_*.png directories")
    s.add_argument("--root", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dataset_build)

    s = dsub.add_parser("validate", help="check existence, sizes and optionally alignment")
    s.add_argument("--manifest", required=True)
    s.add_argument("--check-alignment", action="store_true")
    s.add_argument("--max-shift", type=int, default=3)
    s.add_argument("--delta", type=float, default=0.02)
    s.add_argument("--out", help="report path (default: validation.json beside the manifest)")
    s.set_defaults(func=cmd_dataset_validate)

    s = dsub.add_parser("split", help="seeded clip-level train/test split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--fraction", type=float, required=True, help="train fraction in (0, 1)")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_dataset_split)

    s = dsub.add_parser("patches", help="co-located random patch pairs")
    s.add_argument("--manifest", required=True)
    s.add_argument("--size", type=int, default=320)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_dataset_patches)

    s = sub.add_parser("evaluate", help="PSNR/SSIM of predictions against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out-prefix", required=True, help="writes <prefix>.csv and <prefix>.txt")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("train-toy", help="train the small detection/removal cascade")
    s.add_argument("--source", choices=("synthetic", "manifest"), required=True)
    s.add_argument("--manifest")
    s.add_argument("--iters", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--lr", type=float, default=0.0006)
    s.add_argument("--gamma1", type=float, default=0.00005)
    s.add_argument("--gamma2", type=float, default=0.02)
    s.add_argument("--patch", type=int, help="patch size (64 synthetic, 320 manifest)")
    s.add_argument("--batch", type=int, default=4)
    s.add_argument("--pool-size", type=int, default=64, help="synthetic patches in the pool")
    s.add_argument("--mask-target", choices=("maxrf", "maxrf-exact", "zero"), default="maxrf")
    s.add_argument("--no-detach-mask", action="store_true",
                   help="let the removal loss backpropagate into the detector")
    s.add_argument("--staged", action="store_true",
                   help="train the detector for the first half, then the remover")
    s.add_argument("--log-every", type=int, default=10)
    s.add_argument("--out-ckpt", required=True)
    s.add_argument("--log", required=True, help="CSV iter,lr,loss_dnet,loss_rnet")
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("infer", help="run a trained cascade on one image")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True, help="restored transmission PNG")
    s.add_argument("--mask-out", required=True, help="estimated mask PNG")
    s.set_defaults(func=cmd_infer)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ImageFormatError, OSError, ValueError, KeyError) as exc:
        _err(f"reflectkit {args.command}: {exc}")
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
