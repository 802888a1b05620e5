"""Runs every CLI subcommand over a fixed fixture tree and collects the outputs."""

import contextlib
import io
from pathlib import Path

import numpy as np

from fixtures import make_dataset, textured
from reflectkit.cli import main
from reflectkit.imgcore import gaussian_blur, save_image


def make_inputs(root: Path) -> Path:
    root = Path(root)
    data = make_dataset(root / "clips", clips=3, size=48, frames=2, shifted="clip_01")
    t = textured(11, 48)
    i = np.clip(t + 0.25 * textured(12, 48), 0, 1)
    save_image(root / "T.png", t)
    save_image(root / "I.png", i)
    save_image(root / "object.png", textured(13, 16))
    for sub, blur in (("gt", 0.0), ("pred", 0.8)):
        (root / sub).mkdir()
        for k in range(3):
            img = textured(20 + k, 32)
            save_image(root / sub / f"img{k}.png", gaussian_blur(img, blur) if blur else img)
    return data


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


def commands(inp: Path, out: Path):
    clips, man = inp / "clips", out / "manifest.json"
    ckpt = out / "toy.rflk"
    return [
        ("maxrf", ["maxrf", "--reflection", inp / "I.png", "--transmission", inp / "T.png",
                   "--out", out / "mask.png"]),
        ("maxrf-exact", ["maxrf", "--exact-eq1", "--reflection", inp / "I.png",
                         "--transmission", inp / "T.png", "--out", out / "mask_exact.png",
                         "--comparison-out", out / "cmp.png"]),
        ("compose", ["compose", "--transmission", inp / "T.png", "--count", 3, "--seed", 4,
                     "--out-dir", out / "composed"]),
        ("compose-object", ["compose", "--transmission", inp / "T.png", "--object",
                            inp / "object.png", "--seed", 4, "--out-dir", out / "composed_obj"]),
        ("dataset-build", ["dataset", "build", "--root", clips, "--out", man]),
        ("dataset-validate", ["dataset", "validate", "--manifest", man, "--check-alignment",
                              "--out", out / "validation.json"]),
        ("diagnose", ["diagnose", "--manifest", man, "--out", out / "diagnose.json"]),
        ("dataset-split", ["dataset", "split", "--manifest", man, "--fraction", 0.5,
                           "--seed", 3, "--out-dir", out / "split"]),
        ("dataset-patches", ["dataset", "patches", "--manifest", man, "--size", 24,
                             "--count", 4, "--seed", 9, "--out-dir", out / "patches"]),
        ("evaluate", ["evaluate", "--pred", inp / "pred", "--gt", inp / "gt",
                      "--out-prefix", out / "scores"]),
        ("train-toy", ["train-toy", "--source", "synthetic", "--iters", 3, "--patch", 16,
                       "--pool-size", 4, "--batch", 2, "--log-every", 1, "--out-ckpt", ckpt,
                       "--log", out / "train.csv"]),
        ("train-toy-manifest", ["train-toy", "--source", "manifest", "--manifest", man,
                                "--iters", 2, "--patch", 16, "--batch", 2, "--staged",
                                "--out-ckpt", out / "toy_m.rflk", "--log", out / "train_m.csv"]),
        ("infer", ["infer", "--ckpt", ckpt, "--input", inp / "I.png", "--out",
                   out / "restored.png", "--mask-out", out / "restored_mask.png"]),
    ]


def run_suite(inp: Path, out: Path):
    """Exit code and stdout per command, plus every output file's bytes."""
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for name, argv in commands(inp, out):
        code, stdout, _ = run(argv)
        results[name] = (code, stdout.replace(str(out), "<out>"))
    files = {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
    return results, files
