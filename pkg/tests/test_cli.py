import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from clisuite import commands, make_inputs, run, run_suite
from fixtures import textured
from reflectkit.cli import build_parser
from reflectkit.imgcore import load_image, save_image

SUBCOMMANDS = [["maxrf"], ["diagnose"], ["compose"], ["dataset", "build"],
               ["dataset", "validate"], ["dataset", "split"], ["dataset", "patches"],
               ["evaluate"], ["train-toy"], ["infer"]]


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_inputs")
    make_inputs(root)
    return root


@pytest.fixture(scope="module")
def suite(inputs, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_run")
    return out, *run_suite(inputs, out)


@pytest.mark.parametrize("cmd", SUBCOMMANDS, ids=" ".join)
def test_help_exits_zero(cmd):
    code, out, _ = run(cmd + ["--help"])
    assert code == 0 and "usage" in out


def test_usage_errors_exit_two():
    assert run([])[0] == 2
    assert run(["maxrf", "--reflection", "x.png"])[0] == 2
    assert run(["nonsense"])[0] == 2
    assert run(["train-toy", "--source", "web", "--iters", "1", "--out-ckpt", "a",
                "--log", "b"])[0] == 2


def test_missing_input_exits_one(tmp_path):
    code, _, err = run(["maxrf", "--reflection", tmp_path / "no.png", "--transmission",
                        tmp_path / "no.png", "--out", tmp_path / "m.png"])
    assert code == 1 and "reflectkit maxrf" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "reflectkit", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("reflectkit")


def test_expected_exit_codes(suite):
    _, results, _ = suite
    flagged = {"dataset-validate", "diagnose"}
    for name, (code, _) in results.items():
        assert code == (1 if name in flagged else 0), name


def test_every_command_writes_its_outputs(suite):
    _, _, files = suite
    for name in ["mask.png", "mask.overlay.png", "mask_exact.png", "cmp.png", "cmp.json",
                 "manifest.json", "validation.json", "diagnose.json", "split/train.json",
                 "split/test.json", "patches/patches.json", "patches/00003_T.png",
                 "scores.csv", "scores.txt", "toy.rflk", "train.csv", "restored.png",
                 "restored_mask.png", "composed/0002/spec.json", "composed_obj/0000/I.png"]:
        assert name in files, name


def test_diagnose_names_the_shifted_pair(suite):
    out, results, _ = suite
    report = json.loads((out / "diagnose.json").read_text())
    bad = [r for r in report["records"] if not r["aligned"]]
    assert len(bad) == 1 and bad[0]["clip_id"] == "clip_01"
    assert tuple(bad[0]["best_shift"]) == (2, 0)
    assert "clip_01/R_002.png" in results["diagnose"][1]


def test_maxrf_identical_pair_exact_is_black(tmp_path):
    img = textured(3, 32)
    save_image(tmp_path / "a.png", img)
    code, _, _ = run(["maxrf", "--exact-eq1", "--reflection", tmp_path / "a.png",
                      "--transmission", tmp_path / "a.png", "--out", tmp_path / "m.png"])
    assert code == 0
    assert load_image(tmp_path / "m.png").data.max() == 0


def test_maxrf_overrides_reach_options(inputs, tmp_path):
    counts = []
    for margin in ("0.001", "0.5"):
        code, out, _ = run(["maxrf", "--reflection", inputs / "I.png", "--transmission",
                            inputs / "T.png", "--out", tmp_path / f"m{margin}.png",
                            "--margin", margin, "--smooth", "none", "--pre-blur", "0"])
        assert code == 0
        counts.append(int(out.split(": ")[1].split()[0]))
    assert counts[0] > counts[1]


def test_evaluate_same_directory_is_perfect(inputs, tmp_path):
    code, _, _ = run(["evaluate", "--pred", inputs / "gt", "--gt", inputs / "gt",
                      "--out-prefix", tmp_path / "s"])
    assert code == 0
    rows = (tmp_path / "s.csv").read_text().splitlines()[1:]
    assert len(rows) == 3
    assert all(r.split(",")[1] == "inf" and float(r.split(",")[2]) == 1.0 for r in rows)


def test_evaluate_unmatched_exits_one(inputs, tmp_path):
    pred = tmp_path / "pred"
    pred.mkdir()
    save_image(pred / "img0.png", load_image(inputs / "gt" / "img0.png"))
    save_image(pred / "stray.png", textured(1, 32))
    code, _, err = run(["evaluate", "--pred", pred, "--gt", inputs / "gt",
                        "--out-prefix", tmp_path / "s"])
    assert code == 1 and "stray.png" in err


def test_compose_layout(suite):
    out, _, _ = suite
    spec = json.loads((out / "composed" / "0000" / "spec.json").read_text())
    assert {"ambient_gain", "local_alpha"} <= set(spec)
    i = load_image(out / "composed" / "0000" / "I.png").data
    t = load_image(out / "composed" / "0000" / "T.png").data
    assert i.shape == t.shape and not np.array_equal(i, t)


def test_train_log_format(suite):
    out, _, _ = suite
    lines = (out / "train.csv").read_text().splitlines()
    assert lines[0] == "iter,lr,loss_dnet,loss_rnet"
    assert [int(l.split(",")[0]) for l in lines[1:]] == [0, 1, 2]


def test_infer_rejects_corrupt_checkpoint(inputs, tmp_path):
    bad = tmp_path / "bad.rflk"
    bad.write_bytes(b"nope")
    code, _, err = run(["infer", "--ckpt", bad, "--input", inputs / "I.png",
                        "--out", tmp_path / "o.png", "--mask-out", tmp_path / "m.png"])
    assert code == 1 and "magic" in err


def test_commands_cover_every_subcommand(tmp_path):
    used = {tuple(a[:2]) if a[0] == "dataset" else (a[0],)
            for _, a in commands(tmp_path, tmp_path)}
    assert used == {tuple(c) for c in SUBCOMMANDS}
    assert build_parser() is not None


def test_rerun_is_byte_identical(inputs, suite):
    # same command lines, so the same output directory; manifests store
    # paths relative to where they are written
    out, results, files = suite
    shutil.rmtree(out)
    results2, files2 = run_suite(inputs, out)
    assert results2 == results
    assert files2.keys() == files.keys()
    assert [k for k in files if files[k] != files2[k]] == []
