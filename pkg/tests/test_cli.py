"""Command-line surface: pipeline round trip, config merging, exit codes."""

import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from rastergen.cli import DEFAULTS, build_parser, load_config, main
from rastergen.formats import load_labels, load_tokens, read_image
from rastergen.transformer import ModelConfig, ARModel


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Run the whole pipeline once at toy scale; commands share this state."""
    root = tmp_path_factory.mktemp("cli")
    config = {
        "data": {"n_images": 24, "image_size": 32, "n_classes": 10, "seed": 3},
        "train_tokenizer": {"steps": 40, "batch_size": 8, "base_lr": 0.064, "seed": 0},
        "train_ar": {"steps": 30, "batch_size": 8, "seed": 0},
        "encode": {"crops_per_image": 2, "seed": 1},
        "sampling": {"top_k": 1, "seed": 7},
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(config))
    state = {"root": root, "config": str(cfg_path)}
    assert main(["train-tokenizer", state["config"], "--out", str(root / "tok.rgck")]) == 0
    assert main(["encode", state["config"], "--tokenizer", str(root / "tok.rgck"),
                 "--out", str(root / "codes.artk")]) == 0
    assert main(["train-ar", state["config"], "--tokens", str(root / "codes.artk"),
                 "--out", str(root / "ar.rgck")]) == 0
    return state


def test_gen_data_writes_pixmaps_and_labels(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": {"n_images": 6, "image_size": 16, "n_classes": 3}}))
    out = tmp_path / "imgs"
    assert main(["gen-data", str(cfg), "--out", str(out)]) == 0
    files = sorted(out.glob("img_*.pgm"))
    assert len(files) == 6
    img = read_image(files[0])
    assert img.shape == (1, 16, 16)
    doc = json.loads((out / "labels.json").read_text())
    assert len(doc["labels"]) == 6
    assert doc["num_classes"] == 3


def test_pipeline_artifacts_exist(work):
    root = work["root"]
    assert (root / "tok.rgck").exists() and (root / "tok.rgck.json").exists()
    assert (root / "ar.rgck").exists() and (root / "ar.rgck.json").exists()
    tokens, vocab = load_tokens(root / "codes.artk")
    labels, n_classes = load_labels(root / "codes.artk")
    assert tokens.shape == (24, 2, 8, 8)
    assert vocab == 64
    assert labels.shape == (24,)
    assert n_classes == 10


def test_generate_is_byte_identical_under_argmax(work):
    root = work["root"]
    outs = []
    for name in ("gen_a", "gen_b"):
        rc = main(["generate", work["config"], "--model", str(root / "ar.rgck"),
                   "--tokenizer", str(root / "tok.rgck"), "--out", str(root / name),
                   "--class-id", "3", "--count", "2", "--top-k", "1", "--seed", "7"])
        assert rc == 0
        outs.append(sorted((root / name).iterdir()))
    assert [p.name for p in outs[0]] == [p.name for p in outs[1]]
    for a, b in zip(*outs):
        assert a.read_bytes() == b.read_bytes()
    img = read_image(outs[0][0])
    assert img.shape == (1, 32, 32)


def test_eval_writes_per_image_csv(work):
    root = work["root"]
    out = root / "eval.csv"
    rc = main(["eval", work["config"], "--tokenizer", str(root / "tok.rgck"),
               "--out", str(out), "--count", "5"])
    assert rc == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    assert set(rows[0]) == {"index", "psnr", "ssim"}


def test_bench_writes_csv(work):
    root = work["root"]
    out = root / "bench.csv"
    rc = main(["bench", "--out", str(out), "--models", "nano", "--batch", "2", "--repeats", "1"])
    assert rc == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["mode"] for r in rows] == ["naive", "cached"]


def test_missing_config_file_exits_2(tmp_path):
    assert main(["gen-data", str(tmp_path / "nope.json"), "--out", str(tmp_path / "d")]) == 2


def test_malformed_json_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["gen-data", str(bad), "--out", str(tmp_path / "d")]) == 2


def test_unknown_section_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"datum": {}}))
    assert main(["gen-data", str(bad), "--out", str(tmp_path / "d")]) == 2


def test_unknown_option_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"data": {"n_image": 4}}))
    assert main(["gen-data", str(bad), "--out", str(tmp_path / "d")]) == 2


def test_unknown_model_preset_exits_2(work, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"name": "giga"}, "train_ar": {"steps": 1}}))
    rc = main(["train-ar", str(bad), "--tokens", str(work["root"] / "codes.artk"),
               "--out", str(tmp_path / "m.rgck")])
    assert rc == 2


def test_corrupt_token_file_exits_2(tmp_path):
    junk = tmp_path / "junk.artk"
    junk.write_bytes(b"not a token file")
    rc = main(["train-ar", "--tokens", str(junk), "--out", str(tmp_path / "m.rgck")])
    assert rc == 2


def test_vocab_mismatch_exits_2(work, tmp_path):
    small = ARModel.create(ModelConfig(layers=1, hidden=32, heads=2, vocab_size=32,
                                       grid_h=4, grid_w=4), seed=0)
    small.save(tmp_path / "small.rgck")
    rc = main(["generate", "--model", str(tmp_path / "small.rgck"),
               "--tokenizer", str(work["root"] / "tok.rgck"),
               "--out", str(tmp_path / "g"), "--class-id", "0"])
    assert rc == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_3(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "data": {"n_images": 8, "image_size": 16, "n_classes": 2},
        "tokenizer": {"codebook_size": 8, "channels": [4, 8], "disc_channels": [4, 8],
                      "downsample": 2, "code_dim": 2},
        "train_tokenizer": {"steps": 25, "batch_size": 4, "base_lr": 1e9, "grad_clip": None},
    }))
    assert main(["train-tokenizer", str(cfg), "--out", str(tmp_path / "t.rgck")]) == 3


def test_missing_required_flag_raises_system_exit():
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args(["generate"])
    assert exc.value.code == 2


def test_load_config_defaults_are_isolated():
    cfg = load_config(None)
    cfg["bench"]["batch"] = 999
    assert DEFAULTS["bench"]["batch"] == 8


def test_load_config_merges_sections(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"bench": {"batch": 2}}))
    cfg = load_config(str(path))
    assert cfg["bench"]["batch"] == 2
    assert cfg["bench"]["repeats"] == 5


def test_load_config_replaces_model_section(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"model": {"layers": 1, "hidden": 32, "heads": 2,
                                          "vocab_size": 16}}))
    cfg = load_config(str(path))
    assert "name" not in cfg["model"]
    assert cfg["model"]["layers"] == 1


def test_module_invocation_smoke():
    proc = subprocess.run([sys.executable, "-m", "rastergen.cli", "bench", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "--repeats" in proc.stdout


def test_generate_rejects_bad_count_and_class(work, tmp_path):
    base = ["generate", "--model", str(work["root"] / "ar.rgck"),
            "--tokenizer", str(work["root"] / "tok.rgck"), "--out", str(tmp_path / "g")]
    assert main(base + ["--class-id", "0", "--count", "0"]) == 2
    assert main(base + ["--class-id", "99"]) == 2
