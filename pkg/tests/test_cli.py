import json

import numpy as np
import pytest

from learned_resizer import checkpoint as ckpt_io
from learned_resizer import data as D
from learned_resizer import tensor as T
from learned_resizer.cli import main
from learned_resizer.resizer import ResizerConfig, ResizerModel

SMALL = {"n_per_class": 32, "val_per_class": 16, "image_size": 16, "out_size": [8, 8], "batch_size": 16,
         "epochs": 1, "n": 4}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_count_params(capsys):
    assert run(capsys, "count-params", "--r", 1, "--n", 16) == (0, "11872 (11.87k)\n", "")
    assert run(capsys, "count-params", "--r", 4, "--n", 32)[1] == "93376 (93.37k)\n"


def test_flops(capsys):
    code, out, _ = run(capsys, "flops", "--r", 1, "--n", 16, "--in-size", 448, "--out-size", 224)
    assert code == 0 and out.strip().endswith("(1.98 GFLOPs)")


def test_in_smaller_than_out_is_usage_error(capsys):
    code, _, err = run(capsys, "flops", "--in-size", 100, "--out-size", 224)
    assert code == 2 and "smaller than --out-size" in err


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, small_config):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--config", str(small_config), "--seed", "2", "--out", str(out)]) == 0
    return out


def test_train_writes_outputs(trained_run):
    assert (trained_run / "checkpoint.rsz").exists()
    recs = [json.loads(line) for line in (trained_run / "train_log.jsonl").read_text().splitlines()]
    assert recs[0]["event"] == "config" and recs[0]["cli_config"]["seed"] == 2
    assert recs[-1]["event"] == "done"
    assert (trained_run / "train_log.txt").read_text().strip()
    meta = ckpt_io.load(trained_run / "checkpoint.rsz").metadata
    assert meta["resizer"] == {"r": 1, "n": 4, "out_h": 8, "out_w": 8} and meta["seed"] == 2


def test_run_reproducible_from_its_log(trained_run, tmp_path):
    assert main(["train", "--config", str(trained_run / "train_log.jsonl"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "train_log.jsonl").read_bytes() == (trained_run / "train_log.jsonl").read_bytes()
    assert (tmp_path / "checkpoint.rsz").read_bytes() == (trained_run / "checkpoint.rsz").read_bytes()


def test_eval_matches_training_log(trained_run, small_config, capsys):
    code, out, _ = run(capsys, "eval", "--config", small_config, "--seed", 2, "--ckpt", trained_run / "checkpoint.rsz")
    recs = [json.loads(line) for line in (trained_run / "train_log.jsonl").read_text().splitlines()]
    last_eval = [r for r in recs if r["event"] == "eval"][-1]
    assert code == 0 and json.loads(out) == last_eval["metrics"]


def test_finetune_cli(trained_run, small_config, tmp_path, capsys):
    code, out, _ = run(capsys, "finetune", "--config", small_config, "--epochs", 1, "--ckpt",
                       trained_run / "checkpoint.rsz", "--out", tmp_path)
    assert code == 0
    lr = [json.loads(l) for l in (tmp_path / "train_log.jsonl").read_text().splitlines()][1]["lr"]
    assert lr == 0.005
    code, _, err = run(capsys, "finetune", "--config", small_config, "--ckpt", trained_run / "checkpoint.rsz",
                       "--r", 3, "--out", tmp_path)
    assert code == 2 and "architecture mismatch" in err
    code, _, err = run(capsys, "finetune", "--config", small_config, "--mode", "baseline_frozen", "--ckpt",
                       trained_run / "checkpoint.rsz", "--out", tmp_path)
    assert code == 2 and "contradictory" in err


def test_zero_weight_resize_is_bilinear(tmp_path, capsys):
    rng = np.random.default_rng(0)
    src = tmp_path / "in"
    for i in range(3):
        D.write_png(src / f"img{i}.png", rng.random((3, 20, 28)))
    resizer = ResizerModel(ResizerConfig(1, 4, 9, 13), seed=0)
    resizer.zero_weights()
    ckpt_io.save(tmp_path / "zero.rsz", ckpt_io.from_models(resizer))
    code, out, _ = run(capsys, "resize", "--ckpt", tmp_path / "zero.rsz", "--data", src, "--out", tmp_path / "out")
    assert code == 0 and "wrote 3 image(s)" in out
    for i in range(3):
        img = D.read_png(src / f"img{i}.png")
        with T.no_grad():
            ref = T.bilinear_resize(T.Tensor(img[None]), 9, 13).data[0]
        D.write_png(tmp_path / "ref.png", ref)
        assert np.array_equal(D.read_png(tmp_path / "out" / f"img{i}.png"), D.read_png(tmp_path / "ref.png"))


def test_grad_check(capsys):
    code, out, _ = run(capsys, "grad-check")
    assert code == 0
    assert "resizer" in out and "emd_loss" in out and "FAIL" not in out


def test_gen_data(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-data", "--data", "synthetic_iqa", "--config", _write(tmp_path, {
        "iqa_train": 4, "iqa_val": 2, "image_size": 16}), "--out", tmp_path / "d")
    assert code == 0 and "wrote 4 train / 2 val" in out
    assert D.load_png_dir(tmp_path / "d" / "train").is_histogram


def _write(tmp_path, cfg):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    return p


@pytest.mark.parametrize("argv, message", [
    (["train"], "--out DIR is required"),
    (["eval"], "eval needs --ckpt"),
    (["resize", "--ckpt", "x"], "resize needs"),
    (["eval", "--ckpt", "/nonexistent.rsz"], "No such file"),
    (["gen-data", "--data", "cifar10:/x", "--out", "o"], "gen-data supports"),
])
def test_actionable_errors(capsys, argv, message):
    code, _, err = run(capsys, *argv)
    assert code == 2 and message in err and err.count("\n") == 1


def test_unknown_config_key(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--config", _write(tmp_path, {"lr": 1}), "--out", tmp_path / "o")
    assert code == 2 and "unknown config keys: lr" in err


def test_bad_checkpoint_file(tmp_path, capsys):
    bad = tmp_path / "bad.rsz"
    bad.write_bytes(b"garbage!" + b"\0" * 8)
    code, _, err = run(capsys, "eval", "--ckpt", bad)
    assert code == 2 and "bad magic" in err


def test_nan_abort_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--config", _write(tmp_path, {**SMALL, "base_lr": float("nan")}),
                       "--out", tmp_path / "o")
    assert code == 3 and "diverged" in err
