import json

import numpy as np
import pytest
import torch
from PIL import Image

from glaucoscreen import cli
from glaucoscreen.data import load_manifest
from glaucoscreen.engine import load_checkpoint, model_from_state
from glaucoscreen.imaging import load_image, resize_bilinear
from glaucoscreen.viz import draw_windows

TINY = {
    "train": {"batch_size": 4, "log_every": 1, "snapshot_every": 2, "checkpoint_every": 1},
    "prep": {"roi_side": 64, "tile_grid": [4, 4]},
    "model": {
        "backbone": {"stage_channels": [8, 16, 32, 64], "input_side": 64},
        "patch_side": 32,
        "scales": [
            {"kernel": 1, "patch_h": 32, "patch_w": 32, "proposals": 2},
            {"kernel": 1, "patch_h": 16, "patch_w": 16, "proposals": 2},
        ],
    },
}


def ok(argv):
    result = cli.run([str(a) for a in argv])
    assert result.exit_code == 0, argv
    assert all(p.exists() for p in result.artifacts)
    return result


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "tiny.json"
    config.write_text(json.dumps(TINY))
    ok(["synth", "--out", root / "syn", "--n", 20, "--side", 80, "--seed", 1])
    ok(["train", "--manifest", root / "syn" / "manifest.csv", "--out", root / "run", "--config", config,
        "--epochs", 2, "--seed", 2])
    return root


def test_synth_ten(tmp_path):
    result = ok(["synth", "--out", tmp_path / "d", "--n", 10, "--seed", 1, "--side", 64])
    assert len(list((tmp_path / "d").glob("*.png"))) == 10
    assert (tmp_path / "d" / "manifest.csv") in result.artifacts
    assert load_manifest(tmp_path / "d" / "manifest.csv").class_counts == (5, 5)


def test_synth_idempotent(tmp_path):
    for name in ("a", "b"):
        ok(["synth", "--out", tmp_path / name, "--n", 4, "--seed", 3, "--side", 48])
    for p in sorted((tmp_path / "a").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_train_writes_splits_logs_checkpoints(workspace):
    run = workspace / "run"
    for name in ("train.csv", "val.csv", "test.csv", "config.json", "final.ckpt", "train_log.jsonl"):
        assert (run / name).exists(), name
    sizes = [len(load_manifest(run / f"{n}.csv")) for n in ("train", "val", "test")]
    assert sum(sizes) == 20 and sizes[0] == 16
    assert (run / "checkpoints" / "epoch_0002.ckpt").exists()
    assert any((run / "snapshots").glob("iter_*.json"))
    cfg = json.loads((run / "config.json").read_text())
    assert cfg["train"]["max_epochs"] == 2 and cfg["train"]["seed"] == 2


def test_train_is_idempotent(workspace, tmp_path):
    config = workspace / "tiny.json"
    args = ["train", "--manifest", workspace / "syn" / "manifest.csv", "--config", config,
            "--max-iterations", 3, "--seed", 2]
    ok(args + ["--out", tmp_path / "a"])
    ok(args + ["--out", tmp_path / "b"])
    assert (tmp_path / "a" / "train_log.jsonl").read_bytes() == (tmp_path / "b" / "train_log.jsonl").read_bytes()
    sa, sb = load_checkpoint(tmp_path / "a" / "final.ckpt"), load_checkpoint(tmp_path / "b" / "final.ckpt")
    for k in sa["model"]:
        assert torch.equal(sa["model"][k], sb["model"][k])


def test_train_resume_flag(workspace, tmp_path):
    ckpt = workspace / "run" / "checkpoints" / "epoch_0001.ckpt"
    ok(["train", "--manifest", workspace / "run" / "train.csv", "--no-split", "--out", tmp_path,
        "--config", workspace / "tiny.json", "--epochs", 2, "--seed", 2, "--resume", ckpt])
    resumed = load_checkpoint(tmp_path / "final.ckpt")
    original = load_checkpoint(workspace / "run" / "final.ckpt")
    for k in original["model"]:
        assert torch.equal(resumed["model"][k], original["model"][k])


def test_eval_report(workspace, tmp_path):
    result = ok(["eval", "--manifest", workspace / "run" / "test.csv", "--checkpoint",
                 workspace / "run" / "final.ckpt", "--out", tmp_path])
    report = json.loads((tmp_path / "report.json").read_text())
    assert {"ap", "auc", "acc", "f1", "sen", "spe"} <= set(report)
    assert (tmp_path / "confusion.png") in result.artifacts
    assert Image.open(tmp_path / "confusion.png").format == "PNG"
    again = tmp_path / "again"
    ok(["eval", "--manifest", workspace / "run" / "test.csv", "--checkpoint",
        workspace / "run" / "final.ckpt", "--out", again])
    assert (again / "report.json").read_bytes() == (tmp_path / "report.json").read_bytes()
    assert (again / "confusion.png").read_bytes() == (tmp_path / "confusion.png").read_bytes()


def test_show_windows_draws_four_boxes(workspace, tmp_path):
    image_path = workspace / "syn" / "synth_00000.png"
    out = tmp_path / "o.png"
    ok(["show-windows", "--image", image_path, "--checkpoint", workspace / "run" / "final.ckpt", "--out", out])

    model = model_from_state(load_checkpoint(workspace / "run" / "final.ckpt")).eval()
    image = load_image(image_path)
    x = torch.from_numpy(resize_bilinear(image, 64, 64)).float().unsqueeze(0)
    with torch.no_grad():
        proposals = model.propose(model.global_encoder.backbone(x), 64)[0]
    assert len(proposals) == 4
    expected = np.asarray(draw_windows(image, proposals, (80 / 64, 80 / 64)))
    drawn = np.asarray(Image.open(out).convert("RGB"))
    np.testing.assert_array_equal(drawn, expected)
    assert not np.array_equal(drawn, np.asarray(draw_windows(image, [])))


def test_show_windows_several_images(workspace, tmp_path):
    images = [workspace / "syn" / f"synth_0000{i}.png" for i in range(2)]
    result = ok(["show-windows", "--image", images[0], "--image", images[1],
                 "--checkpoint", workspace / "run" / "final.ckpt", "--out", tmp_path])
    assert sorted(p.name for p in result.artifacts) == ["synth_00000_windows.png", "synth_00001_windows.png"]


def test_plot_log(workspace, tmp_path):
    ok(["plot-log", "--log", workspace / "run" / "train_log.jsonl", "--out", tmp_path / "loss.png"])
    assert Image.open(tmp_path / "loss.png").format == "PNG"


def test_prep(workspace, tmp_path):
    result = ok(["prep", "--manifest", workspace / "syn" / "manifest.csv", "--out", tmp_path,
                 "--config", workspace / "tiny.json"])
    assert len(result.artifacts) == 21
    out = load_image(tmp_path / "synth_00000_roi64_clahe.png")
    assert out.shape == (3, 64, 64)
    prepped = load_manifest(tmp_path / "prep_manifest.csv")
    assert len(prepped) == 20 and all(r.roi is None for r in prepped.records)


# -- exit codes and help --------------------------------------------------------------------


def test_unknown_command_is_usage_error(capsys):
    assert cli.run(["bogus"]).exit_code == 2


def test_unknown_flag_is_usage_error(tmp_path):
    assert cli.run(["synth", "--out", str(tmp_path), "--n", "2", "--frobnicate"]).exit_code == 2


def test_runtime_failure_exit_1(tmp_path, capsys):
    result = cli.run(["eval", "--manifest", str(tmp_path / "missing.csv"), "--checkpoint",
                      str(tmp_path / "missing.ckpt"), "--out", str(tmp_path)])
    assert result.exit_code == 1
    assert "error" in capsys.readouterr().err


def test_corrupt_checkpoint_exit_1(tmp_path, capsys):
    (tmp_path / "bad.ckpt").write_bytes(b"junk")
    (tmp_path / "img.png").write_bytes(b"")
    result = cli.run(["show-windows", "--image", str(tmp_path / "img.png"), "--checkpoint",
                      str(tmp_path / "bad.ckpt"), "--out", str(tmp_path / "o.png")])
    assert result.exit_code == 1
    assert "not a checkpoint" in capsys.readouterr().err


@pytest.mark.parametrize("command", sorted(cli.COMMANDS))
def test_help_documents_every_flag(command, capsys):
    assert cli.run([command, "--help"]).exit_code == 0
    text = capsys.readouterr().out
    sub = cli.build_parser()._subparsers._group_actions[0].choices[command]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text
        if action.option_strings and action.dest != "help":
            assert action.help, f"{command} {action.option_strings} has no help text"


def test_top_level_help(capsys):
    assert cli.run(["--help"]).exit_code == 0
    out = capsys.readouterr().out
    for command in cli.COMMANDS:
        assert command in out
