import hashlib
import json

import cv2
import numpy as np
import pytest

from camoseg import NonFiniteLossError
from camoseg.cli import main

TINY_CONFIG = """\
model.channel_scale = 16
model.input_size = 64
model.easpp_dilations = 1,2
train.epochs = 1
train.batch_size = 2
train.val_fraction = 0.25
"""


def tree_digest(root, skip=("manifest.json",)):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in skip:
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli")
    data = ws / "data"
    assert main(["synth", "--out", str(data), "--n", "4", "--size", "64",
                 "--seed", "7"]) == 0
    cfg = ws / "tiny.cfg"
    cfg.write_text(TINY_CONFIG)
    run = ws / "run"
    assert main(["train", "--data", str(data), "--out", str(run),
                 "--config", str(cfg), "--seed", "3"]) == 0
    return ws


# ------------------------------------------------------------------- synth

def test_synth_layout_and_manifest(workspace):
    data = workspace / "data"
    for sub in ("images", "masks", "edges"):
        assert len(list((data / sub).glob("*.png"))) == 4
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert manifest["seed"] == 7
    assert manifest["config"]["synth.image_size"] == 64
    assert len(manifest["artifacts"]) == 3
    assert "duration_sec" in manifest


def test_synth_rerun_bitwise_identical(workspace, tmp_path):
    again = tmp_path / "again"
    assert main(["synth", "--out", str(again), "--n", "4", "--size", "64",
                 "--seed", "7"]) == 0
    assert tree_digest(again) == tree_digest(workspace / "data")


def test_synth_rejects_bad_size(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "x"), "--size", "100"]) == 2


def test_unknown_flag_exits_2(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "x"), "--frobnicate"]) == 2
    capsys.readouterr()


# ------------------------------------------------------------------- train

def test_train_artifacts_and_manifest(workspace):
    run = workspace / "run"
    assert (run / "checkpoint.ckpt").exists()
    assert (run / "train_log.csv").exists()
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["seed"] == 3  # flag overrides the file
    assert manifest["config"]["train.seed"] == 3
    assert manifest["config"]["model.channel_scale"] == 16
    assert manifest["config"]["train.epochs"] == 1


def test_train_ablation_resolves_in_manifest(workspace, tmp_path):
    out = tmp_path / "abl"
    assert main(["train", "--data", str(workspace / "data"), "--out", str(out),
                 "--config", str(workspace / "tiny.cfg"),
                 "--ablation", "no-edge"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["model.edge_influence"] == [0.0, 0.0, 0.0]
    assert manifest["config"]["model.enable_edge_guidance"] is False


def test_train_unknown_ablation_exits_2(workspace, tmp_path, capsys):
    code = main(["train", "--data", str(workspace / "data"),
                 "--out", str(tmp_path / "x"), "--ablation", "bogus"])
    assert code == 2
    assert "no-edge" in capsys.readouterr().err  # valid names listed


def test_train_missing_data_exits_3(tmp_path):
    code = main(["train", "--data", str(tmp_path / "nowhere"),
                 "--out", str(tmp_path / "o")])
    assert code == 3


def test_train_nonfinite_exits_4(workspace, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NonFiniteLossError("loss went non-finite at step 1")

    monkeypatch.setattr("camoseg.cli.train", boom)
    code = main(["train", "--data", str(workspace / "data"),
                 "--out", str(tmp_path / "x"),
                 "--config", str(workspace / "tiny.cfg")])
    assert code == 4


# ------------------------------------------------------------------- eval

def test_eval_self_comparison(workspace, tmp_path, capsys):
    masks = workspace / "data" / "masks"
    out = tmp_path / "report"
    assert main(["eval", "--pred", str(masks), "--gt", str(masks),
                 "--out", str(out)]) == 0
    payload = json.loads((out / "metrics.json").read_text())
    assert payload["evaluated"] == 4
    assert abs(payload["aggregate"]["s_alpha"] - 1.0) < 1e-6
    assert payload["aggregate"]["mae"] == 0.0
    assert payload["aggregate"]["e_phi"] == payload["aggregate"]["e_phi_adp"]
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == "id,s_alpha,e_phi_adp,e_phi_mean,e_phi_max,f_w,f_m,mae"
    assert "S=1.0000" in capsys.readouterr().out


def test_eval_variant_switch(workspace, tmp_path):
    masks = workspace / "data" / "masks"
    out = tmp_path / "report"
    assert main(["eval", "--pred", str(masks), "--gt", str(masks),
                 "--out", str(out), "--e-variant", "mean"]) == 0
    payload = json.loads((out / "metrics.json").read_text())
    assert payload["e_variant"] == "mean"
    assert payload["aggregate"]["e_phi"] == payload["aggregate"]["e_phi_mean"]


def test_eval_disjoint_names_exits_3(workspace, tmp_path, capsys):
    other = tmp_path / "preds"
    other.mkdir()
    cv2.imwrite(str(other / "zz.png"), np.zeros((8, 8), np.uint8))
    code = main(["eval", "--pred", str(other),
                 "--gt", str(workspace / "data" / "masks"),
                 "--out", str(tmp_path / "r")])
    assert code == 3
    assert "unmatched" in capsys.readouterr().err


# ------------------------------------------------------------------- infer

def test_infer_writes_pairs_at_native_size(workspace, tmp_path):
    out = tmp_path / "pred"
    code = main(["infer", "--checkpoint", str(workspace / "run" / "checkpoint.ckpt"),
                 "--data", str(workspace / "data" / "images"), "--out", str(out)])
    assert code == 0
    probs = sorted(out.glob("synth_*[0-9].png"))
    masks = sorted(out.glob("*_mask.png"))
    assert len(probs) == 4 and len(masks) == 4
    prob = cv2.imread(str(probs[0]), cv2.IMREAD_GRAYSCALE)
    mask = cv2.imread(str(masks[0]), cv2.IMREAD_GRAYSCALE)
    assert prob.shape == (64, 64)
    assert set(np.unique(mask)) <= {0, 255}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "infer"
    assert manifest["config"]["infer.size"] == 64


def test_infer_output_feeds_eval(workspace, tmp_path):
    out = tmp_path / "pred"
    assert main(["infer", "--checkpoint", str(workspace / "run" / "checkpoint.ckpt"),
                 "--data", str(workspace / "data" / "images"), "--out", str(out)]) == 0
    report = tmp_path / "report"
    assert main(["eval", "--pred", str(out), "--gt", str(workspace / "data" / "masks"),
                 "--out", str(report)]) == 0
    payload = json.loads((report / "metrics.json").read_text())
    assert payload["evaluated"] == 4


def test_infer_resizes_back_to_original(workspace, tmp_path):
    src = tmp_path / "imgs"
    src.mkdir()
    rng = np.random.default_rng(0)
    cv2.imwrite(str(src / "wide.png"), rng.integers(0, 256, (48, 96, 3), dtype=np.uint8))
    out = tmp_path / "pred"
    code = main(["infer", "--checkpoint", str(workspace / "run" / "checkpoint.ckpt"),
                 "--data", str(src), "--out", str(out), "--size", "64"])
    assert code == 0
    assert cv2.imread(str(out / "wide.png"), cv2.IMREAD_GRAYSCALE).shape == (48, 96)


def test_infer_rerun_bitwise_identical(workspace, tmp_path):
    args = ["infer", "--checkpoint", str(workspace / "run" / "checkpoint.ckpt"),
            "--data", str(workspace / "data" / "images")]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert tree_digest(a) == tree_digest(b)


def test_infer_flag_validation(workspace, tmp_path, capsys):
    ckpt = str(workspace / "run" / "checkpoint.ckpt")
    data = str(workspace / "data" / "images")
    assert main(["infer", "--checkpoint", ckpt, "--data", data,
                 "--out", str(tmp_path / "x"), "--size", "100"]) == 2
    assert main(["infer", "--checkpoint", ckpt, "--data", data,
                 "--out", str(tmp_path / "y"), "--threshold", "1.5"]) == 2
    capsys.readouterr()


def test_infer_config_mismatch_exits_5(workspace, tmp_path):
    override = tmp_path / "bad.cfg"
    override.write_text("model.channel_scale = 8\n")
    code = main(["infer", "--checkpoint", str(workspace / "run" / "checkpoint.ckpt"),
                 "--data", str(workspace / "data" / "images"),
                 "--out", str(tmp_path / "x"), "--config", str(override)])
    assert code == 5


def test_infer_missing_inputs(workspace, tmp_path):
    assert main(["infer", "--checkpoint", str(tmp_path / "no.ckpt"),
                 "--data", str(workspace / "data" / "images"),
                 "--out", str(tmp_path / "x")]) == 3
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["infer", "--checkpoint", str(workspace / "run" / "checkpoint.ckpt"),
                 "--data", str(empty), "--out", str(tmp_path / "y")]) == 3
