import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest

from chainhdr import checkpoint as C
from chainhdr import cli
from chainhdr import data as D
from chainhdr import network as N
from chainhdr import rgbe

COMMANDS = ["prepare", "train", "infer", "merge", "tonemap", "evaluate", "pipeline", "synthetic"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds") / "data"
    assert run("synthetic", "--out", root, "--count", 20, "--height", 64, "--width", 72) == 0
    return root


@pytest.fixture(scope="module")
def identity_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ck") / "identity.ckpt"
    C.save_checkpoint(N.build_chain(0, 4), path)
    return path


def test_every_command_has_help(capsys):
    for cmd in COMMANDS:
        with pytest.raises(SystemExit) as exc:
            run(cmd, "--help")
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "--seed" in out and "--config" in out
    parser = cli.build_parser()
    for cmd, sub in parser._subparsers._group_actions[0].choices.items():
        text = sub.format_help()
        for action in sub._actions:
            for flag in action.option_strings:
                assert flag in text, (cmd, flag)


@pytest.mark.parametrize("cmd", COMMANDS)
def test_unknown_flag_is_usage_error(cmd, capsys):
    assert run(cmd, "--no-such-flag") == 1


def test_missing_command_is_usage_error():
    assert run() == 1


def test_prepare_split_and_idempotence(dataset, tmp_path):
    assert run("prepare", "--data", dataset, "--out", tmp_path / "a.json") == 0
    assert run("prepare", "--data", dataset, "--out", tmp_path / "b.json") == 0
    a = (tmp_path / "a.json").read_bytes()
    assert a == (tmp_path / "b.json").read_bytes()
    m = json.loads(a)
    assert (len(m["train"]), len(m["val"]), len(m["test"])) == (7, 3, 10)
    assert m["excluded"] == []
    assert sorted(m["train"] + m["val"] + m["test"]) == sorted(p.name for p in dataset.iterdir() if p.is_dir())


def test_prepare_excludes_incomplete_scene(dataset, tmp_path):
    root = tmp_path / "d"
    shutil.copytree(dataset, root)
    victim = sorted(p for p in root.iterdir() if p.is_dir())[4]
    (victim / "ev+2.png").unlink()
    assert run("prepare", "--data", root) == 0
    m = json.loads((root / "splits.json").read_text())
    assert m["excluded"] == [{"scene": victim.name, "reason": "missing ev+2.png"}]
    assert victim.name not in m["train"] + m["val"] + m["test"]


def test_prepare_missing_root_is_data_error(tmp_path):
    assert run("prepare", "--data", tmp_path / "nope") == 2


def test_train_zero_epochs_is_fresh_init(tmp_path):
    ck = tmp_path / "m.ckpt"
    assert run("train", "--synthetic", 3, "--epochs", 0, "--width", 4, "--seed", 5, "--checkpoint", ck) == 0
    fresh = tmp_path / "fresh.ckpt"
    model = C.load_checkpoint(ck)
    ref = N.build_chain(5, 4)
    for (ev, a), (_, b) in zip(model.stages(), ref.stages()):
        for k in b.tensors:
            np.testing.assert_array_equal(a.tensors[k], b.tensors[k].astype(np.float32), err_msg=f"{ev} {k}")
    C.save_checkpoint(ref, fresh)


def test_train_requires_data(tmp_path):
    assert run("train", "--checkpoint", tmp_path / "m.ckpt") == 1
    assert run("train", "--data", tmp_path, "--checkpoint", tmp_path / "m.ckpt") == 2


def test_train_bad_hyperparameter_is_usage_error(tmp_path):
    assert run("train", "--synthetic", 3, "--learning-rate", -1, "--checkpoint", tmp_path / "m.ckpt") == 1


TRAIN_ARGS = ["--synthetic", 3, "--epochs", 3, "--width", 2, "--batch-size", 4, "--patch-stride", 32]


def test_train_resume_matches_full_run(tmp_path):
    full, part = tmp_path / "full.ckpt", tmp_path / "part.ckpt"
    assert run("train", *TRAIN_ARGS, "--checkpoint", full) == 0
    assert run("train", *TRAIN_ARGS, "--checkpoint", part, "--stop-after-epoch", 1) == 0
    assert len((tmp_path / "part.ckpt.log.jsonl").read_text().splitlines()) == 1
    assert run("train", *TRAIN_ARGS, "--checkpoint", part, "--resume") == 0
    assert full.read_bytes() == part.read_bytes()
    assert (tmp_path / "full.ckpt.log.jsonl").read_bytes() == (tmp_path / "part.ckpt.log.jsonl").read_bytes()


def test_train_from_prepared_dataset_and_threshold(dataset, tmp_path):
    root = tmp_path / "d"
    shutil.copytree(dataset, root)
    assert run("prepare", "--data", root) == 0
    ck = tmp_path / "m.ckpt"
    args = ["train", "--data", root, "--epochs", 1, "--width", 2, "--batch-size", 8,
            "--patch-stride", 64, "--checkpoint", ck]
    assert run(*args, "--max-final-loss", 1e-9) == 3
    assert run(*args, "--max-final-loss", 100) == 0
    rec = json.loads((tmp_path / "m.ckpt.log.jsonl").read_text())
    assert rec["epoch"] == 1 and rec["val_loss"] is not None


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"count": 2, "height": 64, "width_px": 64, "seed": 3}))
    assert run("synthetic", "--config", cfg, "--out", tmp_path / "a", "--count", 1) == 0
    assert [p.name for p in (tmp_path / "a").iterdir()] == [D.synthetic_stack(3, 64, 64).scene_id]
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run("synthetic", "--config", cfg, "--out", tmp_path / "b") == 1
    assert not (tmp_path / "b").exists()


def test_pipeline_identity_checkpoint(dataset, identity_ckpt, tmp_path):
    scene = sorted(p for p in dataset.iterdir() if p.is_dir())[0]
    inp = scene / "ev0.png"
    out = tmp_path / "out"
    assert run("pipeline", "--input", inp, "--checkpoint", identity_ckpt, "--out", out, "--stride", 64) == 0
    img = D.read_png(inp)
    for ev in D.EV_OFFSETS:
        np.testing.assert_array_equal(D.read_png(out / "stack" / D.ev_filename(ev)), img)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["merge"]["mode"] == "single-image"
    assert manifest["model_sha256"] == C.file_digest(identity_ckpt)
    for f in manifest["files"]:
        assert (out / f).is_file()
    rad = rgbe.read_rgbe(out / "radiance.hdr")
    assert rad.shape == img.shape and np.all(np.isfinite(rad))
    assert D.read_png(out / "tonemapped.png").shape == img.shape


def test_pipeline_is_byte_deterministic(dataset, tmp_path):
    ck = tmp_path / "m.ckpt"
    model = N.build_chain(2, 4)
    rng = np.random.default_rng(0)
    for _, st in model.stages():
        st.tensors["r4.weight"] = rng.standard_normal(st.tensors["r4.weight"].shape).astype(np.float32) * 0.05
    C.save_checkpoint(model, ck)
    inp = sorted(p for p in dataset.iterdir() if p.is_dir())[1] / "ev0.png"
    outs = []
    for name in ("a", "b"):
        assert run("pipeline", "--input", inp, "--checkpoint", ck, "--out", tmp_path / name, "--stride", 16) == 0
        outs.append({p.relative_to(tmp_path / name): p.read_bytes()
                     for p in sorted((tmp_path / name).rglob("*")) if p.is_file()})
    assert outs[0] == outs[1]
    assert len(outs[0]) == 7 + 1 + 3


def test_pipeline_failures_leave_nothing(identity_ckpt, tmp_path):
    small = tmp_path / "small.png"
    D.write_png(small, np.zeros((32, 80, 3), np.uint8))
    assert run("pipeline", "--input", small, "--checkpoint", identity_ckpt, "--out", tmp_path / "o") == 2
    assert not (tmp_path / "o").exists()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    ok = tmp_path / "ok.png"
    D.write_png(ok, np.full((64, 64, 3), 100, np.uint8))
    assert run("pipeline", "--input", ok, "--checkpoint", bad, "--out", tmp_path / "o") == 2
    assert run("pipeline", "--input", tmp_path / "missing.png", "--checkpoint", identity_ckpt,
               "--out", tmp_path / "o") == 2
    assert not (tmp_path / "o").exists()
    assert [p.name for p in tmp_path.iterdir() if p.name.startswith(".")] == []


def test_pipeline_stage_failure_is_named(identity_ckpt, tmp_path, monkeypatch, capsys):
    from chainhdr import hdr

    def boom(*a, **k):
        raise hdr.SingularSystemError("forced")

    monkeypatch.setattr(hdr, "merge_stack", boom)
    ok = tmp_path / "ok.png"
    D.write_png(ok, np.full((64, 64, 3), 100, np.uint8))
    assert run("pipeline", "--input", ok, "--checkpoint", identity_ckpt, "--out", tmp_path / "o") == 3
    assert "stage merge" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_infer_merge_tonemap_chain(dataset, identity_ckpt, tmp_path):
    scene = sorted(p for p in dataset.iterdir() if p.is_dir())[2]
    assert run("infer", "--input", scene / "ev0.png", "--checkpoint", identity_ckpt,
               "--out", tmp_path / "st", "--stride", 32) == 0
    assert run("merge", "--stack", scene, "--out", tmp_path / "r.hdr") == 0
    rad = rgbe.read_rgbe(tmp_path / "r.hdr")
    assert rad.shape == (64, 72, 3) and rad.min() > 0
    assert run("tonemap", "--input", tmp_path / "r.hdr", "--out", tmp_path / "t.png", "--key", 0.3) == 0
    assert D.read_png(tmp_path / "t.png").shape == (64, 72, 3)
    assert run("merge", "--stack", tmp_path / "none", "--out", tmp_path / "x.hdr") == 2
    assert run("tonemap", "--input", tmp_path / "none.hdr", "--out", tmp_path / "x.png") == 2


def test_evaluate_identical_stacks(dataset, tmp_path):
    scene = sorted(p for p in dataset.iterdir() if p.is_dir())[0]
    assert run("evaluate", "--gt", scene, "--inferred", scene, "--out", tmp_path / "r.json") == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert set(rep["stack_metrics"]) == {"-3", "-2", "-1", "+1", "+2", "+3"}
    for cols in rep["stack_metrics"].values():
        assert set(cols) == {"psnr", "ssim", "ms_ssim"}
        assert cols["psnr"]["m"] == "inf" and cols["ssim"]["m"] == 1.0
        assert set(cols["psnr"]) == {"m", "sigma"}
    assert rep["tonemapped"]["tonemapped_psnr"]["m"] == "inf"


def test_evaluate_aggregates_match_rows(dataset, tmp_path):
    gt = tmp_path / "gt"
    inf = tmp_path / "inf"
    scenes = sorted(p for p in dataset.iterdir() if p.is_dir())[:3]
    rng = np.random.default_rng(0)
    for s in scenes:
        shutil.copytree(s, gt / s.name)
        (inf / s.name).mkdir(parents=True)
        for f in s.glob("ev*.png"):
            img = D.read_png(f).astype(int) + rng.integers(-6, 7, (64, 72, 3))
            D.write_png(inf / s.name / f.name, np.clip(img, 0, 255).astype(np.uint8))
    assert run("evaluate", "--gt", gt, "--inferred", inf, "--out", tmp_path / "r.json") == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    for ev in (-3, -1, 2):
        vals = [r["psnr"] for r in rep["rows"] if r["ev"] == ev]
        assert len(vals) == 3
        agg = rep["stack_metrics"][f"{ev:+d}"]["psnr"]
        assert math.isclose(agg["m"], np.mean(vals), rel_tol=1e-12)
        assert math.isclose(agg["sigma"], np.std(vals), rel_tol=1e-9)
        assert rep["stack_metrics"][f"{ev:+d}"]["ms_ssim"]["m"] is None


def test_evaluate_missing_counterpart(dataset, tmp_path):
    scene = sorted(p for p in dataset.iterdir() if p.is_dir())[0]
    inf = tmp_path / "inf"
    shutil.copytree(scene, inf)
    (inf / "ev-3.png").unlink()
    assert run("evaluate", "--gt", scene, "--inferred", inf) == 2
