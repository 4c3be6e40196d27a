import json
import shutil

import numpy as np
import pytest

from rigjoints.cli import main
from rigjoints.model import JointLocalizer, load_model, save_model
from rigjoints.rigdata import load_manifest, load_sample
from rigjoints.rigdata.synthetic import write_raw_dataset

from conftest import tiny_config


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_raw_dataset(root / "raw", counts=(2, 1, 1), seed=0)
    assert main(["-q", "preprocess", str(root / "raw"), str(root / "cond"), "--no-point-check"]) == 0
    (root / "cfg.toml").write_text("epochs = 3\nk_neighbors = 16\n")
    assert main(["-q", "train", str(root / "cfg.toml"), "--data-dir", str(root / "cond"),
                 "--out-dir", str(root / "run")]) == 0
    return root


class TestPreprocess:
    def test_outputs(self, workspace):
        cond = workspace / "cond"
        m = load_manifest(cond)
        assert m.all_ids() == ["model_0000", "model_0001", "model_0002", "model_0003"]
        prov = json.loads((cond / "provenance.json").read_text())
        assert prov["config"]["seed"] == 0 and set(prov["samples"]) == set(m.all_ids())
        s = load_sample(cond / "model_0000", with_mesh=True)
        assert s.cloud.normals is not None and s.mesh is not None
        assert (cond / "model_0000" / "sample.ply").read_bytes().startswith(b"ply\n")

    def test_zero_limits_pose_is_identity(self, workspace, tmp_path):
        (tmp_path / "zero.json").write_text(json.dumps({"default": [[0, 0]] * 3}))
        out = tmp_path / "posed"
        assert main(["-q", "preprocess", str(workspace / "raw"), str(out), "--no-point-check", "--pose-randomize",
                     "--limits-file", str(tmp_path / "zero.json")]) == 0
        a = load_sample(workspace / "cond" / "model_0001")
        b = load_sample(out / "model_0001")
        np.testing.assert_array_equal(a.cloud.points, b.cloud.points)
        np.testing.assert_array_equal(a.joints, b.joints)

    def test_point_range_failure_is_per_sample(self, workspace, tmp_path):
        assert main(["-q", "preprocess", str(workspace / "raw"), str(tmp_path / "o")]) == 1
        assert load_manifest(tmp_path / "o").all_ids() == []

    def test_corrupt_sample_skipped(self, workspace, tmp_path):
        raw = tmp_path / "raw"
        shutil.copytree(workspace / "raw", raw)
        (raw / "model_0002" / "weights.json").write_text("{")
        assert main(["-q", "preprocess", str(raw), str(tmp_path / "o"), "--no-point-check"]) == 1
        assert "model_0002" not in load_manifest(tmp_path / "o").all_ids()
        assert len(load_manifest(tmp_path / "o").all_ids()) == 3

    def test_not_a_dataset(self, tmp_path):
        assert main(["preprocess", str(tmp_path), str(tmp_path / "o")]) == 2


class TestTrain:
    def test_artifacts(self, workspace):
        run = workspace / "run"
        assert (run / "best.ckpt").is_file() and (run / "last.ckpt").is_file()
        lines = (run / "train_log.csv").read_text().splitlines()
        assert len(lines) == 5 and [ln.split(",")[0] for ln in lines[2:]] == ["1", "2", "3"]

    def test_no_normals_variant(self, workspace, tmp_path):
        assert main(["-q", "train", "--data-dir", str(workspace / "cond"), "--out-dir", str(tmp_path), "--epochs", "1",
                     "--no-normals", "--set", "k_neighbors=16"]) == 0
        ck = load_model(tmp_path / "last.ckpt")
        assert ck.config.use_normals is False and ck.config.in_width == 3

    def test_missing_dataset(self, tmp_path):
        assert main(["train", "--data-dir", str(tmp_path / "nope")]) == 2

    def test_unknown_override(self, workspace):
        assert main(["train", "--data-dir", str(workspace / "cond"), "--set", "bogus=1"]) == 2

    def test_bad_usage(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--epochs", "many"])
        assert exc.value.code == 2


class TestEvaluate:
    def test_checkpoint(self, workspace, tmp_path):
        assert main(["-q", "evaluate", "--checkpoint", str(workspace / "run" / "best.ckpt"), "--data-dir",
                     str(workspace / "cond"), "--out-dir", str(tmp_path), "--svg"]) == 0
        for name in ("mpjpe.csv", "mpjpe_table.csv", "pcj.csv", "pcj.svg"):
            assert (tmp_path / name).is_file()
        rows = (tmp_path / "pcj.csv").read_text().splitlines()[2:]
        body = [float(r.split(",")[1]) for r in rows]
        assert all(b2 >= b1 for b1, b2 in zip(body, body[1:]))

    def test_perfect_predictions(self, workspace, tmp_path):
        cond = workspace / "cond"
        gt = {sid: load_sample(cond / sid).joints.tolist() for sid in load_manifest(cond).splits["test"]}
        (tmp_path / "gt.json").write_text(json.dumps(gt))
        assert main(["-q", "evaluate", "--predictions", str(tmp_path / "gt.json"), "--data-dir", str(cond),
                     "--out-dir", str(tmp_path / "e")]) == 0
        table = (tmp_path / "e" / "mpjpe_table.csv").read_text().splitlines()
        assert table[2] == "external," + ",".join(["0"] * 11)
        pcj = (tmp_path / "e" / "pcj.csv").read_text().splitlines()[2:]
        assert all(line.endswith(",1,1") for line in pcj)

    def test_joint_count_mismatch(self, workspace, tmp_path):
        save_model(tmp_path / "tiny.ckpt", JointLocalizer(tiny_config()))
        assert main(["-q", "evaluate", "--checkpoint", str(tmp_path / "tiny.ckpt"), "--data-dir",
                     str(workspace / "cond"), "--out-dir", str(tmp_path / "e")]) == 2

    def test_needs_exactly_one_source(self, workspace, tmp_path):
        assert main(["-q", "evaluate", "--data-dir", str(workspace / "cond"), "--out-dir", str(tmp_path)]) == 2


class TestPredict:
    def test_sample_and_raw_mesh_agree(self, workspace, tmp_path, capsys):
        ckpt = str(workspace / "run" / "best.ckpt")
        assert main(["-q", "predict", "--checkpoint", ckpt, "--input", str(workspace / "cond" / "model_0003"),
                     "--out-dir", str(tmp_path / "a")]) == 0
        assert "timing:" in capsys.readouterr().out
        assert main(["-q", "predict", "--checkpoint", ckpt, "--input", str(workspace / "raw" / "model_0003" / "mesh.ply"),
                     "--out-dir", str(tmp_path / "b")]) == 0
        a = json.loads((tmp_path / "a" / "joints.json").read_text())
        b = json.loads((tmp_path / "b" / "joints.json").read_text())
        assert np.abs(np.array(a["joints"]) - np.array(b["joints"])).max() < 1e-9
        assert len(a["names"]) == 69
        ply = (tmp_path / "a" / "skeleton.ply").read_bytes()
        assert b"element vertex 69" in ply and b"element edge 68" in ply

    def test_output_is_denormalized(self, workspace, tmp_path):
        ckpt = str(workspace / "run" / "best.ckpt")
        main(["-q", "predict", "--checkpoint", ckpt, "--input", str(workspace / "cond" / "model_0000"),
              "--out-dir", str(tmp_path)])
        rec = json.loads((tmp_path / "joints.json").read_text())
        s = load_sample(workspace / "cond" / "model_0000")
        np.testing.assert_allclose(rec["joints"], s.scale.invert(np.array(rec["joints_normalized"])), atol=1e-12)

    def test_missing_input(self, workspace, tmp_path):
        assert main(["-q", "predict", "--checkpoint", str(workspace / "run" / "best.ckpt"), "--input",
                     str(tmp_path / "nope.ply"), "--out-dir", str(tmp_path)]) == 2

    def test_missing_checkpoint(self, tmp_path):
        assert main(["-q", "predict", "--checkpoint", str(tmp_path / "x.ckpt"), "--input", str(tmp_path),
                     "--out-dir", str(tmp_path)]) == 2
