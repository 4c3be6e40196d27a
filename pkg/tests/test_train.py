import math

import numpy as np
import pytest

from rigjoints.model import JointLocalizer, load_checkpoint
from rigjoints.numcore import AdamW
from rigjoints.rigdata import Sample
from rigjoints.rigdata.synthetic import fixture_sample
from rigjoints.train import ConfigError, TrainConfig, TrainingError, fit, train_epoch, validate


@pytest.fixture(scope="module")
def small_samples():
    return [fixture_sample(s, n_points=160) for s in range(3)]


def small_config(tmp_path, **kw):
    base = dict(out_dir=str(tmp_path / "run"), epochs=2, k_neighbors=8, seed=3)
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_defaults_follow_recipe(self):
        c = TrainConfig()
        assert (c.initial_lr, c.patience, c.decay, c.batch_size) == (1e-3, 8, 0.75, 1)
        assert c.model_config().joint_count == 69

    def test_load_toml(self, tmp_path):
        (tmp_path / "c.toml").write_text('epochs = 3\ninitial_lr = 1\nuse_normals = false\n')
        c = TrainConfig.load(tmp_path / "c.toml")
        assert c.epochs == 3 and c.initial_lr == 1.0 and c.use_normals is False

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.toml").write_text("epoch = 3\n")
        with pytest.raises(ConfigError, match="unknown key"):
            TrainConfig.load(tmp_path / "c.toml")

    def test_wrong_type(self):
        with pytest.raises(ConfigError, match="expects int"):
            TrainConfig.from_mapping({"epochs": "3"})

    def test_tables_rejected(self, tmp_path):
        (tmp_path / "c.toml").write_text("[model]\nk = 3\n")
        with pytest.raises(ConfigError, match="tables"):
            TrainConfig.load(tmp_path / "c.toml")

    @pytest.mark.parametrize("bad", [{"batch_size": 2}, {"decay": 1.0}, {"scale_min": 2.0},
                                     {"scheduler_metric": "loss"}])
    def test_invalid_values(self, bad):
        with pytest.raises(ConfigError):
            TrainConfig.from_mapping(bad)

    def test_missing_dataset(self, tmp_path):
        with pytest.raises(ConfigError, match="manifest"):
            fit(TrainConfig(data_dir=str(tmp_path), out_dir=str(tmp_path / "o")))


class TestEpoch:
    def test_deterministic_given_seed(self, small_samples, tmp_path):
        cfg = small_config(tmp_path)
        outs = []
        for _ in range(2):
            model = JointLocalizer(cfg.model_config(), seed=0)
            opt = AdamW(model.params)
            res = train_epoch(model, small_samples, opt, np.random.default_rng(5), cfg)
            outs.append((res.mean_loss, model.params["head.weight"].data.copy()))
        assert outs[0][0] == outs[1][0]
        np.testing.assert_array_equal(outs[0][1], outs[1][1])
        assert res.steps == 3

    def test_loss_decreases(self, small_samples, tmp_path):
        cfg = small_config(tmp_path, augment=False)
        model = JointLocalizer(cfg.model_config(), seed=0)
        opt = AdamW(model.params, lr=1e-3)
        rng = np.random.default_rng(0)
        losses = [train_epoch(model, small_samples, opt, rng, cfg).mean_loss for _ in range(6)]
        assert losses[-1] < losses[0]

    @pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
    def test_non_finite_loss(self, small_samples, tmp_path):
        cfg = small_config(tmp_path, augment=False)
        model = JointLocalizer(cfg.model_config(), seed=0)
        s = small_samples[0]
        far = Sample(s.cloud, s.joints * 1e200, s.source_id, s.scale)  # squared error overflows
        with pytest.raises(TrainingError, match="non-finite"):
            train_epoch(model, [far], AdamW(model.params), np.random.default_rng(0), cfg)

    def test_validate_leaves_state(self, small_samples, tmp_path):
        model = JointLocalizer(small_config(tmp_path).model_config(), seed=0)
        before = model.stats["mlp"].mean.copy()
        rep = validate(model, small_samples[:1])
        np.testing.assert_array_equal(model.stats["mlp"].mean, before)
        assert math.isfinite(rep.mean) and model.mode == "train"


class TestFit:
    def test_writes_artifacts(self, small_samples, tmp_path):
        res = fit(small_config(tmp_path), train_samples=small_samples[:2], val_samples=small_samples[2:])
        assert res.best_path.is_file() and res.last_path.is_file()
        lines = res.log_path.read_text().splitlines()
        assert lines[0].startswith("# rigjoints")
        assert lines[1] == "epoch,train_loss,val_mpjpe,lr,seconds"
        assert len(lines) == 4
        header, arrays = load_checkpoint(res.last_path)
        assert header["epoch"] == 2
        assert "adam.m.head.weight" in arrays
        assert header["scheduler"]["epoch"] == 2

    def test_resume_matches_uninterrupted(self, small_samples, tmp_path):
        full = fit(small_config(tmp_path / "a", epochs=3), train_samples=small_samples[:2],
                   val_samples=small_samples[2:])
        part = small_config(tmp_path / "b", epochs=1)
        fit(part, train_samples=small_samples[:2], val_samples=small_samples[2:])
        part.epochs = 3
        resumed = fit(part, resume=tmp_path / "b" / "run" / "last.ckpt", train_samples=small_samples[:2],
                      val_samples=small_samples[2:])
        assert full.last_path.read_bytes() == resumed.last_path.read_bytes()
        assert [r["epoch"] for r in resumed.rows] == [1, 2, 3]

    def test_same_seed_same_checkpoint(self, small_samples, tmp_path):
        a = fit(small_config(tmp_path / "a"), train_samples=small_samples[:2], val_samples=small_samples[2:])
        b = fit(small_config(tmp_path / "b"), train_samples=small_samples[:2], val_samples=small_samples[2:])
        assert a.best_path.read_bytes() == b.best_path.read_bytes()

    def test_joint_count_mismatch(self, small_samples, tmp_path):
        with pytest.raises(ConfigError, match="joint_count"):
            fit(small_config(tmp_path, joint_count=10), train_samples=small_samples[:1], val_samples=small_samples[:1])
