import numpy as np
import pytest

from rigjoints.geometry import PointCloud, knn_self
from rigjoints.model import (
    MAGIC,
    CheckpointError,
    JointLocalizer,
    ModelConfig,
    decode_checkpoint,
    edgeconv_fused,
    edgeconv_reference,
    encode_checkpoint,
    joint_loss,
    load_model,
    save_model,
)
from rigjoints.numcore import ContractError, RunningStats, Tensor, squared_error_sum
from rigjoints.rigdata import template_skeleton

from conftest import central_difference, relative_error, tape_grads, tiny_config


def random_cloud(n, seed=0, normals=True):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(n, 3))
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(p, nrm if normals else None)


class TestEdgeConv:
    def _setup(self, seed, n=30, f=5, fo=7, k=6):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(n, f)), requires_grad=True)
        nbrs = knn_self(x.data, k)
        w = Tensor(rng.normal(size=(2 * f, fo)), requires_grad=True)
        b = Tensor(rng.normal(size=fo), requires_grad=True)
        g = Tensor(rng.normal(size=fo), requires_grad=True)  # mixed signs exercise the argmax flip
        be = Tensor(rng.normal(size=fo), requires_grad=True)
        return x, nbrs, w, b, g, be

    @pytest.mark.parametrize("mode", ["train", "eval"])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_fused_matches_reference(self, seed, mode):
        x, nbrs, w, b, g, be = self._setup(seed)
        s1, s2 = RunningStats.fresh(7), RunningStats.fresh(7)
        if mode == "eval":
            s1.mean = s2.mean = np.linspace(-1, 1, 7)
            s1.var = s2.var = np.linspace(0.5, 2, 7)
        target = np.random.default_rng(seed + 9).normal(size=(30, 7))
        leaves = [x, w, b, g, be]
        ref = tape_grads(lambda: squared_error_sum(edgeconv_reference(x, nbrs, w, b, g, be, s1, mode), target), leaves)
        fus = tape_grads(lambda: squared_error_sum(edgeconv_fused(x, nbrs, w, b, g, be, s2, mode), target), leaves)
        out_r = edgeconv_reference(x, nbrs, w, b, g, be, RunningStats(s1.mean, s1.var), mode).data
        out_f = edgeconv_fused(x, nbrs, w, b, g, be, RunningStats(s1.mean, s1.var), mode).data
        np.testing.assert_allclose(out_f, out_r, rtol=1e-12, atol=1e-12)
        for a, r in zip(fus, ref):
            np.testing.assert_allclose(a, r, rtol=1e-10, atol=1e-11)
        np.testing.assert_allclose(s2.mean, s1.mean, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(s2.var, s1.var, rtol=1e-12)

    def test_duplicate_neighbors(self):
        x, _, w, b, g, be = self._setup(4, n=10, k=3)
        nbrs = np.zeros((10, 3), dtype=int)  # every point sees point 0 three times
        r = edgeconv_reference(x, nbrs, w, b, g, be, RunningStats.fresh(7)).data
        f = edgeconv_fused(x, nbrs, w, b, g, be, RunningStats.fresh(7)).data
        np.testing.assert_allclose(f, r, rtol=1e-12, atol=1e-12)


class TestGradients:
    @pytest.mark.parametrize("use_normals", [True, False])
    def test_finite_differences_every_parameter(self, use_normals):
        model = JointLocalizer(tiny_config(use_normals), seed=1)
        cloud = random_cloud(32, seed=2, normals=use_normals)
        gt = np.random.default_rng(3).normal(size=(3, 3)) * 0.3
        names = list(model.params)
        grads = tape_grads(lambda: joint_loss(model.forward(cloud).joints, gt), [model.params[n] for n in names])
        for name, g in zip(names, grads):
            num = central_difference(lambda: joint_loss(model.forward(cloud).joints, gt).item(),
                                     model.params[name].data)
            # biases feeding train-mode normalization have exactly zero gradient
            assert relative_error(g, num, floor=1e-6) < 1e-4, name


class TestNetwork:
    def test_parameter_count(self):
        assert JointLocalizer(ModelConfig()).parameter_count() == 391_493

    def test_parameter_count_without_normals(self):
        # first EdgeConv input shrinks from 12 to 6
        assert JointLocalizer(ModelConfig(use_normals=False)).parameter_count() == 391_493 - 6 * 64

    def test_init_is_seeded(self):
        a, b = JointLocalizer(tiny_config(), seed=5), JointLocalizer(tiny_config(), seed=5)
        for n in a.params:
            np.testing.assert_array_equal(a.params[n].data, b.params[n].data)
        w = a.params["edge0.weight"].data
        assert np.abs(w).max() <= 1 / np.sqrt(12)
        assert not a.params["edge0.bias"].data.any()

    def test_widths_and_shapes(self, tiny_model):
        out = tiny_model.forward(random_cloud(40))
        assert out.widths == [4, 4, 6, 8, 8]
        assert out.coefficients.shape == (40, 3)
        assert out.joints.shape == (3, 3)

    def test_convex_combination(self, tiny_model):
        cloud = random_cloud(50, seed=8)
        out = tiny_model.forward(cloud)
        c = out.coefficients.data
        assert (c >= 0).all()
        np.testing.assert_allclose(c.sum(axis=0), 1.0, atol=1e-12)
        np.testing.assert_allclose(c.T @ cloud.points, out.joints.data, atol=1e-14)

    def test_permutation_invariance(self, tiny_model):
        cloud = random_cloud(60, seed=9)
        perm = np.random.default_rng(0).permutation(60)
        a = tiny_model.eval().predict(cloud)
        b = tiny_model.predict(PointCloud(cloud.points[perm], cloud.normals[perm]))
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_too_few_points(self, tiny_model):
        with pytest.raises(ContractError, match="more than k"):
            tiny_model.forward(random_cloud(4))

    def test_missing_normals(self, tiny_model):
        with pytest.raises(ContractError, match="normals"):
            tiny_model.forward(random_cloud(20, normals=False))

    def test_predict_does_not_touch_stats(self, tiny_model):
        before = {k: v.mean.copy() for k, v in tiny_model.stats.items()}
        tiny_model.train().predict(random_cloud(20))
        for k, v in tiny_model.stats.items():
            np.testing.assert_array_equal(v.mean, before[k])
        assert tiny_model.mode == "train"

    def test_joint_loss_frozen(self):
        pred = Tensor(np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]))
        assert joint_loss(pred, np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 3.0]])).item() == 5.0

    def test_joint_loss_shape_mismatch(self):
        with pytest.raises(ContractError):
            joint_loss(Tensor(np.zeros((3, 3))), np.zeros((4, 3)))


class TestCheckpoint:
    def test_roundtrip_predictions_bitwise(self, tiny_model, tmp_path):
        cloud = random_cloud(30)
        tiny_model.forward(cloud)  # move the running statistics away from defaults
        save_model(tmp_path / "m.ckpt", tiny_model, template_skeleton(), {"note": "x"})
        ck = load_model(tmp_path / "m.ckpt")
        assert ck.header["note"] == "x"
        assert ck.header["joints"]["names"][0] == "pelvis"
        np.testing.assert_array_equal(ck.build_model().predict(cloud), tiny_model.predict(cloud))

    def test_layout(self):
        raw = encode_checkpoint({"a": 1}, {"w": np.arange(3.0)})
        assert raw[:8] == MAGIC
        assert int.from_bytes(raw[8:12], "little") == 1
        hlen = int.from_bytes(raw[12:20], "little")
        assert raw[20 + hlen :] == np.arange(3.0).astype("<f8").tobytes()

    def test_encoding_is_deterministic(self):
        arrays = {"b": np.ones((2, 2)), "a": np.zeros(3)}
        assert encode_checkpoint({"y": 1, "x": [1, 2]}, arrays) == encode_checkpoint({"x": [1, 2], "y": 1}, arrays)

    @pytest.mark.parametrize("cut", [4, 30, -3])
    def test_truncation_detected(self, cut):
        raw = encode_checkpoint({"a": 1}, {"w": np.arange(3.0)})
        with pytest.raises(CheckpointError):
            decode_checkpoint(raw[:cut])

    def test_bad_magic_and_trailing_bytes(self):
        raw = encode_checkpoint({}, {"w": np.arange(2.0)})
        with pytest.raises(CheckpointError, match="magic"):
            decode_checkpoint(b"X" + raw[1:])
        with pytest.raises(CheckpointError, match="trailing"):
            decode_checkpoint(raw + b"\0")

    def test_nan_header_rejected(self):
        with pytest.raises(ValueError):
            encode_checkpoint({"v": float("nan")}, {})

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="no such checkpoint"):
            load_model(tmp_path / "nope.ckpt")

    def test_shape_mismatch_on_load(self, tiny_model, tmp_path):
        save_model(tmp_path / "m.ckpt", tiny_model)
        other = JointLocalizer(tiny_config(joint_count=4))
        with pytest.raises(ContractError):
            other.load_state_arrays(load_model(tmp_path / "m.ckpt").arrays)
