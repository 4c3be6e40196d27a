"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (visible even under output
capture) before asserting, so ``pytest -v`` doubles as the acceptance report.
"""

import json
import math
import time

import numpy as np
import pytest

from rigjoints.cli import main
from rigjoints.eval import mpjpe, pcj_curve, pcj_threshold, pcj_thresholds
from rigjoints.geometry import KnnIndex, PointCloud, build_bvh, cylinder_mesh, icosphere, is_inside, raycast_batch
from rigjoints.model import JointLocalizer, ModelConfig, joint_loss, network
from rigjoints.numcore import PlateauScheduler
from rigjoints.rigdata import (
    RotationLimits,
    Skeleton,
    baseline_bone_hits,
    correct_leaf_bones,
    make_sample,
    randomize_pose,
)
from rigjoints.rigdata.synthetic import fixture_sample, rigged_fixture, write_raw_dataset
from rigjoints.train import TrainConfig, fit

from conftest import relative_error, tape_grads, tiny_config
from test_geometry import brute_knn, scan_hits


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail

    return emit


def piece_signature(model, cloud, monkeypatch):
    """Discrete state fixing the smooth piece the loss is on: kNN graphs, pooling winners, activation signs."""
    record = []

    def knn(points, k, exclude_self=False):
        out = network.knn_self.__wrapped__(points, k, exclude_self=exclude_self)
        record.append(out.tobytes())
        return out

    def pool(edge_feats):
        record.append(edge_feats.data.argmax(axis=1).tobytes())
        return network.neighbor_max_pool.__wrapped__(edge_feats)

    def leaky(x, slope=0.2):
        record.append((x.data >= 0).tobytes())
        return network.leaky_relu.__wrapped__(x, slope)

    for name, fn in (("knn_self", knn), ("neighbor_max_pool", pool), ("leaky_relu", leaky)):
        fn.__wrapped__ = getattr(network, name)
        monkeypatch.setattr(network, name, fn)
    fused, model.fused = model.fused, False
    try:
        model.forward(cloud)
    finally:
        model.fused = fused
        monkeypatch.undo()
    return record


def test_criterion_01_gradients(report, monkeypatch):
    # the loss is piecewise smooth (max-pool, leaky ReLU, dynamic kNN); a stencil whose two
    # ends sit on different pieces measures a kink rather than the derivative, so it is skipped
    t0 = time.perf_counter()
    h = 1e-5
    worst, worst_name, checked, straddling = 0.0, "", 0, 0
    for use_normals in (True, False):
        model = JointLocalizer(tiny_config(use_normals), seed=11)
        rng = np.random.default_rng(12)
        pts = rng.normal(size=(32, 3))
        nrm = rng.normal(size=(32, 3))
        cloud = PointCloud(pts, nrm / np.linalg.norm(nrm, axis=1, keepdims=True) if use_normals else None)
        gt = rng.normal(size=(3, 3)) * 0.3
        loss = lambda: joint_loss(model.forward(cloud).joints, gt).item()
        names = list(model.params)
        grads = tape_grads(lambda: joint_loss(model.forward(cloud).joints, gt), [model.params[n] for n in names])
        for name, g in zip(names, grads):
            flat = model.params[name].data.reshape(-1)
            num = np.zeros_like(flat)
            smooth = np.ones(flat.size, dtype=bool)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                up, sig_up = loss(), piece_signature(model, cloud, monkeypatch)
                flat[i] = keep - h
                down, sig_down = loss(), piece_signature(model, cloud, monkeypatch)
                flat[i] = keep
                num[i] = (up - down) / (2.0 * h)
                smooth[i] = sig_up == sig_down
            checked += int(smooth.sum())
            straddling += int((~smooth).sum())
            err = relative_error(g.reshape(-1)[smooth], num[smooth], floor=1e-6)
            if err > worst:
                worst, worst_name = err, f"{name} (normals={use_normals})"
    elapsed = time.perf_counter() - t0
    report(1, worst < 1e-4 and elapsed < 60 and straddling <= 0.01 * checked,
           f"max relative gradient error {worst:.2e} at {worst_name} over {checked} entries "
           f"({straddling} kink-straddling stencils skipped), {elapsed:.1f} s")


def test_criterion_02_convex_hull(report):
    config = ModelConfig(k_neighbors=16)
    worst_sum, worst_recompute, min_coeff = 0.0, 0.0, np.inf
    for trial in range(100):
        rng = np.random.default_rng(trial)
        model = JointLocalizer(config, seed=trial)
        n = int(rng.integers(40, 200))
        pts = rng.normal(size=(n, 3)) * rng.uniform(0.1, 10.0)
        nrm = rng.normal(size=(n, 3))
        out = model.forward(PointCloud(pts, nrm / np.linalg.norm(nrm, axis=1, keepdims=True)))
        c = out.coefficients.data
        min_coeff = min(min_coeff, c.min())
        worst_sum = max(worst_sum, np.abs(c.sum(axis=0) - 1.0).max())
        worst_recompute = max(worst_recompute, np.abs(c.T @ pts - out.joints.data).max())
    ok = min_coeff >= 0 and worst_sum <= 1e-6 and worst_recompute <= 1e-9
    report(2, ok, f"min coefficient {min_coeff:.3g}, max |sum-1| {worst_sum:.2e}, "
                  f"max recompute diff {worst_recompute:.2e} over 100 passes")


def test_criterion_03_permutation_invariance(report):
    model = JointLocalizer(ModelConfig(), seed=5)
    base = fixture_sample(40)
    model.forward(base.cloud)  # non-default running statistics
    model.eval()
    worst = 0.0
    for trial in range(20):
        s = fixture_sample(40 + trial % 4)
        perm = np.random.default_rng(trial).permutation(len(s.cloud))
        a = model.predict(s.cloud)
        b = model.predict(PointCloud(s.cloud.points[perm], s.cloud.normals[perm]))
        worst = max(worst, np.abs(a - b).max())
    report(3, worst < 1e-9, f"max joint change under row shuffles {worst:.2e} over 20 trials")


def test_criterion_04_shapes(report):
    model = JointLocalizer(ModelConfig(), seed=0)
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(11000, 3))
    nrm = rng.normal(size=(11000, 3))
    out = model.eval().forward(PointCloud(pts, nrm / np.linalg.norm(nrm, axis=1, keepdims=True)))
    count = model.parameter_count()
    ok = (out.widths == [64, 64, 128, 256, 512] and model.config.concat_width == 512
          and out.coefficients.shape == (11000, 69) and abs(count - 390_000) <= 0.05 * 390_000)
    report(4, ok, f"widths {out.widths}, concat {model.config.concat_width}, head {out.coefficients.shape}, "
                  f"{count} parameters ({100 * (count / 390_000 - 1):+.2f}% vs 0.39M)")


def test_criterion_05_overfit(report, tmp_path):
    t0 = time.perf_counter()
    samples = [fixture_sample(seed) for seed in range(4)]
    config = TrainConfig(out_dir=str(tmp_path), epochs=125, seed=0)  # 125 epochs x 4 samples = 500 steps
    result = fit(config, train_samples=samples, val_samples=samples)
    final = result.rows[-1]["val_mpjpe"]
    elapsed = time.perf_counter() - t0
    report(5, final < 1.0 and elapsed < 600,
           f"mean MPJPE after 500 steps {final:.3f}% of height (best {result.best_metric:.3f}%), {elapsed:.0f} s")


def test_criterion_06_oracles(report):
    details, ok = [], True
    for dim in (3, 64):
        data = np.random.default_rng(dim).normal(size=(1024, dim))
        same = np.array_equal(KnnIndex(data).query(data, 16), brute_knn(data, data, 16))
        ok &= same
        details.append(f"kNN D={dim} {'exact' if same else 'MISMATCH'}")
    mesh = icosphere(1.0, 3)
    bvh = build_bvh(mesh)
    rng = np.random.default_rng(1)
    origins = rng.uniform(-1.5, 1.5, size=(1000, 3))
    dirs = rng.normal(size=(1000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    worst_t, tri_ok = 0.0, True
    for o, d, hits in zip(origins, dirs, raycast_batch(bvh, origins, dirs)):
        ref = scan_hits(mesh, o, d, bvh.epsilon_t)
        tri_ok &= [h.triangle for h in hits] == [f for _, f in ref]
        if hits and len(hits) == len(ref):
            worst_t = max(worst_t, max(abs(h.t - t) for h, (t, _) in zip(hits, ref)))
    ok &= tri_ok and worst_t < 1e-12
    details.append(f"BVH 1000 rays {'same triangles' if tri_ok else 'MISMATCH'}, max |dt| {worst_t:.1e}")
    sk = fixture_sample(0).skeleton
    gt = rng.normal(size=(3, 69, 3))
    pred = gt + rng.normal(scale=0.01, size=gt.shape)
    rep = mpjpe(pred, gt, sk.categories)
    per = 100.0 * np.sqrt(((pred - gt) ** 2).sum(-1))
    body = np.array([c != "finger" for c in sk.categories])
    diff = max(abs(rep.categories["Body"] - per[:, body].mean()), abs(rep.categories["Fingers"] - per[:, ~body].mean()))
    ok &= diff < 1e-12
    details.append(f"MPJPE recompute diff {diff:.1e}")
    report(6, bool(ok), "; ".join(details))


def test_criterion_07_geometry_gates(report):
    interior, total, misses = 0, 0, 0
    for seed in range(20):
        mesh, sk, _ = rigged_fixture(100 + seed)
        bvh = build_bvh(mesh)
        warnings: list[str] = []
        fixed = correct_leaf_bones(bvh, sk, warnings)
        misses += len(warnings)
        leaves = np.flatnonzero(fixed.leaf)
        interior += int(is_inside(bvh, fixed.tails[leaves]).sum())
        total += len(leaves)
    mesh, sk, w = rigged_fixture(200)
    sk = correct_leaf_bones(build_bvh(mesh), sk)
    base = baseline_bone_hits(build_bvh(mesh), sk)
    posed = randomize_pose(mesh, sk, w, RotationLimits(), rng_seed=7, baseline=base)
    moved = sum(1 for e in posed.log if e["accepted"] and any(e["angles_deg"]))
    reverified = np.array_equal(baseline_bone_hits(build_bvh(posed.mesh), posed.skeleton), base)
    ident = randomize_pose(mesh, sk, w, RotationLimits.zero(), rng_seed=7)
    identity = (np.array_equal(ident.mesh.vertices, mesh.vertices) and np.array_equal(ident.skeleton.tails, sk.tails))
    ok = interior == total and reverified and identity and moved > 0
    report(7, ok, f"{interior}/{total} leaf tails interior on 20 meshes ({misses} ray misses); "
                  f"{moved} rotated bones re-verify baseline hits: {reverified}; zero limits identity: {identity}")


def _chain(points):
    pts = np.asarray(points, dtype=float)
    n = len(pts) - 1
    return Skeleton([f"j{i}" for i in range(n)], [None] + list(range(n - 1)), pts[:-1], pts[1:], ["spine"] * n,
                    [False] * (n - 1) + [True])


def test_criterion_08_pcj(report):
    sphere = pcj_threshold(build_bvh(icosphere(0.7, 4)), _chain([[0, -0.3, 0], [0, 0, 0], [0, 0.3, 0]]), 0)
    cyl = pcj_threshold(build_bvh(cylinder_mesh(0.3, 20.0, 128)), _chain([[0, 0, -1.0], [0, 0, 0], [0, 0, 1.0]]), 0)
    analytic = abs(sphere / 0.7 - 1) <= 0.01 and abs(cyl / 0.3 - 1) <= 0.01

    mesh, sk, _ = rigged_fixture(300)
    sk = correct_leaf_bones(build_bvh(mesh), sk)
    s = make_sample(mesh, sk)
    th = pcj_thresholds(build_bvh(s.mesh), s.skeleton)[None]
    fingers = np.asarray(s.skeleton.is_finger())
    monotone = True
    rng = np.random.default_rng(0)
    for scale in (0.001, 0.01, 0.05):
        pred = s.joints + rng.normal(scale=scale, size=s.joints.shape)
        c = pcj_curve(pred[None], s.joints[None], th, fingers)
        monotone &= bool(np.all(np.diff(c.body) >= 0) and np.all(np.diff(c.fingers) >= 0))
    perfect = pcj_curve(s.joints[None], s.joints[None], th, fingers)
    rep = mpjpe(s.joints[None], s.joints[None], s.skeleton.categories)
    exact = bool((perfect.body == 1).all() and (perfect.fingers == 1).all()
                 and all(v == 0 or math.isnan(v) for v in rep.categories.values()))
    report(8, analytic and monotone and exact,
           f"sphere threshold {sphere:.5f} (r=0.7), cylinder {cyl:.5f} (r=0.3); monotone: {monotone}; "
           f"perfect predictions PCJ=100% and MPJPE=0: {exact}")


def _end_to_end(root, raw):
    root.mkdir()
    limits = root / "limits.json"
    limits.write_text(json.dumps({"default": [[0, 0]] * 3, "bones": {"elbow_l": [[-15, 15]] * 3,
                                                                       "knee_r": [[-15, 15]] * 3}}))
    cfg = root / "train.toml"
    cfg.write_text("epochs = 3\nk_neighbors = 16\nseed = 7\n")
    codes = [
        main(["-q", "preprocess", str(raw), str(root / "cond"), "--seed", "3", "--pose-randomize",
              "--limits-file", str(limits), "--no-point-check"]),
        main(["-q", "train", str(cfg), "--data-dir", str(root / "cond"), "--out-dir", str(root / "run")]),
        main(["-q", "evaluate", "--checkpoint", str(root / "run" / "best.ckpt"), "--data-dir", str(root / "cond"),
              "--out-dir", str(root / "eval")]),
    ]
    files = ["cond/manifest.json", "cond/provenance.json", "cond/model_0000/sample.ply", "cond/model_0000/joints.json",
             "run/best.ckpt", "run/last.ckpt", "eval/mpjpe.csv", "eval/mpjpe_table.csv", "eval/pcj.csv"]
    return codes, {f: (root / f).read_bytes() for f in files}


def test_criterion_09_determinism(report, tmp_path):
    raw = tmp_path / "raw"
    write_raw_dataset(raw, counts=(2, 1, 1), seed=0)
    codes_a, a = _end_to_end(tmp_path / "a", raw)
    codes_b, b = _end_to_end(tmp_path / "b", raw)
    same = [f for f in a if a[f] == b[f]]
    ok = codes_a == codes_b == [0, 0, 0] and len(same) == len(a)
    report(9, ok, f"exit codes {codes_a}/{codes_b}; byte-identical: {len(same)}/{len(a)} ({', '.join(same)})")


def test_criterion_10_scheduler(report):
    sch = PlateauScheduler(1e-3, patience=8, decay_rate=0.75)
    trace = []
    for epoch in range(12):
        trace.append(sch.lr_for_epoch(epoch))
        sch.step(0.5)
    first_drop = next(i for i, lr in enumerate(trace) if lr != 1e-3)
    ok = first_drop == 10 and trace[first_drop] == 7.5e-4
    # epoch 0 sets the best value, epochs 1..9 are the 9 non-improving ones
    report(10, ok, f"lr {trace[0]:g} -> {trace[first_drop]:g} after {first_drop - 1} non-improving epochs")


@pytest.mark.skip(reason="criterion 11 needs a 3000-model dataset and full-scale training (optional, not gating)")
def test_criterion_11_full_scale():
    pass
