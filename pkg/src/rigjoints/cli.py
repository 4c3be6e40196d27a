"""Command-line entry point: ``rigjoints {preprocess,train,evaluate,predict}``.

Exit codes: 0 success, 1 internal or per-sample failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .eval import (
    DEFAULT_RAY_COUNT,
    DEFAULT_STEP_FRACTION,
    mpjpe,
    mpjpe_csv,
    mpjpe_table_csv,
    pcj_csv,
    pcj_curve,
    pcj_svg,
    pcj_thresholds,
    write_text,
)
from .geometry import (
    DEFAULT_K_NORMALS,
    GeometryError,
    PointCloud,
    atomic_write_bytes,
    build_bvh,
    load_mesh,
    read_ply,
)
from .geometry.io import skeleton_ply_bytes
from .model import CheckpointError, load_model
from .numcore import ContractError, DimensionError
from .rigdata import (
    DataError,
    RotationLimits,
    Sample,
    baseline_bone_hits,
    canonical_json,
    condition_cloud,
    config_hash,
    correct_leaf_bones,
    exterior_joints,
    load_manifest,
    load_rigged_model,
    load_sample,
    make_sample,
    randomize_pose,
    save_manifest,
    save_sample,
)
from .rigdata.dataset import DatasetManifest
from .train import ConfigError, TrainConfig, fit, predict_all

log = logging.getLogger("rigjoints")


class UsageError(Exception):
    """Bad arguments or configuration; maps to exit code 2."""


def _sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def cmd_preprocess(args) -> int:
    raw, out = Path(args.raw_dir), Path(args.out_dir)
    if not (raw / "manifest.json").is_file():
        raise UsageError(f"{raw}: no manifest.json; expected a raw dataset directory")
    limits = RotationLimits.load(args.limits_file) if args.limits_file else RotationLimits()
    point_range = None if args.no_point_check else tuple(args.point_range)
    resolved = {"seed": args.seed, "pose_randomize": args.pose_randomize, "limits": limits.to_json(),
                "k_normals": args.k_normals, "point_range": point_range, "up_axis": None}
    manifest = load_manifest(raw)
    resolved["up_axis"] = manifest.up_axis
    cfg_hash = config_hash(resolved)
    log.info("preprocess config %s (hash %s)", json.dumps(resolved, sort_keys=True), cfg_hash)
    out.mkdir(parents=True, exist_ok=True)
    done: dict[str, list[str]] = {}
    records: dict[str, dict] = {}
    failures = 0
    for index, sid in enumerate(manifest.all_ids()):
        split = next(s for s, ids in manifest.splits.items() if sid in ids)
        try:
            mesh, skel, weights = load_rigged_model(raw / sid, manifest)
            warnings: list[str] = []
            bvh = build_bvh(mesh)
            skel = correct_leaf_bones(bvh, skel, warnings)
            pose_log = None
            if args.pose_randomize:
                seed = _sample_seed(args.seed, index)
                res = randomize_pose(mesh, skel, weights, limits, seed, baseline_bone_hits(bvh, skel))
                mesh, skel, pose_log = res.mesh, res.skeleton, res.log
                bvh = build_bvh(mesh)
            outside = exterior_joints(bvh, skel)
            if outside:
                warnings.append("joints outside the mesh (reported, not corrected): " + ", ".join(outside))
            sample = make_sample(mesh, skel, manifest.up_axis, args.k_normals, sid, point_range)
            sample.warnings = warnings + sample.warnings
            (out / sid).mkdir(parents=True, exist_ok=True)
            save_sample(out / sid, sample, cfg_hash)
            done.setdefault(split, []).append(sid)
            records[sid] = {"warnings": sample.warnings, "pose_log": pose_log}
            for w in sample.warnings:
                log.warning("%s: %s", sid, w)
        except (DataError, GeometryError, ContractError) as exc:
            failures += 1
            records[sid] = {"error": str(exc)}
            log.error("%s: %s", sid, exc)
    cond = DatasetManifest(manifest.joint_names, manifest.joint_categories, done, manifest.up_axis,
                           {k: len(v) for k, v in done.items()})
    save_manifest(out, cond)
    prov = {"tool_version": __version__, "config": resolved, "config_hash": cfg_hash, "samples": records}
    atomic_write_bytes(out / "provenance.json", canonical_json(prov))
    log.info("conditioned %d samples, %d failed", sum(map(len, done.values())), failures)
    return 1 if failures else 0


def _parse_override(text: str):
    if "=" not in text:
        raise UsageError(f"--set expects key=value, got {text!r}")
    key, value = text.split("=", 1)
    try:
        return key.strip(), json.loads(value)
    except json.JSONDecodeError:
        return key.strip(), value


def cmd_train(args) -> int:
    try:
        values = {}
        if args.config:
            values = TrainConfig.load(args.config).to_json()
        for key, attr in (("data_dir", "data_dir"), ("out_dir", "out_dir"), ("epochs", "epochs"), ("seed", "seed")):
            if getattr(args, attr) is not None:
                values[key] = getattr(args, attr)
        if args.no_normals:
            values["use_normals"] = False
        for item in args.set or []:
            k, v = _parse_override(item)
            values[k] = v
        config = TrainConfig.from_mapping(values, "train options")
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if not config.data_dir or not (Path(config.data_dir) / "manifest.json").is_file():
        raise UsageError(f"dataset path {config.data_dir!r} missing or has no manifest.json")
    log.info("train config %s", json.dumps(config.to_json(), sort_keys=True))
    result = fit(config, resume=args.resume, log=log.info)
    log.info("best val MPJPE %.4f%% -> %s", result.best_metric, result.best_path)
    return 0


def _load_predictions(path: Path) -> dict[str, np.ndarray]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"{path}: cannot read predictions ({exc})") from None
    return {k: np.asarray(v, dtype=np.float64) for k, v in data.items()}


def cmd_evaluate(args) -> int:
    root = Path(args.data_dir)
    if not (root / "manifest.json").is_file():
        raise UsageError(f"{root}: not a conditioned dataset (manifest.json missing)")
    if (args.checkpoint is None) == (args.predictions is None):
        raise UsageError("give exactly one of --checkpoint or --predictions")
    manifest = load_manifest(root)
    ids = manifest.splits.get(args.split, [])
    if not ids:
        raise UsageError(f"split {args.split!r} is empty or missing")
    samples = [load_sample(root / sid, with_mesh=True) for sid in ids]
    if args.checkpoint is not None:
        ckpt = load_model(args.checkpoint)
        cfg = ckpt.config
        if cfg.joint_count != manifest.joint_count:
            raise ContractError(f"checkpoint predicts {cfg.joint_count} joints, dataset has {manifest.joint_count}")
        names = ckpt.header.get("joints", {}).get("names")
        if names is not None and names != manifest.joint_names:
            raise ContractError("checkpoint joint names differ from the dataset manifest")
        model = ckpt.build_model()
        preds = predict_all(model, samples)
        method = args.method or ("Ours (with normals)" if cfg.use_normals else "Ours (no normals)")
        tag = ckpt.header.get("config_hash")
    else:
        table = _load_predictions(Path(args.predictions))
        missing = [sid for sid in ids if sid not in table]
        if missing:
            raise UsageError(f"predictions missing for {len(missing)} samples, e.g. {missing[0]}")
        preds = np.stack([table[sid] for sid in ids])
        method = args.method or "external"
        tag = None
    gts = np.stack([s.joints for s in samples])
    if preds.shape != gts.shape:
        raise ContractError(f"predictions {preds.shape} do not match groundtruth {gts.shape}")
    report = mpjpe(preds, gts, manifest.categories())
    warnings: list[str] = []
    thresholds = np.stack([pcj_thresholds(build_bvh(s.mesh), s.skeleton, args.ray_count, args.step_fraction, warnings)
                           for s in samples])
    for w in warnings:
        log.warning("%s", w)
    finger = np.array([c == "finger" for c in manifest.categories()])
    curve = pcj_curve(preds, gts, thresholds, finger)
    cfg_hash = config_hash({"checkpoint": tag, "split": args.split, "ray_count": args.ray_count,
                            "step_fraction": args.step_fraction, "method": method})
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "mpjpe.csv", mpjpe_csv([(method, report)], cfg_hash))
    write_text(out / "mpjpe_table.csv", mpjpe_table_csv([(method, report)], cfg_hash))
    write_text(out / "pcj.csv", pcj_csv(curve, cfg_hash))
    if args.svg:
        write_text(out / "pcj.svg", pcj_svg(curve, cfg_hash))
    log.info("MPJPE body %.4f%% fingers %.4f%%", report.categories["Body"], report.categories["Fingers"])
    return 0


def _read_input(path: Path, up_axis: str, k_normals: int):
    """Returns (cloud, scale record or None, conditioning seconds)."""
    t0 = time.perf_counter()
    if path.is_dir():
        s = load_sample(path)
        return s.cloud, s.scale, time.perf_counter() - t0
    if not path.is_file():
        raise UsageError(f"{path}: input not found")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        mesh = load_mesh(path)
    elif suffix == ".ply":
        ply = read_ply(path)
        if "face" in ply["elements"]:
            mesh = load_mesh(path)
        else:
            v = ply["elements"]["vertex"]
            if not all(c in v for c in ("nx", "ny", "nz")):
                raise UsageError(f"{path}: point cloud without normals; pass a mesh or a conditioned sample")
            cloud = PointCloud(np.column_stack([v["x"], v["y"], v["z"]]), np.column_stack([v["nx"], v["ny"], v["nz"]]))
            return cloud, None, time.perf_counter() - t0
    else:
        raise UsageError(f"{path}: unsupported input type {suffix!r}")
    from .geometry import mesh_to_pointcloud

    cloud, rec = condition_cloud(mesh_to_pointcloud(mesh).points, up_axis, k_normals)
    return cloud, rec, time.perf_counter() - t0


def cmd_predict(args) -> int:
    ckpt = load_model(args.checkpoint)
    model = ckpt.build_model()
    cloud, rec, t_cond = _read_input(Path(args.input), args.up_axis, args.k_normals)
    if len(cloud) <= model.config.k_neighbors:
        raise ContractError(f"input has {len(cloud)} points; the model needs more than k={model.config.k_neighbors} "
                            "(use the full-resolution mesh or a denser cloud)")
    t0 = time.perf_counter()
    joints_n = model.predict(cloud)
    t_inf = time.perf_counter() - t0
    joints = rec.invert(joints_n) if rec is not None else joints_n
    info = ckpt.header.get("joints", {})
    names = info.get("names") or [f"joint_{i}" for i in range(len(joints))]
    parents = info.get("parents")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"tool_version": __version__, "config_hash": ckpt.header.get("config_hash"), "names": names,
               "parents": parents, "joints": joints.tolist(), "joints_normalized": joints_n.tolist(),
               "scale": None if rec is None else rec.to_json()}
    atomic_write_bytes(out / "joints.json", canonical_json(payload))
    if parents is not None:
        comments = [f"rigjoints {__version__}", f"config {ckpt.header.get('config_hash')}"]
        atomic_write_bytes(out / "skeleton.ply", skeleton_ply_bytes(joints, parents, comments))
    print(f"timing: conditioning {t_cond:.3f} s, inference {t_inf:.3f} s, total {t_cond + t_inf:.3f} s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rigjoints", description="Skeleton joint localization in point clouds.")
    p.add_argument("--version", action="version", version=f"rigjoints {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("preprocess", help="condition a raw rigged dataset into training samples")
    pre.add_argument("raw_dir")
    pre.add_argument("out_dir")
    pre.add_argument("--seed", type=int, default=0)
    pre.add_argument("--pose-randomize", action="store_true")
    pre.add_argument("--limits-file")
    pre.add_argument("--k-normals", type=int, default=DEFAULT_K_NORMALS)
    pre.add_argument("--point-range", type=int, nargs=2, default=(10000, 12000), metavar=("LO", "HI"))
    pre.add_argument("--no-point-check", action="store_true", help="skip the point-count range check")
    pre.set_defaults(func=cmd_preprocess)

    tr = sub.add_parser("train", help="train the joint localizer")
    tr.add_argument("config", nargs="?", help="flat TOML file with TrainConfig keys")
    tr.add_argument("--data-dir")
    tr.add_argument("--out-dir")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--no-normals", action="store_true", help="train the 3-channel variant")
    tr.add_argument("--resume", help="checkpoint to continue from")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="MPJPE and PCJ reports on a conditioned split")
    ev.add_argument("--checkpoint")
    ev.add_argument("--predictions", help="JSON {sample_id: J x 3} instead of a checkpoint")
    ev.add_argument("--data-dir", required=True)
    ev.add_argument("--split", default="test")
    ev.add_argument("--out-dir", required=True)
    ev.add_argument("--method")
    ev.add_argument("--svg", action="store_true")
    ev.add_argument("--ray-count", type=int, default=DEFAULT_RAY_COUNT)
    ev.add_argument("--step-fraction", type=float, default=DEFAULT_STEP_FRACTION)
    ev.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", help="predict joints for one mesh, cloud or conditioned sample")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--out-dir", required=True)
    pr.add_argument("--up-axis", default="y")
    pr.add_argument("--k-normals", type=int, default=DEFAULT_K_NORMALS)
    pr.set_defaults(func=cmd_predict)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.ERROR if args.quiet else (logging.DEBUG if args.verbose else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        return int(args.func(args))
    except (UsageError, ConfigError, CheckpointError, ContractError, DimensionError) as exc:
        log.error("%s", exc)
        return 2
    except (DataError, GeometryError, OSError) as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort report for the exit code contract
        log.exception("internal error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
