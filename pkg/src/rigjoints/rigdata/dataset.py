"""On-disk layout of raw rigged models, conditioned samples and dataset manifests.

Raw sample directory::

    mesh.ply      binary little-endian triangle mesh
    rig.json      {"joints": [{name, parent, head, tail, category, leaf}, ...]}
    weights.json  {"vertices": [[[joint_index, weight], ...], ...]}

Conditioned sample directory::

    sample.ply    normalized points with normals (float32)
    joints.json   ordered J x 3 joints, bone heads, hierarchy and scale record
    mesh.ply      the normalized mesh (used for PCJ thresholds)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..geometry import GeometryError, PointCloud, ScaleRecord, TriMesh, atomic_write_bytes, load_cloud, load_mesh
from ..geometry.io import cloud_ply_bytes, mesh_ply_bytes
from ..geometry.skinning import WEIGHT_SUM_TOL
from .skeleton import CATEGORIES, DataError, Skeleton

SPLITS = ("train", "val", "test")


def canonical_json(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n").encode("utf-8")


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def provenance_comments(cfg_hash: str | None = None) -> list[str]:
    out = [f"rigjoints {__version__}"]
    if cfg_hash:
        out.append(f"config {cfg_hash}")
    return out


def _read_json(path: Path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"{path}: missing file") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


@dataclass
class SkinWeights:
    """Per-vertex sparse (joint index, weight) pairs."""

    pairs: list[list[tuple[int, float]]]

    def dense(self, n_joints: int) -> np.ndarray:
        out = np.zeros((len(self.pairs), n_joints))
        for v, row in enumerate(self.pairs):
            for j, w in row:
                out[v, j] += w
        return out

    @classmethod
    def from_dense(cls, w: np.ndarray, cutoff: float = 0.0) -> "SkinWeights":
        pairs = []
        for row in w:
            nz = np.flatnonzero(row > cutoff)
            pairs.append([(int(j), float(row[j])) for j in nz])
        return cls(pairs)

    def renormalized(self) -> "SkinWeights":
        out = []
        for row in self.pairs:
            total = sum(w for _, w in row)
            out.append([(j, w / total) for j, w in row])
        return SkinWeights(out)

    def validate(self, n_vertices: int, n_joints: int, source: str = "weights") -> None:
        if len(self.pairs) != n_vertices:
            raise DataError(f"{source}: {len(self.pairs)} weight rows for {n_vertices} vertices")
        for v, row in enumerate(self.pairs):
            total = 0.0
            for j, w in row:
                if not 0 <= j < n_joints:
                    raise DataError(f"{source}: vertex {v} references unknown joint index {j}")
                if w < 0:
                    raise DataError(f"{source}: vertex {v} has negative weight {w}")
                total += w
            if abs(total - 1.0) > WEIGHT_SUM_TOL:
                raise DataError(f"{source}: vertex {v} weights sum to {total:.6g}, expected 1")


@dataclass
class DatasetManifest:
    joint_names: list[str]
    joint_categories: dict[str, str]
    splits: dict[str, list[str]]
    up_axis: str = "y"
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def joint_index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.joint_names)}

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    def categories(self) -> list[str]:
        return [self.joint_categories[n] for n in self.joint_names]

    def all_ids(self) -> list[str]:
        return [sid for s in SPLITS for sid in self.splits.get(s, [])]

    def validate(self, root: Path | None = None, required: tuple[str, ...] = ()) -> None:
        seen: dict[str, str] = {}
        for split, ids in self.splits.items():
            if split not in SPLITS:
                raise DataError(f"manifest: unknown split {split!r}")
            for sid in ids:
                if sid in seen:
                    raise DataError(f"manifest: sample {sid!r} appears in both {seen[sid]} and {split}")
                seen[sid] = split
        for split, n in self.counts.items():
            if len(self.splits.get(split, [])) != n:
                raise DataError(f"manifest: split {split} has {len(self.splits.get(split, []))} samples, counts say {n}")
        for name in self.joint_names:
            if self.joint_categories.get(name) not in CATEGORIES:
                raise DataError(f"manifest: joint {name!r} has missing or unknown category")
        if root is not None:
            for sid in self.all_ids():
                for fname in required:
                    if not (root / sid / fname).is_file():
                        raise DataError(f"manifest: sample {sid!r} is missing {fname}")

    def to_json(self) -> dict:
        return {
            "format": "rigjoints-manifest/1",
            "up_axis": self.up_axis,
            "joint_index": self.joint_index,
            "joint_category": dict(self.joint_categories),
            "splits": {k: list(v) for k, v in self.splits.items()},
            "counts": dict(self.counts),
        }

    @classmethod
    def from_json(cls, d: dict, source: str = "manifest.json") -> "DatasetManifest":
        try:
            index = d["joint_index"]
            names = sorted(index, key=lambda n: index[n])
            if sorted(index.values()) != list(range(len(names))):
                raise DataError(f"{source}: joint_index values must be 0..J-1")
            return cls(names, dict(d["joint_category"]), {k: list(v) for k, v in d["splits"].items()},
                       d.get("up_axis", "y"), dict(d.get("counts", {})))
        except KeyError as exc:
            raise DataError(f"{source}: missing key {exc.args[0]!r}") from None


def load_manifest(root: str | Path) -> DatasetManifest:
    path = Path(root) / "manifest.json"
    m = DatasetManifest.from_json(_read_json(path), str(path))
    m.validate()
    return m


def save_manifest(root: str | Path, manifest: DatasetManifest) -> None:
    atomic_write_bytes(Path(root) / "manifest.json", canonical_json(manifest.to_json()))


def skeleton_to_json(skel: Skeleton) -> dict:
    return {"joints": [
        {"name": n, "parent": None if p is None else skel.names[p], "head": skel.heads[i].tolist(),
         "tail": skel.tails[i].tolist(), "category": skel.categories[i], "leaf": bool(skel.leaf[i])}
        for i, (n, p) in enumerate(zip(skel.names, skel.parents))
    ]}


def skeleton_from_json(d: dict, source: str = "rig.json") -> Skeleton:
    try:
        rows = d["joints"]
        names = [r["name"] for r in rows]
        idx = {n: i for i, n in enumerate(names)}
        parents = []
        for r in rows:
            p = r["parent"]
            if p is not None and p not in idx:
                raise DataError(f"{source}: joint {r['name']!r} has unknown parent {p!r}")
            parents.append(None if p is None else idx[p])
        skel = Skeleton(names, parents, [r["head"] for r in rows], [r["tail"] for r in rows],
                        [r["category"] for r in rows], [bool(r["leaf"]) for r in rows])
    except (KeyError, TypeError) as exc:
        raise DataError(f"{source}: malformed joint entry ({exc})") from None
    return skel


def load_rigged_model(directory: str | Path, manifest: DatasetManifest | None = None):
    """Read ``mesh.ply``, ``rig.json`` and ``weights.json``; validate everything."""
    directory = Path(directory)
    mesh_path = directory / "mesh.ply"
    if not mesh_path.is_file():
        raise DataError(f"{mesh_path}: missing file")
    try:
        mesh = load_mesh(mesh_path)
    except GeometryError as exc:
        raise DataError(f"{mesh_path}: {exc}") from None
    rig_path = directory / "rig.json"
    skel = skeleton_from_json(_read_json(rig_path), str(rig_path))
    skel.validate(str(rig_path), None if manifest is None else manifest.joint_names)
    if manifest is not None:
        for name, cat in zip(skel.names, skel.categories):
            if manifest.joint_categories[name] != cat:
                raise DataError(f"{rig_path}: joint {name!r} has category {cat!r}, manifest says "
                                f"{manifest.joint_categories[name]!r}")
    w_path = directory / "weights.json"
    raw = _read_json(w_path)
    try:
        weights = SkinWeights([[(int(j), float(w)) for j, w in row] for row in raw["vertices"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{w_path}: malformed weights ({exc})") from None
    weights.validate(len(mesh.vertices), len(skel), str(w_path))
    return mesh, skel, weights


def save_rigged_model(directory: str | Path, mesh: TriMesh, skel: Skeleton, weights: SkinWeights) -> None:
    directory = Path(directory)
    atomic_write_bytes(directory / "mesh.ply", mesh_ply_bytes(mesh))
    atomic_write_bytes(directory / "rig.json", canonical_json(skeleton_to_json(skel)))
    atomic_write_bytes(directory / "weights.json",
                       canonical_json({"vertices": [[[j, w] for j, w in row] for row in weights.pairs]}))


@dataclass
class Sample:
    cloud: PointCloud
    joints: np.ndarray  # J x 3 normalized
    source_id: str
    scale: ScaleRecord
    skeleton: Skeleton | None = None  # normalized bones (heads/tails) for PCJ
    mesh: TriMesh | None = None  # normalized mesh for PCJ
    warnings: list[str] = field(default_factory=list)

    def validate(self) -> None:
        lo, hi = self.cloud.points.min(axis=0), self.cloud.points.max(axis=0)
        tol = 1e-6
        if np.any(self.joints < lo - tol) or np.any(self.joints > hi + tol):
            raise DataError(f"sample {self.source_id}: joints outside the cloud bounding box")


def save_sample(directory: str | Path, sample: Sample, cfg_hash: str | None = None) -> None:
    directory = Path(directory)
    comments = provenance_comments(cfg_hash)
    atomic_write_bytes(directory / "sample.ply", cloud_ply_bytes(sample.cloud, comments))
    if sample.mesh is not None:
        atomic_write_bytes(directory / "mesh.ply", mesh_ply_bytes(sample.mesh, comments))
    payload = {
        "tool_version": __version__,
        "config_hash": cfg_hash,
        "source_id": sample.source_id,
        "joints": sample.joints.tolist(),
        "scale": sample.scale.to_json(),
        "warnings": list(sample.warnings),
    }
    if sample.skeleton is not None:
        sk = sample.skeleton
        payload.update(names=sk.names, parents=sk.parents, categories=sk.categories,
                       heads=sk.heads.tolist(), leaf=[bool(x) for x in sk.leaf])
    atomic_write_bytes(directory / "joints.json", canonical_json(payload))


def load_joints_record(path: str | Path) -> dict:
    return _read_json(Path(path))


def load_sample(directory: str | Path, with_mesh: bool = False) -> Sample:
    directory = Path(directory)
    rec = _read_json(directory / "joints.json")
    cloud = load_cloud(directory / "sample.ply")
    skel = None
    if "names" in rec:
        skel = Skeleton(rec["names"], rec["parents"], rec["heads"], rec["joints"], rec["categories"], rec["leaf"])
    mesh = load_mesh(directory / "mesh.ply") if with_mesh else None
    return Sample(cloud, np.asarray(rec["joints"], dtype=np.float64), rec["source_id"],
                  ScaleRecord.from_json(rec["scale"]), skel, mesh, list(rec.get("warnings", [])))
