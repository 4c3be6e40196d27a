"""Data conditioning: leaf-bone correction, collision-checked posing, sample assembly, augmentation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from ..geometry import (
    Bvh,
    PointCloud,
    TriMesh,
    build_bvh,
    estimate_normals,
    hit_counts,
    is_inside,
    linear_blend_skinning,
    mesh_to_pointcloud,
    raycast_batch,
)
from ..geometry.normals import DEFAULT_K_NORMALS
from ..geometry.transforms import fit_unit_height
from .dataset import Sample, SkinWeights
from .skeleton import DataError, Skeleton

LEAF_LENGTH_FRACTION = 0.95
MAX_ROTATION_DEG = 15.0
DEFAULT_RETRIES = 10


def bone_rays(skel: Skeleton, bones=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Origins (heads), unit directions and lengths of the given bones."""
    bones = np.arange(len(skel)) if bones is None else np.asarray(bones)
    vec = skel.tails[bones] - skel.heads[bones]
    length = np.linalg.norm(vec, axis=1)
    dirs = np.zeros_like(vec)
    ok = length > 0
    dirs[ok] = vec[ok] / length[ok, None]
    return skel.heads[bones], dirs, length


def correct_leaf_bones(bvh: Bvh, skel: Skeleton, warnings: list[str] | None = None) -> Skeleton:
    """Shorten leaf bones that poke through the surface to 95% of the distance to the first hit."""
    leaves = np.flatnonzero(skel.leaf)
    origins, dirs, length = bone_rays(skel, leaves)
    tails = skel.tails.copy()
    hits = raycast_batch(bvh, origins, dirs, first_only=True)
    for b, o, d, L, h in zip(leaves, origins, dirs, length, hits):
        if L == 0:
            continue
        if not h:
            if warnings is not None:
                warnings.append(f"leaf bone {skel.names[b]}: ray from head misses the mesh; left unchanged")
            continue
        dist = h[0].t
        if dist < L:
            tails[b] = o + LEAF_LENGTH_FRACTION * dist * d
    return skel.with_positions(skel.heads.copy(), tails)


def exterior_joints(bvh: Bvh, skel: Skeleton) -> list[str]:
    """Names of joints the crossing-number test places outside the mesh."""
    inside = is_inside(bvh, skel.tails)
    return [skel.names[i] for i in np.flatnonzero(~inside)]


def baseline_bone_hits(bvh: Bvh | None, skel: Skeleton) -> np.ndarray:
    """Intersection count along each bone direction, cast from the bone head."""
    origins, dirs, length = bone_rays(skel)
    counts = hit_counts(bvh, origins, np.where(length[:, None] > 0, dirs, (0.0, 0.0, 1.0)))
    counts[length == 0] = 0
    return counts


@dataclass
class RotationLimits:
    """Per-bone Euler bounds in degrees, ``[[x_lo, x_hi], [y_lo, y_hi], [z_lo, z_hi]]``."""

    default: np.ndarray = field(default_factory=lambda: np.tile([-MAX_ROTATION_DEG, MAX_ROTATION_DEG], (3, 1)))
    bones: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.default = np.asarray(self.default, dtype=np.float64).reshape(3, 2)
        self.bones = {k: np.asarray(v, dtype=np.float64).reshape(3, 2) for k, v in self.bones.items()}
        for name, b in [("default", self.default), *self.bones.items()]:
            if np.any(np.abs(b) > MAX_ROTATION_DEG + 1e-12):
                raise DataError(f"rotation limits for {name} exceed {MAX_ROTATION_DEG} degrees")
            if np.any(b[:, 0] > b[:, 1]):
                raise DataError(f"rotation limits for {name} have lower bound above upper bound")

    def for_bone(self, name: str) -> np.ndarray:
        return self.bones.get(name, self.default)

    @classmethod
    def zero(cls) -> "RotationLimits":
        return cls(np.zeros((3, 2)))

    @classmethod
    def load(cls, path: str | Path) -> "RotationLimits":
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(d.get("default", np.tile([-MAX_ROTATION_DEG, MAX_ROTATION_DEG], (3, 1))), d.get("bones", {}))

    def to_json(self) -> dict:
        return {"default": self.default.tolist(), "bones": {k: v.tolist() for k, v in self.bones.items()}}


def forward_kinematics(skel: Skeleton, local_rots: np.ndarray):
    """World transforms ``x -> R x + t`` per bone, relative to the rest pose.

    Bone ``k`` rotates by ``local_rots[k]`` about its rest head, after which
    the parent's transform is applied.
    """
    n = len(skel)
    R = np.zeros((n, 3, 3))
    t = np.zeros((n, 3))
    for k in skel.topological_order():
        h = skel.heads[k]
        Rl = local_rots[k]
        tl = h - Rl @ h
        p = skel.parents[k]
        if p is None:
            R[k], t[k] = Rl, tl
        else:
            R[k] = R[p] @ Rl
            t[k] = R[p] @ tl + t[p]
    return R, t


def posed_skeleton(skel: Skeleton, R: np.ndarray, t: np.ndarray) -> Skeleton:
    heads = np.empty_like(skel.heads)
    tails = np.einsum("kij,kj->ki", R, skel.tails) + t
    for k, p in enumerate(skel.parents):
        if p is None:
            heads[k] = R[k] @ skel.heads[k] + t[k]
        else:
            heads[k] = tails[p]
    return skel.with_positions(heads, tails)


@dataclass
class PoseResult:
    mesh: TriMesh
    skeleton: Skeleton
    log: list[dict]


def randomize_pose(mesh: TriMesh, skel: Skeleton, weights: SkinWeights | np.ndarray, limits: RotationLimits,
                   rng_seed: int, baseline: np.ndarray | None = None, max_retries: int = DEFAULT_RETRIES) -> PoseResult:
    """Rotate non-root bones in a seeded random order, rejecting poses that change bone hit counts.

    Each candidate is skinned from the rest mesh, the BVH is rebuilt and the
    per-bone ray hit counts must equal ``baseline``. After ``max_retries``
    rejections the bone keeps its current orientation.
    """
    rng = np.random.default_rng(rng_seed)
    dense = weights.dense(len(skel)) if isinstance(weights, SkinWeights) else np.asarray(weights)
    if baseline is None:
        baseline = baseline_bone_hits(build_bvh(mesh), skel)
    local = np.tile(np.eye(3), (len(skel), 1, 1))
    cur_mesh, cur_skel = mesh, skel
    log: list[dict] = []
    root = skel.root
    for b in rng.permutation(len(skel)):
        b = int(b)
        if b == root:
            continue
        lim = limits.for_bone(skel.names[b])
        entry = {"bone": skel.names[b], "attempts": 0, "accepted": False, "angles_deg": [0.0, 0.0, 0.0]}
        for attempt in range(1, max_retries + 1):
            angles = rng.uniform(lim[:, 0], lim[:, 1])
            entry["attempts"] = attempt
            if not np.any(angles):
                entry["accepted"] = True
                break
            trial = local.copy()
            trial[b] = Rotation.from_euler("XYZ", angles, degrees=True).as_matrix()
            R, t = forward_kinematics(skel, trial)
            verts = linear_blend_skinning(mesh.vertices, dense, R, t)
            cand_mesh = mesh.copy_with(verts)
            cand_skel = posed_skeleton(skel, R, t)
            counts = baseline_bone_hits(build_bvh(cand_mesh), cand_skel)
            if np.array_equal(counts, baseline):
                local = trial
                cur_mesh, cur_skel = cand_mesh, cand_skel
                entry["accepted"] = True
                entry["angles_deg"] = [float(a) for a in angles]
                break
        log.append(entry)
    return PoseResult(cur_mesh, cur_skel, log)


def quantize_f32(a: np.ndarray) -> np.ndarray:
    """Round to the nearest float32 so in-memory samples equal their stored form."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def condition_cloud(points: np.ndarray, up_axis: str, k_normals: int):
    """Normalize raw points, estimate normals; returns (cloud, scale record)."""
    rec = fit_unit_height(points, up_axis)
    pts = quantize_f32(rec.apply(points))
    cloud = estimate_normals(PointCloud(pts), k_normals)
    normals = quantize_f32(cloud.normals)
    return PointCloud(pts, normals, cloud.degenerate), rec


def make_sample(mesh: TriMesh, skel: Skeleton, up_axis: str = "y", k_normals: int = DEFAULT_K_NORMALS,
                source_id: str = "", point_range: tuple[int, int] | None = None) -> Sample:
    """Mesh -> point cloud, unit-height normalization (joints alike), normals."""
    raw = mesh_to_pointcloud(mesh)
    if point_range is not None and not point_range[0] <= len(raw) <= point_range[1]:
        raise DataError(f"sample {source_id}: {len(raw)} points outside expected range {point_range}")
    cloud, rec = condition_cloud(raw.points, up_axis, k_normals)
    norm_skel = skel.transformed(rec.apply)
    sample = Sample(cloud, norm_skel.joints.copy(), source_id, rec, norm_skel, mesh.copy_with(rec.apply(mesh.vertices)))
    if cloud.degenerate is not None and cloud.degenerate.any():
        sample.warnings.append(f"{int(cloud.degenerate.sum())} degenerate normal neighborhoods")
    sample.validate()
    return sample


def augment(cloud: PointCloud, joints: np.ndarray, rng: np.random.Generator, scale_range=(0.8, 1.2),
            sigma: float = 0.01, clip: float = 0.05) -> tuple[PointCloud, np.ndarray]:
    """Uniform scaling of points and joints, then clipped Gaussian jitter on points only."""
    s = rng.uniform(scale_range[0], scale_range[1]) if scale_range[0] != scale_range[1] else scale_range[0]
    pts = cloud.points * s
    if sigma > 0:
        pts = pts + np.clip(rng.normal(0.0, sigma, size=pts.shape), -clip, clip)
    return PointCloud(pts, cloud.normals), np.asarray(joints) * s
