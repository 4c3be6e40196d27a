"""Procedural humanoid fixtures built from capsules around the template bones.

Two flavours are produced: watertight rigged meshes (marching cubes over the
capsule union, with skin weights) for the conditioning pipeline, and point
clouds sampled directly on the capsule surfaces with analytic normals for
fast training fixtures.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation
from skimage.measure import marching_cubes

from ..geometry import PointCloud, TriMesh
from ..geometry.transforms import fit_unit_height
from .conditioning import forward_kinematics, posed_skeleton, quantize_f32
from .dataset import DatasetManifest, Sample, SkinWeights, save_manifest, save_rigged_model
from .skeleton import Skeleton, template_skeleton

_RADIUS_BY_PREFIX = [
    ("spine", 0.12), ("pelvis", 0.11), ("neck", 0.05), ("head", 0.095), ("clavicle", 0.055),
    ("shoulder", 0.055), ("elbow", 0.05), ("wrist", 0.04), ("hand", 0.045), ("hip", 0.09),
    ("knee", 0.07), ("ankle", 0.05), ("ball", 0.045), ("toe", 0.035),
]
FINGER_RADIUS = 0.016


def bone_radii(skel: Skeleton, finger_radius: float = FINGER_RADIUS) -> np.ndarray:
    """Capsule radius per bone, keyed on the name of the bone's tail joint."""
    out = np.empty(len(skel))
    for i, name in enumerate(skel.names):
        if skel.categories[i] == "finger":
            out[i] = finger_radius
            continue
        out[i] = next(r for prefix, r in _RADIUS_BY_PREFIX if name.startswith(prefix))
    return out


def _segments(skel: Skeleton, leaf_cover: float):
    a = skel.heads
    b = skel.tails.copy()
    leaf = skel.leaf
    b[leaf] = a[leaf] + leaf_cover * (skel.tails[leaf] - a[leaf])
    return a, b


def segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distance from every point to every segment (P x B) and the segment parameter."""
    ab = b - a
    denom = np.maximum(np.einsum("bj,bj->b", ab, ab), 1e-300)
    ap = points[:, None, :] - a[None]
    s = np.clip(np.einsum("pbj,bj->pb", ap, ab) / denom, 0.0, 1.0)
    d = np.linalg.norm(ap - s[..., None] * ab[None], axis=2)
    return d, s


def capsule_sdf(points: np.ndarray, skel: Skeleton, radii: np.ndarray, leaf_cover: float = 1.0,
                chunk: int = 8192) -> np.ndarray:
    """Signed distance to the union of bone capsules (negative inside)."""
    a, b = _segments(skel, leaf_cover)
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        d, _ = segment_distance(points[s : s + chunk], a, b)
        out[s : s + chunk] = (d - radii).min(axis=1)
    return out


def humanoid_mesh(skel: Skeleton | None = None, spacing: float = 0.03, leaf_cover: float = 0.3,
                  finger_radius: float | None = None) -> TriMesh:
    """Watertight capsule-union surface around ``skel`` by marching cubes.

    Fingers default to a radius of one grid spacing so they survive the
    coarse grid as thick blobs.
    """
    skel = template_skeleton() if skel is None else skel
    radii = bone_radii(skel, max(FINGER_RADIUS, spacing) if finger_radius is None else finger_radius)
    pad = radii.max() + 3 * spacing
    allpts = np.vstack([skel.heads, skel.tails])
    lo, hi = allpts.min(axis=0) - pad, allpts.max(axis=0) + pad
    shape = np.ceil((hi - lo) / spacing).astype(int) + 1
    axes = [lo[i] + spacing * np.arange(shape[i]) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    sdf = capsule_sdf(grid, skel, radii, leaf_cover).reshape(shape)
    verts, faces, _, _ = marching_cubes(sdf, level=0.0, spacing=(spacing,) * 3, allow_degenerate=False)
    verts = verts.astype(np.float64) + lo
    # marching cubes winds faces inward for a negative-inside field
    return TriMesh(verts, faces[:, ::-1].astype(np.int64))


def synthetic_skin_weights(vertices: np.ndarray, skel: Skeleton, nearest: int = 3, falloff: float = 0.02) -> SkinWeights:
    """Soft weights over the ``nearest`` bone segments, decaying with distance."""
    d, _ = segment_distance(vertices, skel.heads, skel.tails)
    idx = np.argsort(d, axis=1, kind="stable")[:, :nearest]
    dn = np.take_along_axis(d, idx, axis=1)
    w = np.exp(-(dn - dn[:, :1]) / falloff)
    w /= w.sum(axis=1, keepdims=True)
    dense = np.zeros_like(d)
    np.put_along_axis(dense, idx, w, axis=1)
    return SkinWeights.from_dense(dense, cutoff=1e-4).renormalized()


def vary_skeleton(skel: Skeleton, rng: np.random.Generator, scale_range=(0.85, 1.15), max_angle_deg: float = 10.0) -> Skeleton:
    """Random global size and small random bone rotations (no collision checks)."""
    angles = rng.uniform(-max_angle_deg, max_angle_deg, size=(len(skel), 3))
    angles[skel.root] = 0.0
    local = Rotation.from_euler("XYZ", angles, degrees=True).as_matrix()
    R, t = forward_kinematics(skel, local)
    posed = posed_skeleton(skel, R, t)
    s = rng.uniform(*scale_range)
    return posed.transformed(lambda x: x * s)


def sample_capsule_surface(skel: Skeleton, n_points: int, rng: np.random.Generator,
                           finger_radius: float = 0.012, per_bone: float = 0.0) -> PointCloud:
    """Samples on the capsule-union surface with exact outward normals.

    A ``per_bone`` fraction of the draws picks the bone uniformly, the rest in
    proportion to capsule area, so small bones still get points.
    """
    radii = bone_radii(skel, finger_radius)
    a, b = skel.heads, skel.tails
    length = np.linalg.norm(b - a, axis=1)
    area = 2 * np.pi * radii * length + 4 * np.pi * radii**2
    prob = (1.0 - per_bone) * area / area.sum() + per_bone / len(skel)
    pts_out, nrm_out, have = [], [], 0
    while have < n_points:
        m = 4 * (n_points - have) + 64
        bone = rng.choice(len(skel), size=m, p=prob)
        r = radii[bone]
        on_cyl = rng.uniform(size=m) * area[bone] < 2 * np.pi * r * length[bone]
        u = rng.normal(size=(m, 3))
        # cylinder part: project a random direction onto the plane normal to the bone
        axis = (b[bone] - a[bone]) / np.maximum(length[bone], 1e-300)[:, None]
        radial = u - np.einsum("ij,ij->i", u, axis)[:, None] * axis
        sphere = u
        dirs = np.where(on_cyl[:, None], radial, sphere)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        base = np.where(on_cyl[:, None], a[bone] + rng.uniform(size=(m, 1)) * (b[bone] - a[bone]),
                        np.where(rng.uniform(size=(m, 1)) < 0.5, a[bone], b[bone]))
        pts = base + r[:, None] * dirs
        keep = capsule_sdf(pts, skel, radii) > -1e-9
        pts, dirs = pts[keep], dirs[keep]
        take = min(len(pts), n_points - have)
        pts_out.append(pts[:take])
        nrm_out.append(dirs[:take])
        have += take
    return PointCloud(np.vstack(pts_out), np.vstack(nrm_out))


def fixture_sample(seed: int, n_points: int = 1024, skel: Skeleton | None = None, vary: bool = True,
                   per_bone: float = 0.5, max_angle_deg: float = 5.0) -> Sample:
    """A normalized training sample: cloud with normals and the J x 3 joints."""
    rng = np.random.default_rng(seed)
    base = template_skeleton() if skel is None else skel
    sk = vary_skeleton(base, rng, max_angle_deg=max_angle_deg) if vary else base
    cloud = sample_capsule_surface(sk, n_points, rng, per_bone=per_bone)
    rec = fit_unit_height(cloud.points, "y")
    pts = quantize_f32(rec.apply(cloud.points))
    normals = quantize_f32(cloud.normals)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    norm_skel = sk.transformed(rec.apply)
    return Sample(PointCloud(pts, normals), norm_skel.joints.copy(), f"fixture_{seed:04d}", rec, norm_skel)


def rigged_fixture(seed: int, spacing: float = 0.03, leaf_cover: float = 0.3, vary: bool = True):
    """(mesh, skeleton, weights) for one procedurally varied humanoid."""
    rng = np.random.default_rng(seed)
    sk = template_skeleton()
    if vary:
        sk = vary_skeleton(sk, rng, max_angle_deg=6.0)
    mesh = humanoid_mesh(sk, spacing=spacing, leaf_cover=leaf_cover)
    return mesh, sk, synthetic_skin_weights(mesh.vertices, sk)


def manifest_for(skel: Skeleton, splits: dict[str, list[str]], up_axis: str = "y") -> DatasetManifest:
    return DatasetManifest(list(skel.names), dict(zip(skel.names, skel.categories)), splits, up_axis,
                           {k: len(v) for k, v in splits.items()})


def write_raw_dataset(root: str | Path, counts=(2, 1, 1), seed: int = 0, spacing: float = 0.03) -> DatasetManifest:
    """Write a small rigged dataset (mesh.ply, rig.json, weights.json per sample) plus manifest."""
    root = Path(root)
    splits: dict[str, list[str]] = {}
    i = 0
    skel = template_skeleton()
    for split, n in zip(("train", "val", "test"), counts):
        ids = []
        for _ in range(n):
            sid = f"model_{i:04d}"
            mesh, sk, w = rigged_fixture(seed * 1000 + i, spacing=spacing)
            (root / sid).mkdir(parents=True, exist_ok=True)
            save_rigged_model(root / sid, mesh, sk, w)
            ids.append(sid)
            i += 1
        splits[split] = ids
    manifest = manifest_for(skel, splits)
    save_manifest(root, manifest)
    return manifest
