"""Bounding volume hierarchy over triangles and batched ray queries.

Traversal is breadth-first over (ray, node) pairs so that a whole batch of
rays is tested with vectorized slab and Moller-Trumbore kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import GeometryError, TriMesh

T_EPSILON = 1e-9
_BARY_TOL = 1e-12
_DEDUP_TOL = 1e-9


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise GeometryError("ray direction must be a unit vector")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", d)

    @classmethod
    def towards(cls, origin, direction) -> "Ray":
        d = np.asarray(direction, dtype=np.float64)
        return cls(origin, d / np.linalg.norm(d))


@dataclass(frozen=True)
class Hit:
    t: float
    triangle: int
    point: np.ndarray


class Bvh:
    """Median-split BVH; leaves reference contiguous runs of ``order``."""

    def __init__(self, mesh: TriMesh, leaf_size: int = 4):
        if len(mesh.faces) == 0:
            raise GeometryError("cannot build a BVH over an empty mesh")
        self.mesh = mesh
        tris = mesh.triangles
        self.v0 = tris[:, 0]
        self.e1 = tris[:, 1] - tris[:, 0]
        self.e2 = tris[:, 2] - tris[:, 0]
        self.epsilon_t = T_EPSILON * max(mesh.diagonal(), 1e-300)
        self._build(tris, leaf_size)

    @property
    def n_triangles(self) -> int:
        return len(self.mesh.faces)

    def _build(self, tris: np.ndarray, leaf_size: int) -> None:
        tmin, tmax = tris.min(axis=1), tris.max(axis=1)
        cent = (tmin + tmax) / 2.0
        order = np.arange(len(tris))
        lo_l, hi_l, left, right, start, count = [], [], [], [], [], []

        def new_node(s, e):
            idx = order[s:e]
            lo_l.append(tmin[idx].min(axis=0))
            hi_l.append(tmax[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(s)
            count.append(e - s)
            return len(lo_l) - 1

        stack = [(new_node(0, len(tris)), 0, len(tris))]
        while stack:
            node, s, e = stack.pop()
            if e - s <= leaf_size:
                continue
            axis = int(np.argmax(hi_l[node] - lo_l[node]))
            seg = order[s:e]
            seg = seg[np.argsort(cent[seg, axis], kind="stable")]
            order[s:e] = seg
            mid = s + (e - s) // 2
            l, r = new_node(s, mid), new_node(mid, e)
            left[node], right[node] = l, r
            count[node] = 0
            stack.append((r, mid, e))
            stack.append((l, s, mid))

        pad = 1e-12 * max(1.0, float(np.abs(tris).max()))
        self.lo = np.asarray(lo_l) - pad
        self.hi = np.asarray(hi_l) + pad
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.start = np.asarray(start, dtype=np.int64)
        self.count = np.asarray(count, dtype=np.int64)
        self.order = order

    @property
    def n_nodes(self) -> int:
        return len(self.lo)

    def leaves(self) -> list[np.ndarray]:
        return [self.order[self.start[i] : self.start[i] + self.count[i]] for i in np.flatnonzero(self.left < 0)]

    def candidate_pairs(self, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(ray, triangle) pairs whose leaf boxes the rays pass through."""
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            safe = np.where(dirs == 0.0, 1e-300, dirs)
            inv = 1.0 / safe
        rays = np.arange(len(origins))
        nodes = np.zeros(len(origins), dtype=np.int64)
        out_r, out_t = [], []
        while len(rays):
            o, iv = origins[rays], inv[rays]
            with np.errstate(invalid="ignore", over="ignore"):
                t1 = (self.lo[nodes] - o) * iv
                t2 = (self.hi[nodes] - o) * iv
            tnear = np.minimum(t1, t2).max(axis=1)
            tfar = np.maximum(t1, t2).min(axis=1)
            ok = (tfar >= tnear) & (tfar >= 0.0)
            rays, nodes = rays[ok], nodes[ok]
            leaf = self.left[nodes] < 0
            lr, ln = rays[leaf], nodes[leaf]
            if len(lr):
                cnt = self.count[ln]
                rep_r = np.repeat(lr, cnt)
                offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
                out_r.append(rep_r)
                out_t.append(self.order[np.repeat(self.start[ln], cnt) + offs])
            ir, inn = rays[~leaf], nodes[~leaf]
            rays = np.concatenate([ir, ir])
            nodes = np.concatenate([self.left[inn], self.right[inn]])
        if not out_r:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        return np.concatenate(out_r), np.concatenate(out_t)


def intersect_pairs(v0, e1, e2, origins, dirs, ray_idx, tri_idx, eps_t):
    """Moller-Trumbore on explicit (ray, triangle) pairs.

    Returns the surviving pairs with ``t``, barycentrics ``u, v`` and whether
    the hit lies on a triangle boundary.
    """
    o, d = origins[ray_idx], dirs[ray_idx]
    a, b, c = v0[tri_idx], e1[tri_idx], e2[tri_idx]
    p = np.cross(d, c)
    det = np.einsum("ij,ij->i", b, p)
    valid = np.abs(det) > 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        s = o - a
        u = np.einsum("ij,ij->i", s, p) * inv
        q = np.cross(s, b)
        v = np.einsum("ij,ij->i", d, q) * inv
        t = np.einsum("ij,ij->i", c, q) * inv
        valid &= (u >= -_BARY_TOL) & (v >= -_BARY_TOL) & (u + v <= 1.0 + _BARY_TOL) & (t > eps_t)
        boundary = (np.abs(u) <= 1e-9) | (np.abs(v) <= 1e-9) | (np.abs(1.0 - u - v) <= 1e-9)
    return ray_idx[valid], tri_idx[valid], t[valid], boundary[valid]


def _collate(n_rays, ray_idx, tri_idx, t, boundary, origins, dirs, first_only):
    order = np.lexsort((tri_idx, t, ray_idx))
    ray_idx, tri_idx, t, boundary = ray_idx[order], tri_idx[order], t[order], boundary[order]
    # a boundary hit shared by adjacent triangles counts once (lowest index kept)
    if len(t) > 1:
        same_ray = ray_idx[1:] == ray_idx[:-1]
        close = np.abs(t[1:] - t[:-1]) <= _DEDUP_TOL * (1.0 + np.abs(t[1:]))
        starts = np.ones(len(t), dtype=bool)
        starts[1:] = ~(same_ray & close & boundary[1:] & boundary[:-1])
        cluster = np.cumsum(starts) - 1
        by_tri = np.lexsort((tri_idx, cluster))
        head = np.ones(len(t), dtype=bool)
        head[1:] = cluster[by_tri][1:] != cluster[by_tri][:-1]
        keep = np.sort(by_tri[head])
        ray_idx, tri_idx, t = ray_idx[keep], tri_idx[keep], t[keep]
    results: list[list[Hit]] = [[] for _ in range(n_rays)]
    if first_only:
        first = np.ones(len(ray_idx), dtype=bool)
        first[1:] = ray_idx[1:] != ray_idx[:-1]
        ray_idx, tri_idx, t = ray_idx[first], tri_idx[first], t[first]
    pts = origins[ray_idx] + t[:, None] * dirs[ray_idx]
    for r, tr, tt, pt in zip(ray_idx.tolist(), tri_idx.tolist(), t.tolist(), pts):
        results[r].append(Hit(tt, tr, pt))
    return results


def _as_batch(origins, dirs):
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    if origins.shape != dirs.shape or origins.shape[1] != 3:
        raise GeometryError("origins and directions must both be M x 3")
    return origins, dirs


def raycast_batch(bvh: Bvh, origins, dirs, first_only: bool = False) -> list[list[Hit]]:
    """All hits (t ascending) of every ray; ``first_only`` keeps the nearest."""
    origins, dirs = _as_batch(origins, dirs)
    r, tri = bvh.candidate_pairs(origins, dirs)
    hits = intersect_pairs(bvh.v0, bvh.e1, bvh.e2, origins, dirs, r, tri, bvh.epsilon_t)
    return _collate(len(origins), *hits, origins, dirs, first_only)


def raycast_all(bvh: Bvh, ray: Ray) -> list[Hit]:
    return raycast_batch(bvh, ray.origin[None], ray.direction[None])[0]


def hit_counts(bvh: Bvh | None, origins, dirs) -> np.ndarray:
    """Number of distinct intersections along each ray; a missing BVH means an empty scene."""
    origins, dirs = _as_batch(origins, dirs)
    if bvh is None:
        return np.zeros(len(origins), dtype=np.int64)
    return np.asarray([len(h) for h in raycast_batch(bvh, origins, dirs)], dtype=np.int64)


_PARITY_DIRS = np.array([
    [0.5773502691896258, 0.5773502691896257, 0.5773502691896260],
    [-0.2672612419124244, 0.5345224838248488, -0.8017837257372732],
    [0.8164965809277261, -0.4082482904638630, -0.4082482904638631],
])


def is_inside(bvh: Bvh, points) -> np.ndarray:
    """Crossing-number test: odd hit count means inside. Majority over three skew directions."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    votes = np.zeros(len(pts), dtype=np.int64)
    for d in _PARITY_DIRS:
        d = d / np.linalg.norm(d)
        counts = hit_counts(bvh, pts, np.broadcast_to(d, pts.shape).copy())
        votes += counts % 2
    return votes >= 2


def build_bvh(mesh: TriMesh, leaf_size: int = 4) -> Bvh:
    return Bvh(mesh, leaf_size=leaf_size)
