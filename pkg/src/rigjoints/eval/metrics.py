"""Per-category MPJPE and the percentage-of-correct-joints curve."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import Bvh, raycast_batch
from ..rigdata import DataError, Skeleton

TABLE_CATEGORIES = ("Body", "Fingers", "Head", "Neck", "Shoulder", "Spine", "Hips", "Elbow", "Wrist", "Knee", "Foot")
# skeleton category -> Table column; Body is every non-finger joint
_COLUMN = {"head": "Head", "neck": "Neck", "shoulder": "Shoulder", "spine": "Spine", "hips": "Hips",
           "elbow": "Elbow", "wrist": "Wrist", "knee": "Knee", "foot": "Foot", "finger": "Fingers"}

DEFAULT_RAY_COUNT = 64
DEFAULT_STEP_FRACTION = 0.1
DEFAULT_MAX_STEPS = 9


def default_factors() -> np.ndarray:
    return np.round(np.arange(1, 101) / 100.0, 2)


@dataclass
class MetricReport:
    per_joint: np.ndarray  # S x J errors in percent of height
    categories: dict[str, float]  # Table column -> mean percent
    joint_categories: list[str]

    @property
    def mean(self) -> float:
        """Mean over every joint of every sample."""
        return float(self.per_joint.mean()) if self.per_joint.size else math.nan

    def row(self) -> list[float]:
        return [self.categories[c] for c in TABLE_CATEGORIES]


def joint_errors(preds, gts) -> np.ndarray:
    """S x J Euclidean distances."""
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape or preds.shape[-1] != 3:
        raise DataError(f"prediction shape {preds.shape} does not match groundtruth {gts.shape}")
    return np.sqrt(np.sum((preds - gts) ** 2, axis=-1))


def mpjpe(preds, gts, category_map: list[str] | dict[int, str]) -> MetricReport:
    """MPJPE in percent of model height, aggregated into the Table columns.

    ``preds``/``gts`` are S x J x 3 in height-normalized space;
    ``category_map`` gives the skeleton category of each joint index.
    """
    err = joint_errors(preds, gts)
    if err.ndim == 1:
        err = err[None]
    n_joints = err.shape[1]
    cats = []
    for j in range(n_joints):
        try:
            cat = category_map[j]
        except (KeyError, IndexError):
            raise DataError(f"joint {j} has no category in the category map") from None
        if cat not in _COLUMN:
            raise DataError(f"joint {j} has unknown category {cat!r}")
        cats.append(cat)
    pct = err * 100.0
    cats_arr = np.asarray(cats)
    out: dict[str, float] = {}
    body = cats_arr != "finger"
    out["Body"] = float(pct[:, body].mean()) if body.any() else math.nan
    for cat, col in _COLUMN.items():
        member = cats_arr == cat
        out[col] = float(pct[:, member].mean()) if member.any() else math.nan
    return MetricReport(pct, {c: out[c] for c in TABLE_CATEGORIES}, cats)


def _perpendicular_basis(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(d)))] = 1.0
    u = np.cross(d, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(d, u)


def ray_fan(direction: np.ndarray, ray_count: int) -> np.ndarray:
    """``ray_count`` unit directions evenly spaced in the plane perpendicular to ``direction``."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    u, v = _perpendicular_basis(d)
    theta = 2.0 * np.pi * np.arange(ray_count) / ray_count
    dirs = np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * v
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def joint_bones(skel: Skeleton, joint: int) -> list[int]:
    """Bones containing ``joint``: the bone ending there and the bones starting there."""
    return [joint] + list(skel.children(joint))


def pcj_threshold(bvh: Bvh, skel: Skeleton, joint: int, ray_count: int = DEFAULT_RAY_COUNT,
                  step_fraction: float = DEFAULT_STEP_FRACTION, max_steps: int = DEFAULT_MAX_STEPS) -> float | None:
    """Base distance threshold of one groundtruth joint; ``None`` when every retry misses.

    Rays fan out from the joint in the plane perpendicular to each bone that
    contains it. Only the first hit of each ray counts. If no ray of any fan
    hits, the origin steps toward the parent joint and the fans are recast.
    The threshold is the mean distance from the joint to the nearest half of
    the pooled hit points.
    """
    gt = skel.tails[joint]
    dirs = []
    for b in joint_bones(skel, joint):
        vec = skel.tails[b] - skel.heads[b]
        if np.linalg.norm(vec) > 0:
            dirs.append(ray_fan(vec, ray_count))
    if not dirs:
        return None
    fan = np.vstack(dirs)
    toward = skel.heads[joint] - gt
    step = step_fraction * np.linalg.norm(toward)
    unit = toward / np.linalg.norm(toward) if step > 0 else np.zeros(3)
    for s in range(max_steps + 1):
        origin = gt + s * step * unit
        hits = raycast_batch(bvh, np.broadcast_to(origin, fan.shape).copy(), fan, first_only=True)
        pts = np.array([h[0].point for h in hits if h])
        if len(pts):
            dist = np.sort(np.linalg.norm(pts - gt, axis=1))
            return float(dist[: math.ceil(len(dist) / 2)].mean())
        if step == 0:
            break
    return None


def pcj_thresholds(bvh: Bvh, skel: Skeleton, ray_count: int = DEFAULT_RAY_COUNT,
                   step_fraction: float = DEFAULT_STEP_FRACTION, warnings: list[str] | None = None) -> np.ndarray:
    """Thresholds for every joint; NaN marks joints excluded from PCJ."""
    out = np.full(len(skel), np.nan)
    for j in range(len(skel)):
        t = pcj_threshold(bvh, skel, j, ray_count, step_fraction)
        if t is None:
            if warnings is not None:
                warnings.append(f"joint {skel.names[j]}: all PCJ rays missed; excluded")
        else:
            out[j] = t
    return out


@dataclass
class PcjCurve:
    factors: np.ndarray
    body: np.ndarray
    fingers: np.ndarray
    thresholds: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


def pcj_curve(preds, gts, thresholds, finger_mask, factors=None) -> PcjCurve:
    """Fraction of joints with ``|pred - gt| <= factor * threshold``, split body / fingers.

    ``thresholds`` is S x J; NaN entries are left out of both numerator and
    denominator.
    """
    factors = default_factors() if factors is None else np.asarray(factors, dtype=np.float64)
    err = joint_errors(preds, gts)
    thr = np.asarray(thresholds, dtype=np.float64)
    if err.ndim == 1:
        err, thr = err[None], thr[None]
    finger = np.broadcast_to(np.asarray(finger_mask, dtype=bool), err.shape)
    valid = np.isfinite(thr)
    ok = err[None] <= factors[:, None, None] * np.where(valid, thr, 0.0)[None]

    def frac(mask):
        m = mask & valid
        denom = m.sum()
        if denom == 0:
            return np.full(len(factors), np.nan)
        return (ok & m[None]).sum(axis=(1, 2)) / denom

    return PcjCurve(factors, frac(~finger), frac(finger), thr)
