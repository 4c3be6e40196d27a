from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import GeometryError

AXES = {"x": 0, "y": 1, "z": 2}


def axis_index(up_axis: str | int) -> int:
    if isinstance(up_axis, (int, np.integer)):
        if up_axis not in (0, 1, 2):
            raise GeometryError(f"up axis index must be 0, 1 or 2, got {up_axis}")
        return int(up_axis)
    try:
        return AXES[up_axis.lower()]
    except (KeyError, AttributeError):
        raise GeometryError(f"unknown up axis {up_axis!r}") from None


@dataclass(frozen=True)
class ScaleRecord:
    """``normalized = raw / height - offset``; ``offset`` is the scaled bbox center."""

    height: float
    offset: tuple[float, float, float]
    up_axis: str = "y"

    def apply(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz, dtype=np.float64) / self.height - np.asarray(self.offset)

    def invert(self, xyz: np.ndarray) -> np.ndarray:
        return (np.asarray(xyz, dtype=np.float64) + np.asarray(self.offset)) * self.height

    def to_json(self) -> dict:
        return {"height": self.height, "offset": list(self.offset), "up_axis": self.up_axis}

    @classmethod
    def from_json(cls, d: dict) -> "ScaleRecord":
        return cls(float(d["height"]), tuple(float(x) for x in d["offset"]), d.get("up_axis", "y"))


def fit_unit_height(points: np.ndarray, up_axis: str | int = "y") -> ScaleRecord:
    ax = axis_index(up_axis)
    lo, hi = points.min(axis=0), points.max(axis=0)
    height = float(hi[ax] - lo[ax])
    if not height > 0.0:
        raise GeometryError("geometry has zero extent along the up axis")
    scaled = points / height
    center = (scaled.min(axis=0) + scaled.max(axis=0)) / 2.0
    name = up_axis if isinstance(up_axis, str) else "xyz"[ax]
    return ScaleRecord(height, tuple(float(c) for c in center), name.lower())


def normalize_to_unit_cube(points: np.ndarray, joints: np.ndarray | None = None, up_axis: str | int = "y"):
    """Scale by 1/height along ``up_axis``, then center the bounding box at the origin.

    The same transform is applied to ``joints``. Returns
    ``(points, joints, record)``.
    """
    points = np.asarray(points, dtype=np.float64)
    rec = fit_unit_height(points, up_axis)
    out_joints = None if joints is None else rec.apply(joints)
    return rec.apply(points), out_joints, rec
