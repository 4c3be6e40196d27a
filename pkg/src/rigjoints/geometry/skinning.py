from __future__ import annotations

import numpy as np

from .mesh import GeometryError

WEIGHT_SUM_TOL = 1e-4


class SkinWeightError(GeometryError):
    pass


def check_weights(weights: np.ndarray) -> None:
    if np.any(weights < 0):
        raise SkinWeightError("skin weights must be non-negative")
    sums = weights.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > WEIGHT_SUM_TOL)
    if len(bad):
        raise SkinWeightError(f"vertex {bad[0]} weights sum to {sums[bad[0]]:.6f}, expected 1")


def linear_blend_skinning(vertices: np.ndarray, weights: np.ndarray, rotations: np.ndarray,
                          translations: np.ndarray) -> np.ndarray:
    """Blend per-bone rigid transforms ``x -> R_b x + t_b`` with dense V x B weights.

    Transforms are relative to the bind pose (world transform composed with
    the inverse bind transform). Evaluated as ``v + sum_b w_b (T_b v - v)``
    so identity transforms reproduce the input bit for bit.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    if weights.shape != (len(vertices), len(rotations)):
        raise SkinWeightError(f"weights shape {weights.shape} does not match {len(vertices)} vertices x {len(rotations)} bones")
    check_weights(weights)
    moved = np.flatnonzero(np.any(rotations != np.eye(3), axis=(1, 2)) | np.any(translations != 0.0, axis=1))
    if len(moved) == 0:
        return vertices.copy()
    delta = np.zeros_like(vertices)
    for b in moved:
        w = weights[:, b]
        nz = np.flatnonzero(w)
        if len(nz) == 0:
            continue
        v = vertices[nz]
        disp = v @ (rotations[b] - np.eye(3)).T + translations[b]
        delta[nz] += w[nz, None] * disp
    return vertices + delta
