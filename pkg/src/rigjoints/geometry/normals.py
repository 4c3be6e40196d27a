"""PCA normal estimation with minimum-spanning-tree orientation."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree

from .knn import KnnIndex
from .mesh import GeometryError, PointCloud

DEFAULT_K_NORMALS = 30


class DegenerateNormalWarning(UserWarning):
    pass


def pca_normals(points: np.ndarray, nbrs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smallest-eigenvalue eigenvector of each neighborhood covariance, plus a degeneracy mask."""
    hood = points[nbrs]
    centered = hood - hood.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / nbrs.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    scale = np.einsum("nki,nki->n", centered, centered) / nbrs.shape[1]
    degenerate = evals[:, -1] <= 1e-30 + 1e-14 * scale
    normals[degenerate] = (0.0, 0.0, 1.0)
    return normals / np.linalg.norm(normals, axis=1, keepdims=True), degenerate


def orient_normals(points: np.ndarray, normals: np.ndarray, nbrs: np.ndarray) -> np.ndarray:
    """Make neighboring normals agree, then point each connected piece outward.

    Signs propagate breadth-first along a minimum spanning tree of the kNN
    graph weighted by ``1 - |n_i . n_j|``; afterwards each component is
    flipped if most of its normals face its centroid.
    """
    n = len(points)
    rows = np.repeat(np.arange(n), nbrs.shape[1])
    cols = nbrs.reshape(-1)
    mask = rows != cols
    rows, cols = rows[mask], cols[mask]
    lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
    _, first = np.unique(lo * n + hi, return_index=True)
    lo, hi = lo[first], hi[first]
    # offset keeps perfectly aligned pairs from reading as missing edges
    w = 1.0 - np.abs(np.einsum("ij,ij->i", normals[lo], normals[hi])) + 1e-6
    graph = coo_matrix((w, (lo, hi)), shape=(n, n)).tocsr()
    tree = minimum_spanning_tree(graph)
    tree = tree + tree.T
    out = normals.copy()
    n_comp, labels = connected_components(tree, directed=False)
    for comp in range(n_comp):
        members = np.flatnonzero(labels == comp)
        seed = int(members[0])
        order, pred = breadth_first_order(tree, seed, directed=False, return_predecessors=True)
        for node in order[1:]:
            if out[node] @ out[pred[node]] < 0.0:
                out[node] = -out[node]
        outward = np.einsum("ij,ij->i", out[members], points[members] - points[members].mean(axis=0))
        if np.count_nonzero(outward < 0) > np.count_nonzero(outward > 0):
            out[members] = -out[members]
    return out


def estimate_normals(cloud: PointCloud, k_normals: int = DEFAULT_K_NORMALS) -> PointCloud:
    n = len(cloud)
    if not 3 <= k_normals < n:
        raise GeometryError(f"need N > k_normals >= 3, got N={n}, k_normals={k_normals}")
    nbrs = KnnIndex(cloud.points).query(cloud.points, k_normals, exclude_self=False)
    normals, degenerate = pca_normals(cloud.points, nbrs)
    if degenerate.any():
        warnings.warn(f"{int(degenerate.sum())} point(s) have degenerate neighborhoods; using +Z",
                      DegenerateNormalWarning, stacklevel=2)
    normals = orient_normals(cloud.points, normals, nbrs)
    normals[degenerate] = (0.0, 0.0, 1.0)
    return PointCloud(cloud.points, normals, degenerate)
