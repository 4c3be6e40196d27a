"""Exact k-nearest-neighbor search with deterministic (distance, index) ordering.

Candidates come from a kd-tree (3D) or a blocked Gram-matrix scan (any D).
For the kd-tree, candidate distances are recomputed as ``sum((q - p)**2)``
and sorted lexicographically by (distance, index). Gram distances are used
directly when no two leading candidates fall within rounding slack of each
other. Any row whose order or candidate set is in doubt is redone by an
exact scan.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .mesh import GeometryError

_BLOCK_ELEMENTS = 1 << 22
_MARGIN = 8


class KnnIndex:
    """Immutable search structure over the rows of ``data``."""

    def __init__(self, data: np.ndarray, leafsize: int = 16):
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.ndim != 2 or len(data) == 0:
            raise GeometryError(f"KnnIndex needs a non-empty N x D array, got {data.shape}")
        self.data = data
        self.data.setflags(write=False)
        self.kind = "kdtree" if data.shape[1] == 3 else "flat"
        self._tree = cKDTree(data, leafsize=leafsize) if self.kind == "kdtree" else None
        self._sqnorm = None if self._tree is not None else np.einsum("ij,ij->i", data, data)

    @property
    def n(self) -> int:
        return len(self.data)

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def query(self, queries: np.ndarray, k: int, exclude_self: bool = False) -> np.ndarray:
        """M x k neighbor indices sorted by (distance, index).

        With ``exclude_self`` the queries must be the indexed rows themselves
        (``M == N``) and row ``i`` never lists ``i``.
        """
        queries = np.ascontiguousarray(queries, dtype=np.float64)
        if queries.ndim != 2 or queries.shape[1] != self.dim:
            raise GeometryError(f"query dimension {queries.shape} does not match index dimension {self.dim}")
        limit = self.n - 1 if exclude_self else self.n
        if k < 1 or k > limit:
            raise GeometryError(f"k={k} out of range for {self.n} points (exclude_self={exclude_self})")
        if exclude_self and len(queries) != self.n:
            raise GeometryError("exclude_self requires querying the indexed points themselves")
        kk = k + 1 if exclude_self else k
        idx = self._candidates_then_exact(queries, kk)
        if not exclude_self:
            return idx
        out = np.empty((len(queries), k), dtype=np.int64)
        rows = np.arange(len(queries))
        is_self = idx == rows[:, None]
        has_self = is_self.any(axis=1)
        # drop the self column where present, otherwise drop the farthest
        keep = ~is_self
        keep[~has_self, -1] = False
        out[:] = idx[keep].reshape(len(queries), k)
        return out

    def _candidates_then_exact(self, queries: np.ndarray, k: int) -> np.ndarray:
        c = min(self.n, k + _MARGIN)
        if self._tree is None:
            return self._flat_query(queries, k, c)
        approx_d, cand = self._tree.query(queries, k=c)
        cand = np.asarray(cand, dtype=np.int64).reshape(len(queries), c)
        approx_d = np.asarray(approx_d).reshape(len(queries), c) ** 2
        slack = 1e-9 * (1.0 + approx_d[:, -1])
        diff = self.data[cand] - queries[:, None, :]
        exact = np.sum(diff * diff, axis=-1)
        order = np.lexsort((cand, exact), axis=-1)
        cand = np.take_along_axis(cand, order, axis=1)
        exact = np.take_along_axis(exact, order, axis=1)
        result = cand[:, :k].copy()
        if c < self.n:
            # the (c)-th approximate distance must clear the k-th exact one, else rescan
            unsafe = approx_d[:, -1] <= exact[:, k - 1] + slack
            for row in np.flatnonzero(unsafe):
                result[row] = self._exact_row(queries[row], k)
        return result

    def _flat_query(self, queries: np.ndarray, k: int, c: int) -> np.ndarray:
        """Order by Gram-matrix distances where they are unambiguous.

        A row is redone with exact differences when two of its first ``k + 1``
        candidates lie within the rounding slack of each other, or when the
        candidate cut could have dropped a true neighbor.
        """
        cand, approx, slack = self._flat_candidates(queries, c)
        order = np.lexsort((cand, approx), axis=-1)
        cand = np.take_along_axis(cand, order, axis=1)
        approx = np.take_along_axis(approx, order, axis=1)
        margin = 2.0 * slack[:, None]
        head = approx[:, : min(k + 1, c)]
        unsafe = (np.diff(head, axis=1) <= margin).any(axis=1)
        if c < self.n:
            unsafe |= approx[:, -1] <= approx[:, k - 1] + margin[:, 0]
        result = cand[:, :k].copy()
        for row in np.flatnonzero(unsafe):
            result[row] = self._exact_row(queries[row], k)
        return result

    def _flat_candidates(self, queries: np.ndarray, c: int):
        m = len(queries)
        qn = np.einsum("ij,ij->i", queries, queries)
        cand = np.empty((m, c), dtype=np.int64)
        approx = np.empty((m, c))
        block = max(1, _BLOCK_ELEMENTS // self.n)
        for s in range(0, m, block):
            q = queries[s : s + block]
            d = qn[s : s + block, None] + self._sqnorm[None, :] - 2.0 * (q @ self.data.T)
            if c < self.n:
                part = np.argpartition(d, c - 1, axis=1)[:, :c]
            else:
                part = np.broadcast_to(np.arange(self.n), d.shape).copy()
            cand[s : s + block] = part
            approx[s : s + block] = np.take_along_axis(d, part, axis=1)
        slack = 1e-9 * (1.0 + qn + self._sqnorm.max())
        return cand, approx, slack

    def _exact_row(self, q: np.ndarray, k: int) -> np.ndarray:
        diff = self.data - q
        d = np.sum(diff * diff, axis=-1)
        order = np.lexsort((np.arange(self.n), d))
        return order[:k].astype(np.int64)


def knn(index: KnnIndex, queries: np.ndarray, k: int, exclude_self: bool = False) -> np.ndarray:
    return index.query(queries, k, exclude_self=exclude_self)


def knn_self(points: np.ndarray, k: int, exclude_self: bool = False) -> np.ndarray:
    """Neighbors of every row of ``points`` among ``points``."""
    return KnnIndex(points).query(points, k, exclude_self=exclude_self)

