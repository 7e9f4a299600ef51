"""Exact k-nearest-neighbour search with deterministic tie-breaking.

Candidates come from a scipy k-d tree.  Squared distances are then recomputed
as ``dx*dx + dy*dy + dz*dz`` and neighbours are ordered by (distance, index),
so results are identical to an exhaustive scan that uses the same rule.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud

__all__ = ["KnnIndex", "build_index", "knn_query", "squared_distances"]


def squared_distances(points, queries):
    """Row-wise squared distances, ``points`` shaped (M, k, 3), ``queries`` (M, 3)."""
    d = points - queries[:, None, :]
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


class KnnIndex:
    """Immutable exact KNN index over the positions of one cloud."""

    def __init__(self, points, workers=1):
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError("index needs a non-empty (N, 3) point array")
        self.points = pts
        self.n = pts.shape[0]
        self.workers = workers
        self._tree = cKDTree(pts, balanced_tree=True, compact_nodes=True)

    def __len__(self):
        return self.n

    def query(self, queries, k):
        """Neighbours of many queries at once.

        Returns ``(indices, sq_dists)``, both shaped (M, min(k, N)), sorted by
        squared distance with ties broken by ascending point index.
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        m = q.shape[0]
        kk = min(int(k), self.n)
        if m == 0:
            return np.empty((0, kk), np.int64), np.empty((0, kk))
        if kk == self.n:
            return self._all_points(q)

        # one extra candidate reveals whether a tie straddles the cut
        _, cand = self._tree.query(q, k=kk + 1, workers=self.workers)
        cand = cand.astype(np.int64)
        d2 = squared_distances(self.points[cand], q)
        order = np.lexsort((cand, d2), axis=-1)
        cand = np.take_along_axis(cand, order, axis=1)
        d2 = np.take_along_axis(d2, order, axis=1)

        # the tree's own rounding may differ slightly from ours; anything
        # within a relative 1e-9 of the cut is resolved exhaustively
        cut = d2[:, kk - 1]
        nxt = d2[:, kk]
        near = nxt <= cut * (1.0 + 1e-9) + 1e-300
        idx = cand[:, :kk].copy()
        dist = d2[:, :kk].copy()
        for r in np.flatnonzero(near):
            idx[r], dist[r] = self._resolve(q[r], kk, cut[r])
        return idx, dist

    def _all_points(self, q):
        all_idx = np.broadcast_to(np.arange(self.n, dtype=np.int64), (q.shape[0], self.n))
        d2 = squared_distances(self.points[all_idx], q)
        order = np.lexsort((all_idx, d2), axis=-1)
        return np.take_along_axis(all_idx, order, axis=1), np.take_along_axis(d2, order, axis=1)

    def _resolve(self, qp, kk, cut):
        radius = np.sqrt(cut) * (1.0 + 1e-6) + 1e-150
        ball = np.asarray(self._tree.query_ball_point(qp, radius), dtype=np.int64)
        d = self.points[ball] - qp
        d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        order = np.lexsort((ball, d2))[:kk]
        return ball[order], d2[order]


def build_index(cloud: PointCloud, workers=1) -> KnnIndex:
    return KnnIndex(cloud.points, workers=workers)


def knn_query(index: KnnIndex, query, k: int):
    """K nearest neighbours of a single position as ``[(index, sq_dist), ...]``."""
    idx, d2 = index.query(np.asarray(query, dtype=np.float64).reshape(1, 3), k)
    return [(int(i), float(d)) for i, d in zip(idx[0], d2[0])]
