"""
Radius-bounded k-nearest-neighbour queries in scaled (x, y, t * time_scale) space.

The tree is a static scipy ``cKDTree`` built once per batch. Final distances
are recomputed with numpy so that results, including the (distance, index)
tie-break, match an exhaustive scan exactly.
"""
import logging
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from core.exceptions import EmptyStream, InvalidParams

logger = logging.getLogger(__name__)

# Extra candidates fetched beyond k + self to detect ties at the cut-off
TIE_MARGIN = 8
QUERY_CHUNK = 16384


class NeighborList(NamedTuple):
    indices: np.ndarray
    distances: np.ndarray


def scaled_distances(points, origin):
    """Euclidean distances from ``origin`` to every row of ``points``."""
    diff = points - origin
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _padded(r):
    # cKDTree's own distance rounding must never hide a point at exactly r
    return r * (1.0 + 1e-9) + 1e-12


class StIndex:
    """Immutable neighbour index over scaled event coordinates; safe for concurrent reads."""

    def __init__(self, points, time_scale, polarities=None):
        points = np.array(points, dtype=np.float64, copy=True).reshape(-1, 3)
        points.setflags(write=False)
        self.points = points
        self.time_scale = float(time_scale)
        self.polarities = None if polarities is None else np.asarray(polarities, dtype=np.int8)
        self.tree = cKDTree(points)

    def __len__(self):
        return len(self.points)

    def knn_within_radius(self, query_index, k, r):
        """
        Up to ``k`` neighbours of event ``query_index`` within scaled distance ``r``.

        Sorted by distance, ties by event index; the query event is excluded.
        """
        if k < 1 or not r > 0:
            raise InvalidParams(f'k must be >= 1 and r > 0, got k={k}, r={r}')
        if not 0 <= query_index < len(self):
            raise IndexError(f'query index {query_index} outside index of size {len(self)}')
        indices, distances, counts = self.knn_batch(k, r, queries=np.array([query_index]))
        count = int(counts[0])
        return NeighborList(indices[0, :count].copy(), distances[0, :count].copy())

    def knn_batch(self, k, r, queries=None, workers=1):
        """
        Neighbour lists for many query events at once.

        Returns ``(indices, distances, counts)``: ``(m, k)`` arrays padded with
        -1 / inf, and the number of valid neighbours per row.
        """
        n = len(self)
        queries = np.arange(n) if queries is None else np.asarray(queries, dtype=np.int64)
        m = len(queries)
        indices = np.full((m, k), -1, dtype=np.int64)
        distances = np.full((m, k), np.inf)
        counts = np.zeros(m, dtype=np.int64)
        fallbacks = 0
        for start in range(0, m, QUERY_CHUNK):
            chunk = queries[start:start + QUERY_CHUNK]
            fallbacks += self._knn_chunk(chunk, k, r, workers, indices[start:], distances[start:], counts[start:])
        if fallbacks:
            logger.debug('Resolved %d neighbour lists by exhaustive ball query (ties at the cut-off)', fallbacks)
        return indices, distances, counts

    def _knn_chunk(self, chunk, k, r, workers, out_idx, out_dist, out_counts):
        n = len(self)
        kq = min(k + 1 + TIE_MARGIN, n)
        origins = self.points[chunk]
        tree_dist, idx = self.tree.query(origins, k=kq, distance_upper_bound=_padded(r), workers=workers)
        tree_dist = tree_dist.reshape(len(chunk), kq)
        idx = idx.reshape(len(chunk), kq)

        valid = idx < n
        safe = np.where(valid, idx, 0)
        dist = scaled_distances(self.points[safe], origins[:, None, :])
        keep = valid & (idx != chunk[:, None]) & (dist <= r)
        dist = np.where(keep, dist, np.inf)
        idx = np.where(keep, idx, n)
        order = np.lexsort((idx, dist), axis=-1)
        dist = np.take_along_axis(dist, order, axis=1)[:, :k]
        idx = np.take_along_axis(idx, order, axis=1)[:, :k]
        if dist.shape[1] < k:
            missing = k - dist.shape[1]
            dist = np.pad(dist, ((0, 0), (0, missing)), constant_values=np.inf)
            idx = np.pad(idx, ((0, 0), (0, missing)), constant_values=n)
        counts = np.isfinite(dist).sum(axis=1)

        # A row whose candidate list is full may have lost points tied with
        # its k-th neighbour; those rows are answered from the full ball.
        saturated = valid.all(axis=1) & (kq < n)
        farthest = np.where(np.isfinite(tree_dist), tree_dist, -np.inf).max(axis=1)
        kth = dist[:, k - 1]
        settled = (counts >= k) & (kth < farthest - 1e-9 * np.maximum(1.0, farthest))
        unresolved = np.flatnonzero(saturated & ~settled)
        for row in unresolved:
            dist[row], idx[row], counts[row] = self._exact_row(chunk[row], k, r)

        out_idx[:len(chunk)] = np.where(np.isfinite(dist), idx, -1)
        out_dist[:len(chunk)] = dist
        out_counts[:len(chunk)] = counts
        return len(unresolved)

    def _exact_row(self, query, k, r):
        origin = self.points[query]
        candidates = np.array(self.tree.query_ball_point(origin, _padded(r)), dtype=np.int64)
        candidates = candidates[candidates != query]
        dist = scaled_distances(self.points[candidates], origin)
        inside = dist <= r
        candidates, dist = candidates[inside], dist[inside]
        order = np.lexsort((candidates, dist))[:k]
        row_dist = np.full(k, np.inf)
        row_idx = np.full(k, len(self), dtype=np.int64)
        row_dist[:len(order)] = dist[order]
        row_idx[:len(order)] = candidates[order]
        return row_dist, row_idx, len(order)

    def radius_neighbors(self, origins, r, workers=1):
        """
        For each origin, indices of all points within ``r`` and their distances.

        Returns ``(rows, cols, distances)`` as flat arrays (origin row, point index).
        """
        origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        if len(origins) == 0 or len(self) == 0:
            return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
        lists = self.tree.query_ball_point(origins, _padded(r), workers=workers, return_sorted=False)
        lengths = np.fromiter((len(item) for item in lists), dtype=np.int64, count=len(lists))
        rows = np.repeat(np.arange(len(origins)), lengths)
        cols = np.fromiter((j for item in lists for j in item), dtype=np.int64, count=int(lengths.sum()))
        dist = scaled_distances(self.points[cols], origins[rows])
        inside = dist <= r
        return rows[inside], cols[inside], dist[inside]


def build_index(events, time_scale):
    """Index over exactly the events of ``events`` in (x, y, t * time_scale) space."""
    if not time_scale > 0:
        raise InvalidParams(f'time_scale must be positive, got {time_scale!r}')
    if len(events) == 0:
        raise EmptyStream()
    return StIndex(events.scaled_points(time_scale), time_scale, polarities=events.p)
