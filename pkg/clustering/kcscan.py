"""
KCSCAN: k-NN Classifier-based Spatial Clustering Applications with Noise.

An event is a core point when exactly k neighbours lie within r (scaled
space) and at least ``phi_min`` of those k share its polarity. Clusters grow
from core points the DBSCAN way: equal-polarity core points within r of each
other share a cluster, and a non-core equal-polarity event within r of a core
point becomes a border member of its nearest core's cluster (ties go to the
lower cluster id). Opposite-polarity events are never absorbed, so a band of
opposite polarity acts as a barrier between clusters.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from core.exceptions import EmptyStream, InvalidParams
from core.types import Cluster, Polarity, validate_stream

from .index import QUERY_CHUNK, StIndex, build_index

logger = logging.getLogger(__name__)

NOISE = -1
UNVISITED = -2


@dataclass(frozen=True, eq=False)
class Labeling:
    """Per-event labels (cluster id or NOISE) and the cluster registry."""
    labels: np.ndarray
    clusters: dict
    core: np.ndarray

    @property
    def noise_count(self):
        return int(np.count_nonzero(self.labels == NOISE))

    def cluster_list(self):
        return [self.clusters[cid] for cid in sorted(self.clusters)]


def purity_score(query, neighbor_polarities, k):
    """
    Fraction of the k configured neighbours sharing the query polarity.

    Divides by ``k``, not by the number of neighbours found.
    """
    polarity = int(getattr(query, 'p', query))
    neighbor_polarities = np.asarray(neighbor_polarities, dtype=np.int64).reshape(-1)
    if len(neighbor_polarities) > k:
        raise InvalidParams(f'{len(neighbor_polarities)} neighbours exceed k={k}')
    return int(np.count_nonzero(neighbor_polarities == polarity)) / k


def core_point_eval(query_index, params, index):
    """
    Core test for one event: ``(is_core, neighbours)``.

    Non-core events return an empty neighbour list.
    """
    neighbors = index.knn_within_radius(query_index, params.k, params.r)
    if len(neighbors.indices) < params.k:
        return False, neighbors._replace(indices=neighbors.indices[:0], distances=neighbors.distances[:0])
    score = purity_score(index.polarities[query_index], index.polarities[neighbors.indices], params.k)
    if score < params.phi_min:
        return False, neighbors._replace(indices=neighbors.indices[:0], distances=neighbors.distances[:0])
    return True, neighbors


def evaluate_core_points(index, params, workers=1):
    """Vectorised core test over every event of the index; returns a boolean mask."""
    neighbors, _, counts = index.knn_batch(params.k, params.r, workers=workers)
    polarities = index.polarities.astype(np.int64)
    neighbor_p = np.where(neighbors >= 0, polarities[np.maximum(neighbors, 0)], -1)
    matches = np.count_nonzero(neighbor_p == polarities[:, None], axis=1)
    purity = matches / params.k
    return (counts == params.k) & (purity >= params.phi_min)


def _core_components(points, r, workers):
    """Connected components of ``points`` under the 'within r' relation."""
    m = len(points)
    if m == 0:
        return np.empty(0, dtype=np.int64)
    sub = StIndex(points, 1.0)
    rep = np.arange(m)
    for start in range(0, m, QUERY_CHUNK):
        rows, cols, _ = sub.radius_neighbors(points[start:start + QUERY_CHUNK], r, workers=workers)
        rows = rows + start
        graph = coo_matrix((np.ones(len(rows), dtype=np.int8), (rep[rows], rep[cols])), shape=(m, m))
        _, component = connected_components(graph, directed=False)
        rep = component[rep]
    return np.unique(rep, return_inverse=True)[1].reshape(-1)


def _assign_borders(labels, core_points, core_labels, border_ids, points, r, workers):
    if len(core_points) == 0 or len(border_ids) == 0:
        return
    cores = StIndex(core_points, 1.0)
    for start in range(0, len(border_ids), QUERY_CHUNK):
        chunk = border_ids[start:start + QUERY_CHUNK]
        rows, cols, dist = cores.radius_neighbors(points[chunk], r, workers=workers)
        if len(rows) == 0:
            continue
        cid = core_labels[cols]
        order = np.lexsort((cid, dist, rows))
        rows, cid = rows[order], cid[order]
        first = np.ones(len(rows), dtype=bool)
        first[1:] = rows[1:] != rows[:-1]
        labels[chunk[rows[first]]] = cid[first]


def cluster(events, params, workers=1):
    """
    Label every event of a validated, time-sorted batch with a cluster id or NOISE.

    Cluster ids follow the time order of each cluster's earliest core event.
    """
    if len(events) == 0:
        raise EmptyStream()
    validate_stream(events)
    index = build_index(events, params.time_scale)
    is_core = evaluate_core_points(index, params, workers=workers)
    points = index.points
    polarities = events.p.astype(np.int64)

    labels = np.full(len(events), UNVISITED, dtype=np.int64)
    # (earliest core index, polarity, component) for every component
    components = []
    core_component = {}
    for polarity in (Polarity.OFF, Polarity.ON):
        core_ids = np.flatnonzero(is_core & (polarities == polarity))
        component = _core_components(points[core_ids], params.r, workers)
        core_component[polarity] = (core_ids, component)
        if len(core_ids):
            firsts = np.full(component.max() + 1, len(events), dtype=np.int64)
            np.minimum.at(firsts, component, core_ids)
            components.extend((int(first), polarity, c) for c, first in enumerate(firsts))

    components.sort()
    cluster_of = {(polarity, c): cid for cid, (_, polarity, c) in enumerate(components)}
    for polarity, (core_ids, component) in core_component.items():
        if len(core_ids):
            lookup = np.array([cluster_of[(polarity, c)] for c in range(component.max() + 1)], dtype=np.int64)
            labels[core_ids] = lookup[component]

    for polarity, (core_ids, _) in core_component.items():
        border_ids = np.flatnonzero(~is_core & (polarities == polarity))
        _assign_borders(labels, points[core_ids], labels[core_ids], border_ids, points, params.r, workers)
    labels[labels == UNVISITED] = NOISE

    clusters = _build_clusters(events, labels)
    result = Labeling(labels=labels, clusters=clusters, core=is_core)
    logger.info(
        'KCSCAN: %d events, %d core, %d clusters, %d noise',
        len(events), int(is_core.sum()), len(clusters), result.noise_count,
    )
    return result


def _build_clusters(events, labels):
    order = np.argsort(labels, kind='stable')
    sorted_labels = labels[order]
    start = int(np.searchsorted(sorted_labels, 0, side='left'))
    clusters = {}
    if start == len(order):
        return clusters
    ids, offsets = np.unique(sorted_labels[start:], return_index=True)
    bounds = list(offsets + start) + [len(order)]
    for cid, lo, hi in zip(ids, bounds, bounds[1:]):
        members = order[lo:hi]
        clusters[int(cid)] = Cluster(
            id=int(cid),
            polarity=Polarity(int(events.p[members[0]])),
            events=events.subset(members),
            indices=members,
        )
    return clusters


def cluster_in_chunks(events, params, chunk_duration, workers=1):
    """
    Cluster consecutive time chunks independently, renumbering ids globally.

    Clusters cut at a chunk border are left for head/tail matching to stitch.
    """
    if len(events) == 0:
        raise EmptyStream()
    if not chunk_duration > 0:
        raise InvalidParams(f'chunk duration must be positive, got {chunk_duration!r}')
    validate_stream(events)
    labels = np.full(len(events), NOISE, dtype=np.int64)
    core = np.zeros(len(events), dtype=bool)
    t0 = events.t[0]
    chunk_of = np.floor((events.t - t0) / chunk_duration).astype(np.int64)
    boundaries = np.flatnonzero(np.diff(chunk_of)) + 1
    offset = 0
    for lo, hi in zip([0, *boundaries], [*boundaries, len(events)]):
        part = cluster(events.subset(np.arange(lo, hi)), params, workers=workers)
        shifted = np.where(part.labels >= 0, part.labels + offset, NOISE)
        labels[lo:hi] = shifted
        core[lo:hi] = part.core
        logger.debug('Chunk starting at t=%.6f: %d events, %d clusters', events.t[lo], hi - lo, len(part.clusters))
        offset += len(part.clusters)
    logger.info('Chunked KCSCAN: %d chunks of %.3f s, %d clusters', len(boundaries) + 1, chunk_duration, offset)
    return Labeling(labels=labels, clusters=_build_clusters(events, labels), core=core)
