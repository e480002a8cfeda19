"""
Head/tail (HT) matching of clusters.

When an edge reverses direction its polarity flips and KCSCAN starts a new
cluster. The pixels covered by the last ``delta_t`` seconds of the old cluster
(tail) are compared with the first ``delta_t`` seconds of clusters starting
shortly after (head); the best overlapping pairs are linked into chains.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from core.exceptions import BothEmpty, InvalidParams
from core.types import ClusterChain

logger = logging.getLogger(__name__)

_SHIFT = np.int64(32)


@dataclass(frozen=True, eq=False)
class PixelSet:
    """Distinct integer pixels, stored as sorted ``x << 32 | y`` keys."""
    keys: np.ndarray

    @classmethod
    def from_coords(cls, x, y):
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        keys = np.unique((x << _SHIFT) | y)
        keys.setflags(write=False)
        return cls(keys)

    @classmethod
    def from_pixels(cls, pixels):
        pixels = np.asarray(list(pixels), dtype=np.int64).reshape(-1, 2)
        return cls.from_coords(pixels[:, 0], pixels[:, 1])

    def __len__(self):
        return len(self.keys)

    def __eq__(self, other):
        return isinstance(other, PixelSet) and np.array_equal(self.keys, other.keys)

    def __hash__(self):
        return hash(self.keys.tobytes())

    def __contains__(self, pixel):
        key = (np.int64(pixel[0]) << _SHIFT) | np.int64(pixel[1])
        i = int(np.searchsorted(self.keys, key))
        return i < len(self.keys) and self.keys[i] == key

    @property
    def coords(self):
        return np.column_stack((self.keys >> _SHIFT, self.keys & np.int64(0xFFFFFFFF)))

    def to_set(self):
        return {(int(x), int(y)) for x, y in self.coords}

    def centroid(self):
        return self.coords.mean(axis=0)


def _check_window(delta_t):
    if not delta_t > 0:
        raise InvalidParams(f'delta_t must be positive, got {delta_t!r}')


def head_descriptor(cluster, delta_t):
    """Pixels of the events in ``[t_start, t_start + delta_t)``."""
    _check_window(delta_t)
    events = cluster.events
    hi = max(1, int(np.searchsorted(events.t, cluster.t_start + delta_t, side='left')))
    return PixelSet.from_coords(events.x[:hi], events.y[:hi])


def tail_descriptor(cluster, delta_t):
    """Pixels of the events in ``(t_end - delta_t, t_end]``."""
    _check_window(delta_t)
    events = cluster.events
    lo = min(len(events) - 1, int(np.searchsorted(events.t, cluster.t_end - delta_t, side='right')))
    return PixelSet.from_coords(events.x[lo:], events.y[lo:])


def iou(a, b):
    """Intersection over union, from integer counts."""
    intersection = len(np.intersect1d(a.keys, b.keys, assume_unique=True))
    union = len(a) + len(b) - intersection
    if union == 0:
        raise BothEmpty()
    return intersection / union


@dataclass(frozen=True)
class Link:
    predecessor: int
    successor: int
    iou: float


def candidate_links(clusters, params, opposite_polarity_only=False, workers=1):
    """
    Every (predecessor, successor) pair passing the temporal, spatial and IoU gates.

    ``predecessor`` and ``successor`` are positions in ``clusters``.
    """
    n = len(clusters)
    if n == 0:
        return []
    heads = [head_descriptor(c, params.delta_t) for c in clusters]
    tails = [tail_descriptor(c, params.delta_t) for c in clusters]
    head_centroids = np.array([h.centroid() for h in heads])
    starts = np.array([c.t_start for c in clusters])
    ends = np.array([c.t_end for c in clusters])
    by_start = np.lexsort((np.arange(n), starts))
    sorted_starts = starts[by_start]

    def score(i):
        lo = int(np.searchsorted(sorted_starts, ends[i], side='left'))
        hi = int(np.searchsorted(sorted_starts, ends[i] + params.search_time, side='right'))
        links = []
        tail_centroid = tails[i].centroid()
        for j in by_start[lo:hi]:
            j = int(j)
            if j == i or not (starts[j] > starts[i] or (starts[j] == starts[i] and j > i)):
                continue
            if opposite_polarity_only and clusters[j].polarity == clusters[i].polarity:
                continue
            if np.hypot(*(head_centroids[j] - tail_centroid)) > params.proximity_radius:
                continue
            overlap = iou(tails[i], heads[j])
            if overlap >= params.iou_threshold:
                links.append(Link(i, j, overlap))
        return links

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        per_cluster = list(pool.map(score, range(n)))
    return [link for links in per_cluster for link in links]


def resolve_links(links, clusters):
    """
    One-to-one assignment: claims are granted in descending IoU, ties going
    to the earliest successor start and then the lowest ids.
    """
    ordered = sorted(
        links,
        key=lambda l: (-l.iou, clusters[l.successor].t_start, clusters[l.successor].id, clusters[l.predecessor].id),
    )
    successor_of, predecessor_of = {}, {}
    for link in ordered:
        if link.predecessor in successor_of or link.successor in predecessor_of:
            continue
        successor_of[link.predecessor] = link
        predecessor_of[link.successor] = link
        logger.debug(
            'Linked cluster %s -> %s (IoU %.3f)',
            clusters[link.predecessor].id, clusters[link.successor].id, link.iou,
        )
    return successor_of, predecessor_of


def build_chains(clusters, successor_of, predecessor_of):
    """Follow accepted links from every chain head; chains ordered by their first cluster."""
    heads = [i for i in range(len(clusters)) if i not in predecessor_of]
    heads.sort(key=lambda i: (clusters[i].t_start, clusters[i].id))
    chains = []
    for chain_id, head in enumerate(heads):
        members, scores = [clusters[head]], []
        link = successor_of.get(head)
        while link is not None:
            members.append(clusters[link.successor])
            scores.append(link.iou)
            link = successor_of.get(link.successor)
        chains.append(ClusterChain(chain_id=chain_id, clusters=members, link_scores=scores))
    return chains


def match_clusters(clusters, params, opposite_polarity_only=False, workers=1):
    """Link clusters of one KCSCAN run into chains; unmatched clusters become singleton chains."""
    clusters = list(clusters)
    links = candidate_links(clusters, params, opposite_polarity_only=opposite_polarity_only, workers=workers)
    successor_of, predecessor_of = resolve_links(links, clusters)
    chains = build_chains(clusters, successor_of, predecessor_of)
    logger.info(
        'HT matching: %d clusters, %d candidate links, %d accepted, %d chains',
        len(clusters), len(links), len(successor_of), len(chains),
    )
    return chains


def singleton_chains(clusters):
    """One chain per cluster, the configuration without HT matching."""
    clusters = sorted(clusters, key=lambda c: (c.t_start, c.id))
    return [ClusterChain(chain_id=i, clusters=[c]) for i, c in enumerate(clusters)]
