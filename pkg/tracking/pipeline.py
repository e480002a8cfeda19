"""
The eCDT pipeline: KCSCAN clustering, HT matching and moving-average tracks.
"""
import csv
import logging
from dataclasses import dataclass

import numpy as np

from clustering.kcscan import NOISE, cluster, cluster_in_chunks
from core.exceptions import EmptyStream, InvalidParams
from core.types import validate_stream

from .extraction import extract_tracks
from .matching import match_clusters, singleton_chains

logger = logging.getLogger(__name__)

LABEL_FIELDS = ['t', 'x', 'y', 'p', 'cluster_id', 'chain_id']


@dataclass
class PipelineResult:
    events: object
    labeling: object
    chains: list
    tracks: list

    def chain_labels(self):
        """Per-event chain id, NOISE for unclustered events."""
        chain_of = np.full(max(self.labeling.clusters, default=-1) + 1, NOISE, dtype=np.int64)
        for chain in self.chains:
            for member in chain.clusters:
                chain_of[member.id] = chain.chain_id
        labels = self.labeling.labels
        return np.where(labels >= 0, chain_of[np.maximum(labels, 0)], NOISE)


def run_pipeline(
    events,
    params,
    *,
    t_begin=None,
    t_end=None,
    use_ht=True,
    chunk_duration=None,
    sample_period=None,
    per_event=False,
    opposite_polarity_only=False,
    workers=1,
):
    """Cluster, match and extract tracks from a validated event stream."""
    if t_begin is not None and t_end is not None and t_begin > t_end:
        raise InvalidParams(f't_begin {t_begin} is after t_end {t_end}')
    validate_stream(events)
    if t_begin is not None or t_end is not None:
        events = events.time_slice(t_begin, t_end)
        logger.info('Time slice [%s, %s] holds %d events', t_begin, t_end, len(events))
    if len(events) == 0:
        raise EmptyStream('No events to track in the selected time range.')

    if chunk_duration:
        labeling = cluster_in_chunks(events, params, chunk_duration, workers=workers)
    else:
        labeling = cluster(events, params, workers=workers)

    clusters = labeling.cluster_list()
    if use_ht:
        chains = match_clusters(clusters, params, opposite_polarity_only=opposite_polarity_only, workers=workers)
    else:
        chains = singleton_chains(clusters)
    tracks = extract_tracks(chains, params, sample_period=sample_period, per_event=per_event, workers=workers)
    return PipelineResult(events=events, labeling=labeling, chains=chains, tracks=tracks)


def write_labels(result, path, header=''):
    """Per-event ``t,x,y,p,cluster_id,chain_id`` table (-1 for noise)."""
    events = result.events
    chain_ids = result.chain_labels()
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        handle.write(header)
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(LABEL_FIELDS)
        for t, x, y, p, cid, chain in zip(events.t, events.x, events.y, events.p, result.labeling.labels, chain_ids):
            writer.writerow([f'{t:.9f}', x, y, p, cid, chain])
