"""
Feature tracks from cluster chains.

A track point is the mean pixel position of the chain's events strictly
inside ``(t_k - t_w/2, t_k + t_w/2)``. Sample times start half a window after
the chain's first event and stop half a window before its last one.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from core.exceptions import EmptyWindow, InvalidParams
from core.types import Track

logger = logging.getLogger(__name__)


class ChainWindows:
    """Prefix sums over a chain's time-sorted events for O(log n) window means."""

    def __init__(self, chain):
        events = chain.events()
        self.t = events.t
        self.sum_x = np.concatenate(([0], np.cumsum(events.x)))
        self.sum_y = np.concatenate(([0], np.cumsum(events.y)))

    def means(self, times, t_w):
        """``(counts, x, y)`` of the window around each of ``times``; x/y are NaN where empty."""
        times = np.asarray(times, dtype=np.float64)
        lo = np.searchsorted(self.t, times - 0.5 * t_w, side='right')
        hi = np.searchsorted(self.t, times + 0.5 * t_w, side='left')
        counts = hi - lo
        with np.errstate(invalid='ignore', divide='ignore'):
            x = (self.sum_x[hi] - self.sum_x[lo]) / counts
            y = (self.sum_y[hi] - self.sum_y[lo]) / counts
        return counts, x, y


def moving_average(chain, t_k, t_w):
    """Subpixel (x, y) mean of the chain's events within the window centred on ``t_k``."""
    if not t_w > 0:
        raise InvalidParams(f't_w must be positive, got {t_w!r}')
    counts, x, y = ChainWindows(chain).means([t_k], t_w)
    if counts[0] == 0:
        raise EmptyWindow(t_k, t_w)
    return float(x[0]), float(y[0])


def sample_times(t_start, t_end, t_w, sample_period):
    """``t_start + t_w/2 + i * sample_period`` up to ``t_end - t_w/2``."""
    span = (t_end - t_start) - t_w
    if span < 0:
        return np.empty(0)
    count = math.floor(span / sample_period + 1e-9) + 1
    return t_start + 0.5 * t_w + np.arange(count) * sample_period


def chain_track(chain, params, sample_period=None, per_event=False):
    """
    Track of one chain, or None when it is too short.

    Chains younger than ``min_feature_age`` are dropped, and so are tracks
    whose own age ends up below it.
    """
    if chain.age < params.min_feature_age:
        return None
    windows = ChainWindows(chain)
    if per_event:
        lo, hi = chain.t_start + 0.5 * params.t_w, chain.t_end - 0.5 * params.t_w
        times = np.unique(windows.t)
        times = times[(times >= lo) & (times <= hi)]
    else:
        times = sample_times(chain.t_start, chain.t_end, params.t_w, sample_period)
    counts, x, y = windows.means(times, params.t_w)
    filled = counts > 0
    track = Track(chain_id=chain.chain_id, points=np.column_stack((times[filled], x[filled], y[filled])))
    if len(track) < 2 or track.age < params.min_feature_age:
        return None
    return track


def extract_tracks(chains, params, sample_period=None, per_event=False, workers=1):
    """Tracks of every chain old enough, in chain_id order."""
    if not per_event and not (sample_period is not None and sample_period > 0):
        raise InvalidParams(f'sample_period must be positive, got {sample_period!r}')

    def build(chain):
        return chain_track(chain, params, sample_period=sample_period, per_event=per_event)

    chains = sorted(chains, key=lambda c: c.chain_id)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        tracks = [track for track in pool.map(build, chains) if track is not None]
    logger.info(
        'Extracted %d tracks from %d chains (%s)',
        len(tracks), len(chains), 'per event' if per_event else f'every {sample_period} s',
    )
    return tracks
