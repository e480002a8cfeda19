"""
Domain types shared by every app.

Event batches are stored column-wise in read-only numpy arrays; single
``Event`` values are materialised on indexing. All types are immutable after
construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from django.core.exceptions import ValidationError

from .exceptions import OutOfBounds, UnsortedTimestamps


class Polarity(IntEnum):
    """Sign of the brightness change; the file value 1 is ON and 0 is OFF."""
    OFF = 0
    ON = 1


def _frozen(array, dtype):
    out = np.array(array, dtype=dtype, copy=True).reshape(-1)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: float
    p: Polarity

    def __post_init__(self):
        if not math.isfinite(self.t) or self.t < 0:
            raise ValidationError('Event timestamp must be finite and non-negative.', code='bad_timestamp')
        if self.x < 0 or self.y < 0:
            raise ValidationError('Event coordinates must be non-negative.', code='bad_coordinate')
        object.__setattr__(self, 'p', Polarity(self.p))


@dataclass(frozen=True, eq=False)
class EventStream:
    """
    A batch of events with the sensor size declared by its source.

    Ordering and bounds are checked by ``validate_stream``; the constructor only
    normalises dtypes so that index structures can be built over shuffled
    copies too.
    """
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, 'x', _frozen(self.x, np.int64))
        object.__setattr__(self, 'y', _frozen(self.y, np.int64))
        object.__setattr__(self, 't', _frozen(self.t, np.float64))
        object.__setattr__(self, 'p', _frozen(self.p, np.int8))
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValidationError('Event columns differ in length.', code='ragged_columns')
        if self.width <= 0 or self.height <= 0:
            raise ValidationError('Sensor dimensions must be positive.', code='bad_sensor')
        if n and not np.isin(self.p, (0, 1)).all():
            raise ValidationError('Polarity must be 0 (OFF) or 1 (ON).', code='bad_polarity')

    @classmethod
    def empty(cls, width, height):
        return cls(x=[], y=[], t=[], p=[], width=width, height=height)

    @classmethod
    def from_events(cls, events, width, height):
        events = list(events)
        return cls(
            x=[e.x for e in events],
            y=[e.y for e in events],
            t=[e.t for e in events],
            p=[int(e.p) for e in events],
            width=width,
            height=height,
        )

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i):
        return Event(int(self.x[i]), int(self.y[i]), float(self.t[i]), Polarity(int(self.p[i])))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices):
        """Events at ``indices`` (in the given order)."""
        indices = np.asarray(indices, dtype=np.int64)
        return EventStream(
            x=self.x[indices], y=self.y[indices], t=self.t[indices], p=self.p[indices],
            width=self.width, height=self.height,
        )

    def time_slice(self, t_begin=None, t_end=None):
        """Events with ``t_begin <= t <= t_end`` of a time-sorted stream."""
        lo = 0 if t_begin is None else int(np.searchsorted(self.t, t_begin, side='left'))
        hi = len(self) if t_end is None else int(np.searchsorted(self.t, t_end, side='right'))
        return self.subset(np.arange(lo, hi))

    def scaled_points(self, time_scale):
        """(x, y, t * time_scale) rows, the space in which neighbour radii live."""
        return np.column_stack((
            self.x.astype(np.float64),
            self.y.astype(np.float64),
            self.t * time_scale,
        ))


def validate_stream(stream):
    """
    Return ``stream`` unchanged if it is time-sorted and inside the sensor.

    Raises the error of the lowest offending event index.
    """
    n = len(stream)
    if n == 0:
        return stream
    oob = (stream.x < 0) | (stream.x >= stream.width) | (stream.y < 0) | (stream.y >= stream.height)
    oob |= ~np.isfinite(stream.t) | (stream.t < 0)
    unsorted = np.zeros(n, dtype=bool)
    unsorted[1:] = np.diff(stream.t) < 0
    bad_bounds = np.flatnonzero(oob)
    bad_order = np.flatnonzero(unsorted)
    first_bounds = bad_bounds[0] if len(bad_bounds) else n
    first_order = bad_order[0] if len(bad_order) else n
    if first_bounds < n and first_bounds <= first_order:
        raise OutOfBounds(int(first_bounds))
    if first_order < n:
        raise UnsortedTimestamps(int(first_order))
    return stream


@dataclass(frozen=True, eq=False)
class Cluster:
    """
    A labeled set of equal-polarity events.

    ``indices`` are positions of the members in the batch the cluster was
    found in.
    """
    id: int
    polarity: Polarity
    events: EventStream
    indices: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, 'polarity', Polarity(self.polarity))
        if len(self.events) == 0:
            raise ValidationError('A cluster cannot be empty.', code='empty_cluster')
        if (self.events.p != int(self.polarity)).any():
            raise ValidationError(
                'Cluster %(id)s mixes polarities.', code='mixed_polarity', params={'id': self.id},
            )
        if (np.diff(self.events.t) < 0).any():
            raise ValidationError(
                'Cluster %(id)s events are not time-sorted.', code='unsorted_cluster', params={'id': self.id},
            )
        if self.indices is not None:
            object.__setattr__(self, 'indices', _frozen(self.indices, np.int64))

    def __len__(self):
        return len(self.events)

    @property
    def t_start(self):
        return float(self.events.t[0])

    @property
    def t_end(self):
        return float(self.events.t[-1])


@dataclass(frozen=True, eq=False)
class ClusterChain:
    """Clusters of one feature linked by head/tail matching, oldest first."""
    chain_id: int
    clusters: tuple
    link_scores: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'clusters', tuple(self.clusters))
        object.__setattr__(self, 'link_scores', tuple(float(s) for s in self.link_scores))
        if not self.clusters:
            raise ValidationError('A chain needs at least one cluster.', code='empty_chain')
        if len(self.link_scores) != len(self.clusters) - 1:
            raise ValidationError('One link score is required per consecutive pair.', code='bad_links')
        for before, after in zip(self.clusters, self.clusters[1:]):
            if before.t_end > after.t_start:
                raise ValidationError(
                    'Chain %(chain)s links cluster %(after)s before cluster %(before)s ends.',
                    code='unordered_chain',
                    params={'chain': self.chain_id, 'before': before.id, 'after': after.id},
                )

    @property
    def t_start(self):
        return self.clusters[0].t_start

    @property
    def t_end(self):
        return max(c.t_end for c in self.clusters)

    @property
    def age(self):
        return self.t_end - self.t_start

    def events(self):
        """Union of member events, stably sorted by time."""
        parts = [c.events for c in self.clusters]
        t = np.concatenate([e.t for e in parts])
        order = np.argsort(t, kind='stable')
        first = parts[0]
        return EventStream(
            x=np.concatenate([e.x for e in parts])[order],
            y=np.concatenate([e.y for e in parts])[order],
            t=t[order],
            p=np.concatenate([e.p for e in parts])[order],
            width=first.width,
            height=first.height,
        )


@dataclass(frozen=True, eq=False)
class Track:
    """Time-ordered subpixel feature positions; ``points`` rows are (t, x, y)."""
    chain_id: int
    points: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64, copy=True).reshape(-1, 3)
        points.setflags(write=False)
        object.__setattr__(self, 'points', points)
        if (np.diff(points[:, 0]) <= 0).any():
            raise ValidationError(
                'Track %(chain)s timestamps must be strictly increasing.',
                code='unsorted_track', params={'chain': self.chain_id},
            )

    def __len__(self):
        return len(self.points)

    @property
    def t(self):
        return self.points[:, 0]

    @property
    def xy(self):
        return self.points[:, 1:]

    @property
    def age(self):
        if len(self.points) == 0:
            return 0.0
        return float(self.points[-1, 0] - self.points[0, 0])


@dataclass(frozen=True)
class Pose:
    """Camera pose at time ``t``: camera centre and orientation in the world frame."""
    t: float
    translation: tuple
    rotation: tuple  # (qx, qy, qz, qw)

    def __post_init__(self):
        object.__setattr__(self, 'translation', tuple(float(v) for v in self.translation))
        object.__setattr__(self, 'rotation', tuple(float(v) for v in self.rotation))
        if len(self.translation) != 3 or len(self.rotation) != 4:
            raise ValidationError('A pose needs 3 translation and 4 quaternion values.', code='bad_pose')
        norm = math.sqrt(sum(q * q for q in self.rotation))
        if abs(norm - 1.0) > 1e-9:
            raise ValidationError(
                'Pose quaternion at t=%(t)s is not unit length (norm %(norm)s).',
                code='non_unit_quaternion', params={'t': self.t, 'norm': norm},
            )


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    distortion: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)  # k1, k2, p1, p2, k3

    def __post_init__(self):
        object.__setattr__(self, 'distortion', tuple(float(v) for v in self.distortion))
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError('Focal lengths must be positive.', code='bad_focal_length')
        if len(self.distortion) != 5 or not all(math.isfinite(v) for v in self.distortion):
            raise ValidationError(
                'Distortion needs 5 finite coefficients (k1, k2, p1, p2, k3).', code='bad_distortion',
            )

    @property
    def matrix(self):
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])
