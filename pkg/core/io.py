"""
Readers and writers for the public event-camera dataset layout and for the
toolkit's own outputs.

Event files are parsed line-wise in batches so that multi-GB recordings never
have to be held as text in memory.
"""
import csv
import logging
import math
from pathlib import Path

import numpy as np
from django.conf import settings

from .exceptions import OutOfBounds, ParseError
from .types import CameraIntrinsics, EventStream, Pose, Track, validate_stream

logger = logging.getLogger(__name__)

TRACK_FIELDS = ['chain_id', 't', 'x', 'y']


def _data_lines(handle):
    """Yield (line number, tokens) for non-blank, non-comment lines."""
    for line_no, line in enumerate(handle, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            continue
        yield line_no, stripped.split()


def _parse_floats(line_no, tokens):
    try:
        values = [float(v) for v in tokens]
    except ValueError:
        raise ParseError(line_no, 'non-numeric field')
    if not all(math.isfinite(v) for v in values):
        raise ParseError(line_no, 'NaN or infinite value')
    return values


def _parse_event_batch(rows):
    for line_no, tokens in rows:
        if len(tokens) != 4:
            raise ParseError(line_no, f'expected 4 fields "t x y p", found {len(tokens)}')
    try:
        values = np.array([tokens for _, tokens in rows], dtype=np.float64)
    except ValueError:
        for line_no, tokens in rows:
            _parse_floats(line_no, tokens)
        raise
    bad = ~np.isfinite(values).all(axis=1)
    bad |= values[:, 0] < 0
    bad |= (values[:, 1:3] != np.floor(values[:, 1:3])).any(axis=1)
    bad |= ~np.isin(values[:, 3], (0.0, 1.0))
    if bad.any():
        line_no, tokens = rows[int(np.flatnonzero(bad)[0])]
        _parse_floats(line_no, tokens)
        raise ParseError(line_no, 'timestamp must be >= 0, pixels integral and polarity 0 or 1')
    return values


def read_events(path, width=None, height=None, batch_size=None):
    """
    Read an ``events.txt`` file of ``t x y p`` lines (seconds, px, px, {0,1}).

    The sensor size defaults to the DAVIS240 resolution from settings. The
    result is validated: out-of-sensor events raise ``OutOfBounds`` and time
    reversals ``UnsortedTimestamps`` with the offending event index.
    """
    width = settings.ECDT_SENSOR_WIDTH if width is None else width
    height = settings.ECDT_SENSOR_HEIGHT if height is None else height
    batch_size = batch_size or settings.ECDT_PARSE_BATCH
    chunks = []
    with open(path, 'r', encoding='utf-8') as handle:
        rows = []
        for row in _data_lines(handle):
            rows.append(row)
            if len(rows) >= batch_size:
                chunks.append(_parse_event_batch(rows))
                rows = []
        if rows:
            chunks.append(_parse_event_batch(rows))

    if not chunks:
        logger.info('Read 0 events from %s', path)
        return EventStream.empty(width, height)

    values = np.concatenate(chunks)
    x = values[:, 1].astype(np.int64)
    y = values[:, 2].astype(np.int64)
    outside = np.flatnonzero((x >= width) | (y >= height))
    if len(outside):
        raise OutOfBounds(int(outside[0]))
    stream = EventStream(x=x, y=y, t=values[:, 0], p=values[:, 3].astype(np.int8), width=width, height=height)
    validate_stream(stream)
    logger.info('Read %d events from %s (%.3f s to %.3f s)', len(stream), path, stream.t[0], stream.t[-1])
    return stream


def write_events(stream, path):
    with open(path, 'w', encoding='utf-8') as handle:
        for t, x, y, p in zip(stream.t, stream.x, stream.y, stream.p):
            handle.write(f'{t:.9f} {x} {y} {p}\n')


def read_poses(path):
    """
    Read ``t px py pz qx qy qz qw`` lines.

    Quaternions within 1e-3 of unit norm are renormalised; larger deviations
    and non-increasing timestamps are parse errors.
    """
    poses = []
    with open(path, 'r', encoding='utf-8') as handle:
        for line_no, tokens in _data_lines(handle):
            if len(tokens) != 8:
                raise ParseError(line_no, f'expected 8 fields "t px py pz qx qy qz qw", found {len(tokens)}')
            values = _parse_floats(line_no, tokens)
            quat = np.array(values[4:])
            norm = float(np.linalg.norm(quat))
            if abs(norm - 1.0) >= 1e-3:
                raise ParseError(line_no, f'quaternion norm {norm:.6f} is not close to 1')
            if abs(norm - 1.0) > 1e-9:
                logger.warning('Renormalising quaternion on line %d (norm %.9f)', line_no, norm)
            if poses and values[0] <= poses[-1].t:
                raise ParseError(line_no, 'pose timestamps must increase')
            poses.append(Pose(t=values[0], translation=values[1:4], rotation=quat / norm))
    logger.info('Read %d poses from %s', len(poses), path)
    return poses


def write_poses(poses, path):
    with open(path, 'w', encoding='utf-8') as handle:
        for pose in poses:
            fields = (pose.t, *pose.translation, *pose.rotation)
            handle.write(' '.join(f'{v:.12g}' for v in fields) + '\n')


def read_calib(path):
    """Read the single ``fx fy cx cy k1 k2 p1 p2 k3`` line of ``calib.txt``."""
    with open(path, 'r', encoding='utf-8') as handle:
        for line_no, tokens in _data_lines(handle):
            if len(tokens) != 9:
                raise ParseError(line_no, f'expected 9 fields "fx fy cx cy k1 k2 p1 p2 k3", found {len(tokens)}')
            values = _parse_floats(line_no, tokens)
            return CameraIntrinsics(*values[:4], distortion=tuple(values[4:]))
    raise ParseError(1, 'calibration file is empty')


def write_calib(intrinsics, path):
    values = (intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy, *intrinsics.distortion)
    Path(path).write_text(' '.join(f'{v:.12g}' for v in values) + '\n', encoding='utf-8')


def write_tracks(tracks, path, header=''):
    """Write ``chain_id,t,x,y`` rows at 9 significant digits, optional ``#`` header."""
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        handle.write(header)
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(TRACK_FIELDS)
        for track in tracks:
            for t, x, y in track.points:
                writer.writerow([track.chain_id, f'{t:.9g}', f'{x:.9g}', f'{y:.9g}'])


def read_tracks(path):
    """Read a track CSV back into tracks, in order of first appearance."""
    grouped = {}
    with open(path, 'r', encoding='utf-8', newline='') as handle:
        lines = (line for line in handle if not line.startswith('#'))
        reader = csv.reader(lines)
        header = next(reader, None)
        if header is None:
            return []
        if header != TRACK_FIELDS:
            raise ParseError(1, f'expected header {",".join(TRACK_FIELDS)}')
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(row_no, f'expected 4 columns, found {len(row)}')
            try:
                chain_id = int(row[0])
            except ValueError:
                raise ParseError(row_no, 'chain_id must be an integer')
            grouped.setdefault(chain_id, []).append(_parse_floats(row_no, row[1:]))
    return [Track(chain_id=chain_id, points=points) for chain_id, points in grouped.items()]
