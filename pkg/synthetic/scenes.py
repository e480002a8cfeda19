"""
Deterministic synthetic scenes with ground truth.

2D scenes emit events of idealised moving step edges: a bright bar moving
right produces ON events on its leading edge and OFF events on its trailing
edge. Event times are spaced evenly at ``event_rate`` per edge with uniform
jitter of +/-0.2 ms; the rows of an edge are visited in shuffled blocks so
that every window of events covers the edge evenly. The projected scenes
instead produce feature tracks of static 3D points seen by a moving camera.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from core.exceptions import InvalidParams
from core.io import write_calib, write_events, write_poses, write_tracks
from core.types import CameraIntrinsics, EventStream, Polarity, Pose, Track, validate_stream
from evaluation.geometry import Trajectory, project

logger = logging.getLogger(__name__)

JITTER = 2e-4
POSE_RATE = 200.0
# Distance (m) of the plane a 2D scene is drawn on
SCENE_DEPTH = 2.0
# Segment labels of gen_crossing_bands
JUNCTION = -1
BAND_A_LOW, BAND_A_HIGH, BAND_B_LOW, BAND_B_HIGH = 0, 1, 2, 3

EVENT_SCENE_FILES = ('events.txt', 'ground_truth.csv', 'centroids.csv', 'poses.txt', 'calib.txt')
PROJECTED_SCENE_FILES = ('tracks.csv', 'points3d.csv', 'poses.txt', 'calib.txt')

PROJECTED_INTRINSICS = CameraIntrinsics(200.0, 200.0, 120.0, 90.0, (-0.1, 0.02, 0.0005, -0.0005, 0.0))


@dataclass
class EventScene:
    """Events plus one ground-truth label per event (``label_name`` column)."""
    events: EventStream
    labels: np.ndarray
    label_name: str
    duration: float
    extras: dict = field(default_factory=dict)


@dataclass
class ProjectedScene:
    tracks: list
    poses: list
    points3d: np.ndarray
    intrinsics: CameraIntrinsics


def _assemble(parts, width, height):
    """Merge (x, y, t, p, label) column tuples into one time-sorted stream."""
    x, y, t, p, labels = (np.concatenate(columns) for columns in zip(*parts))
    outside = (x < 0) | (x >= width) | (y < 0) | (y >= height)
    if outside.any():
        raise InvalidParams(f'scene does not fit a {width}x{height} sensor')
    order = np.argsort(t, kind='stable')
    events = EventStream(x=x[order], y=y[order], t=t[order], p=p[order], width=width, height=height)
    return validate_stream(events), labels[order]


def _edge_events(rng, x_of_t, t_begin, t_end, rows, rate):
    """Events of a vertical edge over ``rows`` whose column follows ``x_of_t``."""
    n = int(round((t_end - t_begin) * rate))
    t = t_begin + (np.arange(n) + 0.5) / rate + rng.uniform(-JITTER, JITTER, n)
    t = np.clip(t, t_begin, t_end)
    rows = np.asarray(rows, dtype=np.int64)
    blocks = -(-n // len(rows))
    y = np.concatenate([rng.permutation(rows) for _ in range(blocks)])[:n] if n else np.empty(0, np.int64)
    x = np.floor(x_of_t(t) + 0.5).astype(np.int64)
    return x, y, t


def gen_crossing_bands(width=128, height=128, density=2.0, seed=0, band_width=12.0, duration=0.004):
    """
    Two opposite-polarity bands crossing at the sensor centre along its diagonals.

    ``density`` is events per square pixel of band area; event times are
    uniform over ``duration``. Band A (ON) runs along the main diagonal and
    band B (OFF) along the other one. Labels mark the band segment each event
    belongs to (``BAND_A_LOW`` ... ``BAND_B_HIGH``) or ``JUNCTION`` inside the
    crossing square.
    """
    if not density > 0:
        raise InvalidParams(f'density must be positive, got {density!r}')
    rng = np.random.default_rng(seed)
    centre = np.array([width / 2.0, height / 2.0])
    half_length = (min(width, height) / 2.0 - 8.0) * math.sqrt(2.0)
    count = int(round(density * 2.0 * half_length * band_width))
    diagonal = np.array([1.0, 1.0]) / math.sqrt(2.0)
    anti = np.array([1.0, -1.0]) / math.sqrt(2.0)

    parts = []
    for polarity, along, across, low, high in (
        (Polarity.ON, diagonal, anti, BAND_A_LOW, BAND_A_HIGH),
        (Polarity.OFF, anti, diagonal, BAND_B_LOW, BAND_B_HIGH),
    ):
        s = rng.uniform(-half_length, half_length, count)
        n = rng.uniform(-band_width / 2.0, band_width / 2.0, count)
        t = rng.uniform(0.0, duration, count)
        position = centre + s[:, None] * along + n[:, None] * across
        segment = np.where(s < 0, low, high)
        segment[np.abs(s) <= band_width / 2.0] = JUNCTION
        parts.append((
            np.floor(position[:, 0]).astype(np.int64),
            np.floor(position[:, 1]).astype(np.int64),
            t,
            np.full(count, int(polarity), dtype=np.int8),
            segment,
        ))
    events, labels = _assemble(parts, width, height)
    logger.info('Crossing bands: %d events (seed %d)', len(events), seed)
    return EventScene(events=events, labels=labels, label_name='segment', duration=duration)


@dataclass(frozen=True)
class ImageShift:
    """Piecewise-linear horizontal image displacement (px) of a 2D scene over time."""
    times: tuple
    offsets: tuple

    def __call__(self, t):
        return np.interp(np.asarray(t, dtype=np.float64), self.times, self.offsets)


@dataclass(frozen=True)
class BarMotion:
    """Closed-form kinematics of the translating bar."""
    x0: float
    y0: int
    velocity: float
    length: int
    bar_width: float

    def edge_x(self, t, edge):
        offset = 0.0 if edge == 0 else -self.bar_width
        return self.x0 + offset + self.velocity * np.asarray(t, dtype=np.float64)

    def centroid(self, t, edge=0):
        """Centre of edge 0 (leading) or 1 (trailing) at time ``t``."""
        return self.edge_x(t, edge), self.y0 + (self.length - 1) / 2.0


def gen_translating_bar(
    velocity=100.0,
    length=20,
    duration=1.0,
    event_rate=30000.0,
    seed=0,
    x0=40,
    y0=80,
    bar_width=12.0,
    width=240,
    height=180,
):
    """
    A bright bar of ``length`` rows translating along x at ``velocity`` px/s.

    Labels are the edge id: 0 for the leading edge (ON when moving right), 1
    for the trailing edge. ``extras['motion'].centroid(t, edge)`` gives the
    exact edge centre and ``extras['shift']`` the image displacement.
    """
    if not event_rate > 0 or not duration > 0:
        raise InvalidParams('event_rate and duration must be positive')
    rng = np.random.default_rng(seed)
    motion = BarMotion(x0=float(x0), y0=int(y0), velocity=float(velocity), length=int(length), bar_width=bar_width)
    rows = np.arange(motion.y0, motion.y0 + motion.length)
    leading = Polarity.ON if velocity >= 0 else Polarity.OFF
    parts = []
    for edge, polarity in ((0, leading), (1, Polarity(1 - leading))):
        x, y, t = _edge_events(rng, lambda tt, e=edge: motion.edge_x(tt, e), 0.0, duration, rows, event_rate)
        parts.append((x, y, t, np.full(len(t), int(polarity), dtype=np.int8), np.full(len(t), edge)))
    events, labels = _assemble(parts, width, height)
    logger.info('Translating bar: %d events at %.1f px/s (seed %d)', len(events), velocity, seed)
    shift = ImageShift(times=(0.0, float(duration)), offsets=(0.0, float(velocity) * duration))
    return EventScene(
        events=events, labels=labels, label_name='edge', duration=duration,
        extras={'motion': motion, 'shift': shift},
    )


def gen_reversal_scene(
    velocity=100.0,
    phase_duration=0.5,
    gap=0.02,
    length=20,
    event_rate=30000.0,
    seed=0,
    x0=60,
    y0=80,
    n_edges=1,
    spacing=40,
    width=240,
    height=180,
):
    """
    Edges that move right, pause and come back left.

    The brightness step makes every edge emit ON events while moving right
    and OFF events after the reversal; no events occur during ``gap``.
    Labels are edge ids; ``extras['reversal']`` is the end of the first phase
    and ``extras['shift']`` the image displacement shared by all edges.
    """
    if n_edges < 1:
        raise InvalidParams(f'n_edges must be at least 1, got {n_edges!r}')
    rng = np.random.default_rng(seed)
    turn = x0 + velocity * phase_duration
    back_start = phase_duration + gap
    end = back_start + phase_duration
    parts = []
    for edge in range(n_edges):
        rows = np.arange(y0 + edge * spacing, y0 + edge * spacing + length)
        for polarity, begin, finish, x_of_t in (
            (Polarity.ON, 0.0, phase_duration, lambda t: x0 + velocity * t),
            (Polarity.OFF, back_start, end, lambda t: turn - velocity * (t - back_start)),
        ):
            x, y, t = _edge_events(rng, x_of_t, begin, finish, rows, event_rate)
            parts.append((x, y, t, np.full(len(t), int(polarity), dtype=np.int8), np.full(len(t), edge)))
    events, labels = _assemble(parts, width, height)
    logger.info('Reversal scene: %d edges, %d events (seed %d)', n_edges, len(events), seed)
    turned = velocity * phase_duration
    shift = ImageShift(times=(0.0, phase_duration, back_start, end), offsets=(0.0, turned, turned, 0.0))
    return EventScene(
        events=events, labels=labels, label_name='edge_id', duration=end,
        extras={'reversal': phase_duration, 'gap': gap, 'shift': shift},
    )


def pose_times(duration, rate=POSE_RATE):
    return np.arange(int(round(duration * rate)) + 1) / rate


def scene_poses(scene, intrinsics, depth=SCENE_DEPTH, rate=POSE_RATE):
    """
    Camera-to-world poses at ``rate`` Hz that explain a 2D scene's image motion.

    The scene is a fronto-parallel plane ``depth`` metres ahead; the camera
    slides along x without rotating so that the plane moves by
    ``extras['shift']`` pixels. Scenes without a shift get a static camera.
    """
    times = pose_times(math.ceil(scene.duration * rate - 1e-9) / rate, rate)
    shift = scene.extras.get('shift')
    offsets = shift(times) if shift is not None else np.zeros_like(times)
    centers_x = -offsets * depth / intrinsics.fx
    return [
        Pose(t=float(t), translation=(float(x), 0.0, 0.0), rotation=(0.0, 0.0, 0.0, 1.0))
        for t, x in zip(times, centers_x)
    ]


def camera_poses(trajectory='translation', duration=1.0, yaw_deg=0.0, rate=POSE_RATE):
    """
    Camera-to-world poses of the projected scenes.

    ``translation`` slides the camera along x from -0.5 m to 0.5 m, turning by
    ``yaw_deg`` in total; ``rotation`` keeps it at the origin and yaws from
    -10 to +10 degrees.
    """
    times = pose_times(duration, rate)
    fraction = times / duration
    if trajectory == 'translation':
        centers = np.column_stack((fraction - 0.5, np.zeros_like(times), np.zeros_like(times)))
        yaw = yaw_deg * (fraction - 0.5)
    elif trajectory == 'rotation':
        centers = np.zeros((len(times), 3))
        yaw = -10.0 + 20.0 * fraction
    else:
        raise InvalidParams(f'unknown camera trajectory {trajectory!r}')
    quats = Rotation.from_euler('y', yaw, degrees=True).as_quat()
    return [Pose(t=float(t), translation=c, rotation=q) for t, c, q in zip(times, centers, quats)]


def gen_projected_scene(
    n_points=50,
    noise=0.0,
    seed=0,
    trajectory='translation',
    duration=1.0,
    intrinsics=None,
    points3d=None,
    sample_period=0.005,
    yaw_deg=0.0,
):
    """
    Tracks of static 3D points projected through a moving camera.

    ``noise`` is the RMS pixel displacement of an observation (each axis gets
    Gaussian noise of ``noise / sqrt(2)``). Samples start half a period after
    the first pose; track ``chain_id`` is the point index.
    """
    rng = np.random.default_rng(seed)
    intrinsics = intrinsics or PROJECTED_INTRINSICS
    if points3d is None:
        points3d = np.column_stack((
            rng.uniform(-0.5, 0.5, n_points),
            rng.uniform(-0.3, 0.3, n_points),
            rng.uniform(2.0, 4.0, n_points),
        ))
    points3d = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    poses = camera_poses(trajectory, duration=duration, yaw_deg=yaw_deg)
    path = Trajectory(poses)
    times = 0.5 * sample_period + np.arange(int(math.floor((duration - 0.5 * sample_period) / sample_period)) + 1) * sample_period
    times = times[times <= duration]
    rotations, centers = path.at(times)

    tracks = []
    for i, point in enumerate(points3d):
        pixels, _ = project(point, rotations, centers, intrinsics)
        if noise > 0:
            pixels = pixels + rng.normal(0.0, noise / math.sqrt(2.0), pixels.shape)
        tracks.append(Track(chain_id=i, points=np.column_stack((times, pixels))))
    logger.info('Projected scene (%s): %d points, %d samples each, noise %.2f px', trajectory, len(tracks), len(times), noise)
    return ProjectedScene(tracks=tracks, poses=poses, points3d=points3d, intrinsics=intrinsics)


def default_intrinsics(width, height):
    return CameraIntrinsics(200.0, 200.0, width / 2.0, height / 2.0)


def write_event_scene(scene, out_dir):
    """Write events.txt, ground_truth.csv, poses.txt and calib.txt; returns the paths."""
    out_dir = Path(out_dir)
    events = scene.events
    intrinsics = default_intrinsics(events.width, events.height)
    paths = {name: out_dir / name for name in EVENT_SCENE_FILES if name != 'centroids.csv'}
    write_events(events, paths['events.txt'])
    with open(paths['ground_truth.csv'], 'w', encoding='utf-8', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['t', 'x', 'y', 'p', scene.label_name])
        for t, x, y, p, label in zip(events.t, events.x, events.y, events.p, scene.labels):
            writer.writerow([f'{t:.9f}', x, y, p, label])
    write_poses(scene_poses(scene, intrinsics), paths['poses.txt'])
    write_calib(intrinsics, paths['calib.txt'])
    motion = scene.extras.get('motion')
    if motion is not None:
        paths['centroids.csv'] = out_dir / 'centroids.csv'
        times = np.arange(int(scene.duration / 0.005) + 1) * 0.005
        with open(paths['centroids.csv'], 'w', encoding='utf-8', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(['edge', 't', 'x', 'y'])
            for edge in (0, 1):
                xs, y = motion.centroid(times, edge)
                for t, x in zip(times, xs):
                    writer.writerow([edge, f'{t:.9g}', f'{x:.9g}', f'{y:.9g}'])
    return paths


def write_projected_scene(scene, out_dir):
    """Write tracks.csv, points3d.csv, poses.txt and calib.txt; returns the paths."""
    out_dir = Path(out_dir)
    paths = {name: out_dir / name for name in PROJECTED_SCENE_FILES}
    write_tracks(scene.tracks, paths['tracks.csv'])
    with open(paths['points3d.csv'], 'w', encoding='utf-8', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['chain_id', 'x', 'y', 'z'])
        for i, point in enumerate(scene.points3d):
            writer.writerow([i, *(f'{v:.12g}' for v in point)])
    write_poses(scene.poses, paths['poses.txt'])
    write_calib(scene.intrinsics, paths['calib.txt'])
    return paths
