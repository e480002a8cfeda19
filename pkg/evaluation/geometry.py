"""
Camera geometry for the reprojection evaluation.

Poses are camera-to-world: ``translation`` is the camera centre and
``rotation`` the camera orientation in the world frame, so a world point X
has camera coordinates R^T (X - C). The lens follows the 5-coefficient
radial-tangential model (k1, k2, p1, p2, k3).
"""
import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from core.exceptions import NoConvergence, OutOfRange
from core.types import Pose

UNDISTORT_MAX_ITER = 50
UNDISTORT_TOL = 1e-12
# Normalised-units residual above which undistortion counts as failed
UNDISTORT_ACCEPT = 1e-8


class Trajectory:
    """Time-sorted poses prepared for repeated interpolation."""

    def __init__(self, poses):
        poses = list(poses)
        if not poses:
            raise OutOfRange(float('nan'))
        self.poses = poses
        self.times = np.array([p.t for p in poses], dtype=np.float64)
        self.centers = np.array([p.translation for p in poses], dtype=np.float64)
        self.rotations = Rotation.from_quat(np.array([p.rotation for p in poses], dtype=np.float64))
        self._slerp = Slerp(self.times, self.rotations) if len(poses) > 1 else None

    def covers(self, t):
        return self.times[0] <= t <= self.times[-1]

    def check_coverage(self, times, chain_id=None):
        times = np.asarray(times, dtype=np.float64)
        outside = np.flatnonzero((times < self.times[0]) | (times > self.times[-1]))
        if len(outside):
            raise OutOfRange(float(times[outside[0]]), chain_id=chain_id)

    def at(self, times, chain_id=None):
        """
        Camera-to-world rotation matrices and centres at ``times``.

        Translation is interpolated linearly, rotation by slerp between the
        bracketing samples.
        """
        times = np.atleast_1d(np.asarray(times, dtype=np.float64))
        self.check_coverage(times, chain_id=chain_id)
        if self._slerp is None:
            matrices = np.repeat(self.rotations.as_matrix().reshape(1, 3, 3), len(times), axis=0)
            return matrices, np.repeat(self.centers[:1], len(times), axis=0)
        centers = np.column_stack([np.interp(times, self.times, self.centers[:, i]) for i in range(3)])
        return self._slerp(times).as_matrix().reshape(-1, 3, 3), centers


def interpolate_pose(poses, t):
    """Pose at time ``t``; a sample time returns that sample unchanged."""
    trajectory = poses if isinstance(poses, Trajectory) else Trajectory(poses)
    if not trajectory.covers(t):
        raise OutOfRange(t)
    hit = int(np.searchsorted(trajectory.times, t, side='left'))
    if hit < len(trajectory.times) and trajectory.times[hit] == t:
        return trajectory.poses[hit]
    matrices, centers = trajectory.at([t])
    quat = Rotation.from_matrix(matrices[0]).as_quat()
    return Pose(t=t, translation=centers[0], rotation=quat / np.linalg.norm(quat))


def distort_normalized(points, distortion):
    """Apply the radial-tangential model to normalised image coordinates (N x 2)."""
    k1, k2, p1, p2, k3 = distortion
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x, y = points[:, 0], points[:, 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.column_stack((xd, yd))


def normalized_to_pixels(points, intrinsics):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return np.column_stack((
        intrinsics.fx * points[:, 0] + intrinsics.cx,
        intrinsics.fy * points[:, 1] + intrinsics.cy,
    ))


def undistort_points(pixels, intrinsics):
    """
    Normalised, undistorted coordinates of pixel positions (N x 2).

    Fixed-point inversion of the forward model; raises ``NoConvergence`` when
    a residual stays above 1e-8 after 50 iterations.
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    target = np.column_stack((
        (pixels[:, 0] - intrinsics.cx) / intrinsics.fx,
        (pixels[:, 1] - intrinsics.cy) / intrinsics.fy,
    ))
    k1, k2, p1, p2, k3 = intrinsics.distortion
    if not any(intrinsics.distortion):
        return target
    estimate = target.copy()
    residual = np.zeros(len(target))
    for _ in range(UNDISTORT_MAX_ITER):
        residual = np.abs(distort_normalized(estimate, intrinsics.distortion) - target).max(axis=1)
        if (residual < UNDISTORT_TOL).all():
            break
        x, y = estimate[:, 0], estimate[:, 1]
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        estimate = np.column_stack(((target[:, 0] - dx) / radial, (target[:, 1] - dy) / radial))
    residual = np.abs(distort_normalized(estimate, intrinsics.distortion) - target).max(axis=1)
    failed = np.flatnonzero(~(residual < UNDISTORT_ACCEPT))
    if len(failed):
        raise NoConvergence(pixels[failed[0]], float(residual[failed[0]]))
    return estimate


def undistort_point(point, intrinsics):
    """Normalised undistorted (x, y) of one pixel position."""
    x, y = undistort_points([point], intrinsics)[0]
    return float(x), float(y)


def world_to_camera(points, rotations, centers):
    """Camera coordinates R^T (X - C); broadcasts over views."""
    points = np.asarray(points, dtype=np.float64)
    return np.einsum('nji,nj->ni', rotations, points - centers)


def project(points, rotations, centers, intrinsics):
    """
    Pixel projections (with distortion) and depths of world points in each view.

    ``points`` is (N, 3) or (3,) and is paired with N views.
    """
    camera = world_to_camera(np.broadcast_to(points, centers.shape), rotations, centers)
    depth = camera[:, 2]
    normalized = camera[:, :2] / depth[:, None]
    pixels = normalized_to_pixels(distort_normalized(normalized, intrinsics.distortion), intrinsics)
    return pixels, depth
