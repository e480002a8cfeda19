"""
Triangulation of a feature track against ground-truth camera poses.

A linear solution (stacked projection constraints in normalised coordinates)
initialises a Levenberg-Marquardt refinement of the pixel reprojection
error, measured in distorted pixel space where tracks live.
"""
from typing import NamedTuple

import numpy as np
from scipy.optimize import least_squares

from core.exceptions import BehindCamera, InsufficientObservations

from .geometry import Trajectory, project, undistort_points

MIN_PARALLAX_DEG = 0.5
RANK_TOL = 1e-10
# Camera centres used for the parallax estimate of long tracks
PARALLAX_SAMPLES = 512
# Depth (m) along the mean ray for tracks whose geometry fixes no depth
DEGENERATE_DEPTH = 10.0


class Triangulation(NamedTuple):
    point3d: np.ndarray
    rmse: float
    degenerate: bool
    rmse_literal: float
    n_observations: int


def baseline_parallax_deg(point, centers):
    """
    Largest angle subtended at ``point`` by any two camera centres, in degrees.

    Zero when the point coincides with a centre.
    """
    if len(centers) > PARALLAX_SAMPLES:
        centers = centers[np.linspace(0, len(centers) - 1, PARALLAX_SAMPLES).astype(int)]
    offsets = point - centers
    lengths = np.linalg.norm(offsets, axis=1)
    if not np.all(lengths > 0):
        return 0.0
    directions = offsets / lengths[:, None]
    cosines = np.clip(directions @ directions.T, -1.0, 1.0)
    return float(np.degrees(np.arccos(cosines.min())))


def linear_triangulation(normalized, rotations, centers):
    """
    Homogeneous least-squares point from normalised observations.

    Returns ``(point, rank_deficient)``; ``point`` is None at infinity.
    """
    rt = np.transpose(rotations, (0, 2, 1))
    projections = np.concatenate([rt, -np.einsum('nij,nj->ni', rt, centers)[:, :, None]], axis=2)
    rows_x = normalized[:, :1] * projections[:, 2] - projections[:, 0]
    rows_y = normalized[:, 1:] * projections[:, 2] - projections[:, 1]
    system = np.concatenate([rows_x, rows_y])
    system /= np.linalg.norm(system, axis=1, keepdims=True)
    _, singular, vt = np.linalg.svd(system)
    rank_deficient = singular[-2] < RANK_TOL * singular[0]
    homogeneous = vt[-1]
    if abs(homogeneous[3]) < 1e-12 * np.linalg.norm(homogeneous):
        return None, rank_deficient
    return homogeneous[:3] / homogeneous[3], rank_deficient


def _reprojection_distances(point, observed, rotations, centers, intrinsics):
    pixels, depth = project(point, rotations, centers, intrinsics)
    return np.linalg.norm(observed - pixels, axis=1), depth


def _refine(point, observed, rotations, centers, intrinsics):
    """Levenberg-Marquardt on pixel residuals; keeps ``point`` unless the error drops."""
    initial = np.square(_reprojection_distances(point, observed, rotations, centers, intrinsics)[0]).sum()

    def residuals(candidate):
        pixels, _ = project(candidate, rotations, centers, intrinsics)
        return np.nan_to_num((observed - pixels).ravel(), nan=1e6, posinf=1e6, neginf=-1e6)

    refined = least_squares(residuals, point, method='lm', xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=400)
    if np.all(np.isfinite(refined.x)) and 2.0 * refined.cost <= initial:
        return refined.x
    return point


def triangulate(track, poses, intrinsics):
    """
    3D point minimising the track's reprojection error.

    ``rmse`` is sqrt(sum d^2 / N) in pixels; ``rmse_literal`` is
    sqrt(sum d^2) / N. Tracks whose camera centres subtend less than 0.5 degrees
    at the linear estimate, or whose linear system is rank-deficient, are
    flagged degenerate and not refined.
    """
    n = len(track)
    if n < 2:
        raise InsufficientObservations(n)
    trajectory = poses if isinstance(poses, Trajectory) else Trajectory(poses)
    rotations, centers = trajectory.at(track.t, chain_id=track.chain_id)
    observed = np.asarray(track.xy, dtype=np.float64)
    normalized = undistort_points(observed, intrinsics)

    rays = np.einsum('nij,nj->ni', rotations, np.column_stack((normalized, np.ones(n))))
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    point, rank_deficient = linear_triangulation(normalized, rotations, centers)
    degenerate = bool(
        rank_deficient or point is None or baseline_parallax_deg(point, centers) < MIN_PARALLAX_DEG
    )

    if degenerate:
        if point is None or (world_depths(point, rotations, centers) <= 0).sum() * 2 > n:
            mean_ray = rays.mean(axis=0)
            point = centers.mean(axis=0) + DEGENERATE_DEPTH * mean_ray / np.linalg.norm(mean_ray)
    else:
        behind = int((world_depths(point, rotations, centers) <= 0).sum())
        if behind * 2 > n:
            raise BehindCamera(behind, n)
        # Views with the point behind them have no usable reprojection to refine
        if behind == 0:
            point = _refine(point, observed, rotations, centers, intrinsics)
            behind = int((world_depths(point, rotations, centers) <= 0).sum())
            if behind * 2 > n:
                raise BehindCamera(behind, n)

    distances, _ = _reprojection_distances(point, observed, rotations, centers, intrinsics)
    squared = float(np.square(distances).sum())
    return Triangulation(
        point3d=np.asarray(point, dtype=np.float64),
        rmse=float(np.sqrt(squared / n)),
        degenerate=degenerate,
        rmse_literal=float(np.sqrt(squared) / n),
        n_observations=n,
    )


def world_depths(point, rotations, centers):
    return np.einsum('nji,nj->ni', rotations, point - centers)[:, 2]
