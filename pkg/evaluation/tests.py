import math
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from scipy.spatial.transform import Rotation

from core.exceptions import BehindCamera, InsufficientObservations, NoConvergence, OutOfRange
from core.params import EcdtParams
from core.types import CameraIntrinsics, Pose, Track
from synthetic.scenes import (
    PROJECTED_INTRINSICS,
    default_intrinsics,
    gen_projected_scene,
    gen_reversal_scene,
    scene_poses,
)
from tracking.pipeline import run_pipeline

from .geometry import (
    Trajectory,
    distort_normalized,
    interpolate_pose,
    normalized_to_pixels,
    project,
    undistort_point,
    undistort_points,
)
from .statistics import (
    TrackEvaluation,
    average_summaries,
    compare_summaries,
    evaluate_tracks,
    read_per_track,
    sample_std,
    summarize,
    write_per_track,
)
from .triangulation import baseline_parallax_deg, linear_triangulation, triangulate


def identity_pose(t, center=(0.0, 0.0, 0.0)):
    return Pose(t=t, translation=center, rotation=(0.0, 0.0, 0.0, 1.0))


def moved_rigidly(poses, rotation, offset):
    """Poses re-expressed in a world frame rotated by ``rotation`` and shifted by ``offset``."""
    moved = []
    for pose in poses:
        center = rotation.apply(pose.translation) + offset
        quat = (rotation * Rotation.from_quat(pose.rotation)).as_quat()
        moved.append(Pose(t=pose.t, translation=center, rotation=quat / np.linalg.norm(quat)))
    return moved


def reprojection_sse(point, track, poses, intrinsics):
    rotations, centers = Trajectory(poses).at(track.t)
    pixels, _ = project(point, rotations, centers, intrinsics)
    return float(np.square(track.xy - pixels).sum())


class InterpolatePoseTests(SimpleTestCase):
    """Pose lookup between ground-truth samples"""

    def setUp(self):
        quarter_turn = Rotation.from_euler('z', 90, degrees=True).as_quat()
        self.poses = [
            identity_pose(0.0),
            Pose(t=1.0, translation=(2.0, 0.0, -4.0), rotation=quarter_turn),
        ]

    def test_sample_time_returns_sample(self):
        self.assertEqual(interpolate_pose(self.poses, 1.0), self.poses[1])
        self.assertEqual(interpolate_pose(self.poses, 0.0), self.poses[0])

    def test_midpoint(self):
        pose = interpolate_pose(self.poses, 0.5)
        np.testing.assert_allclose(pose.translation, (1.0, 0.0, -2.0), atol=1e-12)
        angle = Rotation.from_quat(pose.rotation).magnitude()
        self.assertAlmostEqual(math.degrees(angle), 45.0, places=9)

    def test_outside_trajectory(self):
        with self.assertRaises(OutOfRange):
            interpolate_pose(self.poses, 1.0001)
        with self.assertRaises(OutOfRange):
            interpolate_pose(self.poses, -0.1)

    def test_single_pose_trajectory(self):
        rotations, centers = Trajectory([identity_pose(0.0, (1.0, 2.0, 3.0))]).at([0.0, 0.0])
        np.testing.assert_array_equal(centers, [[1.0, 2.0, 3.0]] * 2)
        np.testing.assert_allclose(rotations[1], np.eye(3))


class UndistortTests(SimpleTestCase):
    """Inversion of the radial-tangential lens model"""

    def test_zero_distortion_is_pinhole(self):
        intrinsics = CameraIntrinsics(200.0, 250.0, 120.0, 90.0)
        self.assertEqual(undistort_point((320.0, 340.0), intrinsics), (1.0, 1.0))

    def test_principal_point_maps_to_origin(self):
        self.assertEqual(undistort_point((120.0, 90.0), PROJECTED_INTRINSICS), (0.0, 0.0))

    def test_round_trip(self):
        rng = np.random.default_rng(9)
        normalized = rng.uniform(-0.5, 0.5, (100, 2))
        pixels = normalized_to_pixels(distort_normalized(normalized, PROJECTED_INTRINSICS.distortion), PROJECTED_INTRINSICS)
        np.testing.assert_allclose(undistort_points(pixels, PROJECTED_INTRINSICS), normalized, atol=1e-6)

    def test_strong_distortion_fails(self):
        intrinsics = CameraIntrinsics(200.0, 200.0, 120.0, 90.0, (-0.9, 0.0, 0.0, 0.0, 0.0))
        with self.assertRaises(NoConvergence):
            undistort_points([(720.0, 690.0)], intrinsics)


class TriangulationTests(SimpleTestCase):
    """Point estimates and reprojection error of single tracks"""

    def test_noise_free_tracks(self):
        scene = gen_projected_scene(n_points=50, seed=1)
        for track, truth in zip(scene.tracks, scene.points3d):
            result = triangulate(track, scene.poses, scene.intrinsics)
            self.assertFalse(result.degenerate)
            self.assertLess(result.rmse, 1e-6)
            self.assertLess(np.linalg.norm(result.point3d - truth), 1e-4)
            self.assertEqual(result.n_observations, len(track))

    def test_noise_level_is_recovered(self):
        scene = gen_projected_scene(n_points=100, noise=0.5, seed=2)
        errors = [triangulate(track, scene.poses, scene.intrinsics).rmse for track in scene.tracks]
        self.assertTrue(0.3 <= np.median(errors) <= 0.7)

    def test_literal_rmse(self):
        scene = gen_projected_scene(n_points=3, noise=0.5, seed=3)
        for track in scene.tracks:
            result = triangulate(track, scene.poses, scene.intrinsics)
            n = len(track)
            self.assertAlmostEqual(result.rmse_literal, result.rmse * math.sqrt(n) / n, places=12)

    def test_pure_rotation_is_degenerate(self):
        scene = gen_projected_scene(n_points=20, trajectory='rotation', seed=4)
        for track in scene.tracks:
            result = triangulate(track, scene.poses, scene.intrinsics)
            self.assertTrue(result.degenerate)
            self.assertTrue(np.isfinite(result.point3d).all())

    def test_noisy_pure_rotation_is_degenerate(self):
        for noise in (0.5, 1.0):
            scene = gen_projected_scene(n_points=50, trajectory='rotation', noise=noise, seed=4)
            for track in scene.tracks:
                result = triangulate(track, scene.poses, scene.intrinsics)
                self.assertTrue(result.degenerate)
                self.assertTrue(np.isfinite(result.point3d).all())

    def test_baseline_parallax(self):
        centers = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.0, 0.0]])
        self.assertAlmostEqual(baseline_parallax_deg(np.array([0.5, 0.0, 0.5]), centers), 90.0, places=9)
        self.assertEqual(baseline_parallax_deg(np.array([0.0, 0.0, 5.0]), np.zeros((4, 3))), 0.0)
        self.assertEqual(baseline_parallax_deg(np.zeros(3), centers), 0.0)

    def test_invariant_under_rigid_world_change(self):
        scene = gen_projected_scene(n_points=10, noise=0.5, seed=5)
        rotation = Rotation.from_rotvec([0.3, -0.5, 0.2])
        offset = np.array([1.0, 2.0, 3.0])
        moved = moved_rigidly(scene.poses, rotation, offset)
        for track in scene.tracks:
            before = triangulate(track, scene.poses, scene.intrinsics)
            after = triangulate(track, moved, scene.intrinsics)
            self.assertAlmostEqual(after.rmse, before.rmse, delta=1e-9)
            np.testing.assert_allclose(after.point3d, rotation.apply(before.point3d) + offset, atol=1e-6)

    def test_refinement_never_increases_error(self):
        scene = gen_projected_scene(n_points=20, noise=1.0, seed=6)
        trajectory = Trajectory(scene.poses)
        for track in scene.tracks:
            rotations, centers = trajectory.at(track.t)
            linear, _ = linear_triangulation(undistort_points(track.xy, scene.intrinsics), rotations, centers)
            result = triangulate(track, scene.poses, scene.intrinsics)
            refined = result.rmse ** 2 * len(track)
            self.assertLessEqual(refined, reprojection_sse(linear, track, scene.poses, scene.intrinsics) + 1e-9)

    def test_too_few_observations(self):
        scene = gen_projected_scene(n_points=1, seed=7)
        single = Track(chain_id=0, points=scene.tracks[0].points[:1])
        with self.assertRaises(InsufficientObservations):
            triangulate(single, scene.poses, scene.intrinsics)

    def test_point_behind_camera(self):
        scene = gen_projected_scene(points3d=[(0.1, 0.0, -3.0)], seed=8)
        with self.assertRaises(BehindCamera):
            triangulate(scene.tracks[0], scene.poses, scene.intrinsics)


class SummaryTests(SimpleTestCase):
    """Threshold filtering and the aggregate statistics"""

    def evaluations(self):
        return [
            TrackEvaluation(chain_id=0, feature_age=1.0, rmse=2.0),
            TrackEvaluation(chain_id=1, feature_age=2.0, rmse=4.0),
            TrackEvaluation(chain_id=2, feature_age=4.0, rmse=6.0),
            TrackEvaluation(chain_id=3, feature_age=9.0, rmse=0.1, degenerate=True),
        ]

    def test_threshold_filter_and_statistics(self):
        summary = summarize(self.evaluations(), [5.0])[0]
        self.assertEqual((summary.kept, summary.total), (2, 4))
        self.assertEqual(summary.mean_rmse, 3.0)
        self.assertEqual(summary.mean_age, 1.5)
        self.assertEqual(summary.median_age, 1.5)
        self.assertAlmostEqual(summary.std_rmse, math.sqrt(2.0), places=12)

    def test_age_spread_and_median_error(self):
        summary = summarize(self.evaluations(), [5.0, 7.0])
        self.assertAlmostEqual(summary[0].std_age, 0.7071067811865476, places=12)
        self.assertEqual(summary[0].median_rmse, 3.0)
        self.assertAlmostEqual(summary[1].std_age, 1.5275252316519468, places=12)
        self.assertEqual(summary[1].median_rmse, 4.0)
        self.assertTrue(math.isnan(summarize(self.evaluations(), [1.0])[0].median_rmse))

    def test_kept_count_grows_with_threshold(self):
        kept = [s.kept for s in summarize(self.evaluations(), [1, 3, 5, 7])]
        self.assertEqual(kept, [0, 1, 2, 3])
        self.assertEqual(kept, sorted(kept))

    def test_empty_selection(self):
        summary = summarize(self.evaluations(), [1.0])[0]
        self.assertEqual(summary.kept, 0)
        self.assertTrue(math.isnan(summary.mean_age))
        self.assertTrue(math.isnan(summary.std_rmse))

    def test_sample_std(self):
        self.assertEqual(sample_std([3.0]), 0.0)
        self.assertTrue(math.isnan(sample_std([])))
        self.assertAlmostEqual(sample_std([1.0, 2.0, 3.0, 4.0]), 1.2909944487358056, places=12)

    def test_average_and_comparison(self):
        first = summarize(self.evaluations(), [5.0])
        second = summarize(self.evaluations()[:1], [5.0])
        averaged = average_summaries([first, second])[0]
        self.assertEqual((averaged.kept, averaged.total), (3, 5))
        self.assertEqual(averaged.mean_age, 1.25)
        change = compare_summaries(first, second)[0]
        self.assertEqual(change['mean_age'], 50.0)
        self.assertEqual(change['mean_rmse'], 50.0)
        self.assertEqual(change['median_rmse'], 50.0)
        self.assertEqual(averaged.median_rmse, 2.5)

    def test_outside_pose_coverage_names_track(self):
        scene = gen_projected_scene(n_points=2, seed=1)
        late = Track(chain_id=7, points=[(0.5, 100.0, 90.0), (1.5, 101.0, 90.0)])
        with self.assertRaises(OutOfRange) as ctx:
            evaluate_tracks(scene.tracks + [late], scene.poses, scene.intrinsics, [3.0])
        self.assertEqual(ctx.exception.chain_id, 7)
        self.assertIn('track 7', str(ctx.exception))

    def test_skipped_tracks_count_in_total(self):
        scene = gen_projected_scene(points3d=[(0.0, 0.0, 3.0), (0.1, 0.0, -3.0)], seed=2)
        report = evaluate_tracks(scene.tracks, scene.poses, scene.intrinsics, [3.0])
        self.assertEqual(report.total, 2)
        self.assertEqual([chain for chain, _ in report.skipped], [1])
        self.assertEqual(report.summaries[0].kept, 1)
        self.assertEqual(report.summaries[0].total, 2)

    def test_worker_count_does_not_change_results(self):
        scene = gen_projected_scene(n_points=12, noise=0.5, seed=3)
        one = evaluate_tracks(scene.tracks, scene.poses, scene.intrinsics, [3.0], workers=1)
        many = evaluate_tracks(scene.tracks, scene.poses, scene.intrinsics, [3.0], workers=6)
        self.assertEqual([e.rmse for e in one.evaluations], [e.rmse for e in many.evaluations])

    def test_per_track_file_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'per_track.csv'
            write_per_track(self.evaluations(), path, header='# thresholds=3,5,7\n', literal=True)
            again = read_per_track(path)
        self.assertEqual([e.chain_id for e in again], [0, 1, 2, 3])
        self.assertEqual([e.degenerate for e in again], [False, False, False, True])
        self.assertEqual(again[1].rmse, 4.0)


class EventSceneEvaluationTests(SimpleTestCase):
    """Tracks extracted from synthetic events, scored against the scene's camera"""

    def test_ht_matching_lengthens_kept_tracks(self):
        scene = gen_reversal_scene(n_edges=3, seed=2)
        intrinsics = default_intrinsics(240, 180)
        trajectory = Trajectory(scene_poses(scene, intrinsics))
        thresholds = [3.0, 5.0, 7.0]
        merged = run_pipeline(scene.events, EcdtParams(), sample_period=0.005)
        split = run_pipeline(scene.events, EcdtParams(), use_ht=False, sample_period=0.005)
        with_ht = evaluate_tracks(merged.tracks, trajectory, intrinsics, thresholds).summaries
        without_ht = evaluate_tracks(split.tracks, trajectory, intrinsics, thresholds).summaries
        for ht, plain in zip(with_ht, without_ht):
            self.assertEqual(ht.kept, 3)
            self.assertGreater(plain.kept, 0)
            self.assertGreaterEqual(ht.mean_age, 1.5 * plain.mean_age)


class EvaluateCommandTests(SimpleTestCase):
    """The evaluate and stats management commands"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        call_command('synth', 'projected', str(self.dir / 'clean'), '--n-points', '20', stdout=StringIO())
        call_command(
            'synth', 'projected', str(self.dir / 'noisy'), '--n-points', '20', '--noise', '2.0', '--seed', '1',
            stdout=StringIO(),
        )

    def tearDown(self):
        self.tmp.cleanup()

    def evaluate(self, scene, *extra):
        out = StringIO()
        scene_dir = self.dir / scene
        call_command(
            'evaluate', str(scene_dir / 'tracks.csv'), str(scene_dir / 'poses.txt'), str(scene_dir / 'calib.txt'),
            *extra, stdout=out,
        )
        return out.getvalue()

    def test_summary_and_per_track_outputs(self):
        output = self.evaluate(
            'clean', '--per-track-out', str(self.dir / 'per_track.csv'), '--summary-out', str(self.dir / 'summary.csv'),
            '--thresholds', '1,3', '--literal-rmse', '--print-params',
        )
        self.assertIn('Evaluated 20 tracks', output)
        per_track = (self.dir / 'per_track.csv').read_text()
        self.assertIn('chain_id,age_s,rmse_px,n_obs,degenerate,rmse_literal_px\n', per_track)
        self.assertTrue(per_track.startswith('# tracks='))
        rows = [line for line in (self.dir / 'summary.csv').read_text().splitlines() if not line.startswith('#')]
        self.assertEqual(
            rows[0],
            'threshold_px,kept,total,mean_age_s,median_age_s,std_age_s,mean_rmse_px,median_rmse_px,std_rmse_px',
        )
        self.assertEqual(len(rows[1].split(',')), 9)
        self.assertTrue(rows[1].startswith('1,20,20,'))
        self.assertTrue(rows[2].startswith('3,20,20,'))

    def test_rotation_only_scene_keeps_nothing(self):
        call_command('synth', 'projected-rotation', str(self.dir / 'rotation'), stdout=StringIO())
        self.evaluate('rotation', '--summary-out', str(self.dir / 'summary.csv'))
        rows = [line for line in (self.dir / 'summary.csv').read_text().splitlines() if not line.startswith('#')]
        self.assertTrue(all(row.split(',')[1] == '0' for row in rows[1:]))

    def test_bad_thresholds_are_usage_errors(self):
        with self.assertRaises(CommandError):
            self.evaluate('clean', '--thresholds', '3,-1')

    def test_track_outside_poses_is_numeric_error(self):
        tracks = self.dir / 'clean' / 'tracks.csv'
        with open(tracks, 'a', encoding='utf-8') as handle:
            handle.write('99,0.5,100,90\n99,3.0,101,90\n')
        out = self.dir / 'summary.csv'
        with self.assertRaises(CommandError) as ctx:
            self.evaluate('clean', '--summary-out', str(out))
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertIn('track 99', str(ctx.exception))
        self.assertFalse(out.exists())

    def test_stats_average_and_baseline(self):
        for scene in ('clean', 'noisy'):
            self.evaluate(scene, '--per-track-out', str(self.dir / f'{scene}.csv'))
        out = StringIO()
        call_command(
            'stats', str(self.dir / 'clean.csv'), str(self.dir / 'noisy.csv'),
            '--baseline', str(self.dir / 'clean.csv'), '--thresholds', '5', stdout=out,
        )
        text = out.getvalue()
        self.assertIn('Average over 2 sequences', text)
        self.assertIn('Change against baseline', text)

    def test_stats_against_itself_shows_no_change(self):
        self.evaluate('noisy', '--per-track-out', str(self.dir / 'noisy.csv'))
        out = StringIO()
        call_command('stats', str(self.dir / 'noisy.csv'), '--baseline', str(self.dir / 'noisy.csv'), stdout=out)
        self.assertIn('+0.0%', out.getvalue())
