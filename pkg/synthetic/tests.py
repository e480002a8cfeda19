import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from core.io import read_calib, read_events, read_poses, read_tracks
from evaluation.geometry import Trajectory, project

from .scenes import (
    BAND_A_HIGH,
    BAND_A_LOW,
    BAND_B_HIGH,
    BAND_B_LOW,
    EVENT_SCENE_FILES,
    JUNCTION,
    PROJECTED_SCENE_FILES,
    SCENE_DEPTH,
    default_intrinsics,
    gen_crossing_bands,
    gen_projected_scene,
    gen_reversal_scene,
    gen_translating_bar,
    scene_poses,
    write_event_scene,
)


class CrossingBandsTests(SimpleTestCase):
    """Two opposite-polarity bands over a shared junction"""

    def test_segments_follow_polarity(self):
        scene = gen_crossing_bands(seed=2)
        on = scene.events.p == 1
        self.assertEqual(set(scene.labels[on].tolist()), {BAND_A_LOW, BAND_A_HIGH, JUNCTION})
        self.assertEqual(set(scene.labels[~on].tolist()), {BAND_B_LOW, BAND_B_HIGH, JUNCTION})
        self.assertEqual(int(on.sum()), int((~on).sum()))

    def test_events_fit_the_sensor_and_are_sorted(self):
        scene = gen_crossing_bands(width=128, height=128, seed=5)
        self.assertTrue((np.diff(scene.events.t) >= 0).all())
        self.assertTrue((scene.events.x < 128).all() and (scene.events.y < 128).all())
        self.assertTrue((scene.events.t <= 0.004).all())

    def test_density_scales_event_count(self):
        sparse = gen_crossing_bands(density=1.0)
        dense = gen_crossing_bands(density=2.0)
        self.assertAlmostEqual(len(dense.events) / len(sparse.events), 2.0, delta=0.01)


class TranslatingBarTests(SimpleTestCase):
    """Leading and trailing edges of a moving bar"""

    def test_edge_polarity_follows_direction(self):
        right = gen_translating_bar(duration=0.1)
        self.assertTrue((right.events.p[right.labels == 0] == 1).all())
        self.assertTrue((right.events.p[right.labels == 1] == 0).all())
        left = gen_translating_bar(velocity=-100.0, x0=150, duration=0.1)
        self.assertTrue((left.events.p[left.labels == 0] == 0).all())

    def test_centroid(self):
        motion = gen_translating_bar().extras['motion']
        x0, y = motion.centroid(0.0)
        x1, _ = motion.centroid(0.5)
        self.assertEqual(x1 - x0, 50.0)
        self.assertEqual(y, 89.5)
        self.assertEqual(motion.centroid(0.0, edge=1)[0], x0 - 12.0)

    def test_static_bar(self):
        scene = gen_translating_bar(velocity=0.0, duration=0.2)
        motion = scene.extras['motion']
        self.assertEqual(motion.centroid(0.0), motion.centroid(0.2))
        self.assertEqual(set(scene.events.x[scene.labels == 0].tolist()), {40})

    def test_event_rate(self):
        scene = gen_translating_bar(duration=0.5, event_rate=10000.0)
        self.assertEqual(len(scene.events), 2 * 5000)
        self.assertEqual(set(scene.events.y.tolist()), set(range(80, 100)))


class ReversalSceneTests(SimpleTestCase):
    """Edges that flip polarity when they turn back"""

    def test_polarity_flips_at_reversal(self):
        scene = gen_reversal_scene(seed=1)
        reversal, gap = scene.extras['reversal'], scene.extras['gap']
        t, p = scene.events.t, scene.events.p
        self.assertTrue((p[t <= reversal] == 1).all())
        self.assertTrue((p[t >= reversal + gap] == 0).all())
        self.assertFalse(((t > reversal) & (t < reversal + gap)).any())
        self.assertAlmostEqual(scene.duration, 1.02)

    def test_edges_come_back(self):
        scene = gen_reversal_scene(seed=2)
        t, x = scene.events.t, scene.events.x
        self.assertLessEqual(abs(int(x[t.argmax()]) - int(x[t.argmin()])), 1)
        self.assertEqual(int(x.max()), 110)

    def test_several_edges(self):
        scene = gen_reversal_scene(n_edges=3, seed=3)
        self.assertEqual(set(scene.labels.tolist()), {0, 1, 2})
        for edge in range(3):
            rows = scene.events.y[scene.labels == edge]
            self.assertEqual((rows.min(), rows.max()), (80 + 40 * edge, 99 + 40 * edge))

    def test_same_seed_same_scene(self):
        first, second = gen_reversal_scene(seed=4), gen_reversal_scene(seed=4)
        np.testing.assert_array_equal(first.events.t, second.events.t)
        np.testing.assert_array_equal(first.events.x, second.events.x)
        np.testing.assert_array_equal(first.labels, second.labels)
        self.assertFalse(np.array_equal(first.events.t, gen_reversal_scene(seed=5).events.t))


class ScenePoseTests(SimpleTestCase):
    """Camera poses that explain the image motion of 2D scenes"""

    def test_reversal_camera_slides_and_returns(self):
        scene = gen_reversal_scene(seed=1)
        poses = scene_poses(scene, default_intrinsics(240, 180))
        by_time = {round(pose.t, 6): pose for pose in poses}
        self.assertAlmostEqual(by_time[0.5].translation[0], -0.5, places=12)
        self.assertAlmostEqual(by_time[0.52].translation[0], -0.5, places=12)
        self.assertAlmostEqual(poses[-1].translation[0], 0.0, places=12)
        self.assertAlmostEqual(poses[-1].t, 1.02, places=12)
        self.assertTrue(all(pose.rotation == (0.0, 0.0, 0.0, 1.0) for pose in poses))

    def test_plane_points_follow_the_edges(self):
        scene = gen_translating_bar(duration=0.5)
        intrinsics = default_intrinsics(240, 180)
        motion = scene.extras['motion']
        times = np.array([0.0, 0.125, 0.3, 0.5])
        rotations, centers = Trajectory(scene_poses(scene, intrinsics)).at(times)
        x0, y = motion.centroid(0.0)
        point = [(x0 - intrinsics.cx) * SCENE_DEPTH / intrinsics.fx, (y - intrinsics.cy) * SCENE_DEPTH / intrinsics.fy, SCENE_DEPTH]
        pixels, _ = project(np.array(point), rotations, centers, intrinsics)
        np.testing.assert_allclose(pixels[:, 0], motion.centroid(times)[0], atol=1e-9)
        np.testing.assert_allclose(pixels[:, 1], y, atol=1e-9)

    def test_crossing_bands_keep_a_static_camera(self):
        poses = scene_poses(gen_crossing_bands(), default_intrinsics(128, 128))
        self.assertTrue(all(pose.translation == (0.0, 0.0, 0.0) for pose in poses))
        self.assertGreaterEqual(poses[-1].t, 0.004)


class ProjectedSceneTests(SimpleTestCase):
    """Tracks of static points seen by a moving camera"""

    def test_tracks_are_exact_projections(self):
        scene = gen_projected_scene(n_points=5, seed=1)
        trajectory = Trajectory(scene.poses)
        for track, point in zip(scene.tracks, scene.points3d):
            rotations, centers = trajectory.at(track.t)
            pixels, depth = project(point, rotations, centers, scene.intrinsics)
            np.testing.assert_allclose(track.xy, pixels, atol=1e-9)
            self.assertTrue((depth > 0).all())

    def test_sampling(self):
        scene = gen_projected_scene(n_points=3, seed=1)
        self.assertEqual([t.chain_id for t in scene.tracks], [0, 1, 2])
        track = scene.tracks[0]
        self.assertEqual(len(track), 200)
        self.assertAlmostEqual(track.t[0], 0.0025)
        self.assertLessEqual(track.t[-1], scene.poses[-1].t)

    def test_noise_is_rms_displacement(self):
        points = np.tile([[0.0, 0.0, 3.0]], (400, 1))
        clean = gen_projected_scene(points3d=points, seed=6)
        noisy = gen_projected_scene(points3d=points, noise=1.0, seed=6)
        offsets = np.concatenate([n.xy - c.xy for n, c in zip(noisy.tracks, clean.tracks)])
        self.assertAlmostEqual(np.sqrt(np.square(offsets).sum(axis=1).mean()), 1.0, delta=0.02)

    def test_unknown_trajectory(self):
        with self.assertRaises(Exception):
            gen_projected_scene(trajectory='spiral')


class SceneFileTests(SimpleTestCase):
    """Scene files on disk and the synth command"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def synth(self, *args):
        out = StringIO()
        call_command('synth', *args, stdout=out)
        return out.getvalue()

    def test_event_scene_files_read_back(self):
        scene = gen_reversal_scene(seed=1)
        paths = write_event_scene(scene, self.dir)
        self.assertNotIn('centroids.csv', paths)
        events = read_events(paths['events.txt'])
        self.assertEqual(len(events), len(scene.events))
        np.testing.assert_array_equal(events.x, scene.events.x)
        poses = read_poses(paths['poses.txt'])
        self.assertGreaterEqual(poses[-1].t, events.t[-1])
        self.assertEqual(read_calib(paths['calib.txt']).cx, 120.0)
        header = paths['ground_truth.csv'].read_text().splitlines()[0]
        self.assertEqual(header, 't,x,y,p,edge_id')

    def test_same_seed_writes_identical_files(self):
        self.synth('translating-bar', str(self.dir / 'a'), '--seed', '7', '--duration', '0.2')
        self.synth('translating-bar', str(self.dir / 'b'), '--seed', '7', '--duration', '0.2')
        for name in EVENT_SCENE_FILES:
            self.assertEqual((self.dir / 'a' / name).read_bytes(), (self.dir / 'b' / name).read_bytes())

    def test_projected_command(self):
        output = self.synth('projected', str(self.dir / 'p'), '--n-points', '4', '--noise', '0.5')
        self.assertIn('Scene projected', output)
        for name in PROJECTED_SCENE_FILES:
            self.assertTrue((self.dir / 'p' / name).exists())
        self.assertEqual(len(read_tracks(self.dir / 'p' / 'tracks.csv')), 4)

    def test_reversal_command_options(self):
        self.synth('reversal', str(self.dir / 'r'), '--n-edges', '2', '--duration', '0.3')
        events = read_events(self.dir / 'r' / 'events.txt')
        self.assertLessEqual(events.t[-1], 0.62)
        self.assertEqual(len(set(events.y.tolist())), 40)

    def test_invalid_duration(self):
        with self.assertRaises(CommandError) as ctx:
            self.synth('reversal', str(self.dir / 'r'), '--duration', '-1')
        self.assertEqual(ctx.exception.returncode, 1)

    def test_scene_larger_than_sensor(self):
        with self.assertRaises(CommandError) as ctx:
            self.synth('reversal', str(self.dir / 'r'), '--width', '64')
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertFalse((self.dir / 'r' / 'events.txt').exists())
