import math
import tempfile
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase, override_settings

from .exceptions import EmptyStream, InvalidParams, OutOfBounds, OutOfRange, ParseError, UnsortedTimestamps
from .io import read_calib, read_events, read_poses, read_tracks, write_calib, write_events, write_poses, write_tracks
from .management.base import describe, parse_thresholds
from .params import EcdtParams
from .types import CameraIntrinsics, Cluster, ClusterChain, Event, EventStream, Polarity, Pose, Track, validate_stream


def make_stream(rows, width=240, height=180):
    """EventStream from (t, x, y, p) rows."""
    rows = list(rows)
    return EventStream(
        x=[r[1] for r in rows], y=[r[2] for r in rows], t=[r[0] for r in rows], p=[r[3] for r in rows],
        width=width, height=height,
    )


class ValidateStreamTests(SimpleTestCase):
    """Ordering and bounds checks of event batches"""

    def test_empty_stream_is_valid(self):
        stream = EventStream.empty(240, 180)
        self.assertIs(validate_stream(stream), stream)

    def test_unsorted_timestamps_report_index(self):
        stream = make_stream([(0.1, 1, 1, 1), (0.05, 2, 2, 0)])
        with self.assertRaises(UnsortedTimestamps) as ctx:
            validate_stream(stream)
        self.assertEqual(ctx.exception.index, 1)

    def test_event_at_width_is_out_of_bounds(self):
        stream = make_stream([(0.0, 240, 5, 1)])
        with self.assertRaises(OutOfBounds) as ctx:
            validate_stream(stream)
        self.assertEqual(ctx.exception.index, 0)

    def test_lowest_offending_index_wins(self):
        stream = make_stream([(0.2, 1, 1, 1), (0.1, 1, 1, 1), (0.3, 500, 1, 1)])
        with self.assertRaises(UnsortedTimestamps) as ctx:
            validate_stream(stream)
        self.assertEqual(ctx.exception.index, 1)

    def test_equal_timestamps_are_allowed(self):
        stream = make_stream([(0.1, 1, 1, 1), (0.1, 2, 2, 0)])
        self.assertEqual(len(validate_stream(stream)), 2)

    def test_time_slice_is_inclusive(self):
        stream = make_stream([(0.1, 1, 1, 1), (0.2, 1, 1, 1), (0.3, 1, 1, 1)])
        self.assertEqual(list(stream.time_slice(0.2, 0.3).t), [0.2, 0.3])


class DomainTypeTests(SimpleTestCase):
    """Invariants asserted on construction"""

    def test_event_polarity_mapping(self):
        event = Event(96, 133, 0.003811, 0)
        self.assertIs(event.p, Polarity.OFF)
        self.assertIs(Event(1, 1, 0.0, 1).p, Polarity.ON)

    def test_negative_timestamp_rejected(self):
        with self.assertRaises(ValidationError):
            Event(1, 1, -0.1, 1)

    def test_cluster_rejects_mixed_polarity(self):
        with self.assertRaises(ValidationError):
            Cluster(id=0, polarity=Polarity.ON, events=make_stream([(0.0, 1, 1, 1), (0.1, 1, 1, 0)]))

    def test_cluster_span(self):
        cluster = Cluster(id=3, polarity=Polarity.ON, events=make_stream([(0.1, 1, 1, 1), (0.4, 2, 1, 1)]))
        self.assertEqual((cluster.t_start, cluster.t_end), (0.1, 0.4))

    def test_chain_requires_time_order_and_scores(self):
        early = Cluster(id=0, polarity=1, events=make_stream([(0.0, 1, 1, 1), (0.5, 1, 1, 1)]))
        late = Cluster(id=1, polarity=0, events=make_stream([(0.6, 1, 1, 0), (0.9, 1, 1, 0)]))
        chain = ClusterChain(chain_id=0, clusters=[early, late], link_scores=[0.9])
        self.assertAlmostEqual(chain.age, 0.9)
        self.assertEqual(len(chain.events()), 4)
        with self.assertRaises(ValidationError):
            ClusterChain(chain_id=0, clusters=[late, early], link_scores=[0.9])
        with self.assertRaises(ValidationError):
            ClusterChain(chain_id=0, clusters=[early, late])

    def test_track_requires_increasing_time(self):
        with self.assertRaises(ValidationError):
            Track(chain_id=0, points=[(0.1, 1.0, 1.0), (0.1, 2.0, 2.0)])
        track = Track(chain_id=0, points=[(0.1, 1.0, 1.0), (0.3, 2.0, 2.0)])
        self.assertAlmostEqual(track.age, 0.2)

    def test_pose_requires_unit_quaternion(self):
        with self.assertRaises(ValidationError):
            Pose(t=0.0, translation=(0, 0, 0), rotation=(0, 0, 0, 1.01))

    def test_intrinsics_require_positive_focal_length(self):
        with self.assertRaises(ValidationError):
            CameraIntrinsics(0.0, 200.0, 120.0, 90.0)
        matrix = CameraIntrinsics(200.0, 210.0, 120.0, 90.0).matrix
        self.assertEqual(matrix[1, 1], 210.0)


class EcdtParamsTests(SimpleTestCase):
    """Parameter defaults and validation"""

    def test_defaults_follow_settings(self):
        params = EcdtParams.from_settings()
        self.assertEqual(params.k, 30)
        self.assertEqual(params.phi_min, 0.90)
        self.assertEqual(params.min_feature_age, 0.01)
        self.assertEqual(params.search_time, 0.2)
        self.assertEqual(params.iou_threshold, 0.7)

    @override_settings(ECDT_DEFAULTS={'k': 12, 'r': 4.0})
    def test_settings_override_defaults_and_flags_override_settings(self):
        params = EcdtParams.from_settings(r=6.0, phi_min=None)
        self.assertEqual(params.k, 12)
        self.assertEqual(params.r, 6.0)
        self.assertEqual(params.phi_min, 0.90)

    def test_invalid_values_rejected(self):
        for overrides in ({'k': 0}, {'r': 0.0}, {'phi_min': 1.5}, {'iou_threshold': 0.0}, {'time_scale': -1.0}):
            with self.subTest(overrides=overrides), self.assertRaises(InvalidParams):
                EcdtParams(**overrides)

    def test_header_lines(self):
        header = EcdtParams().as_header({'ht_matching': True})
        self.assertIn('# k=30\n', header)
        self.assertTrue(header.endswith('# ht_matching=True\n'))


class DatasetIoTests(SimpleTestCase):
    """Text formats of the public dataset and the track CSV"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name, text):
        path = self.dir / name
        path.write_text(text, encoding='utf-8')
        return path

    def test_read_events_field_mapping(self):
        path = self.write('events.txt', '0.003811 96 133 0\n0.003820 97 133 1  \n\n')
        stream = read_events(path)
        self.assertEqual(len(stream), 2)
        self.assertEqual(stream[0], Event(96, 133, 0.003811, Polarity.OFF))
        self.assertEqual((stream.width, stream.height), (240, 180))

    def test_out_of_sensor_event(self):
        path = self.write('events.txt', '0.1 300 10 1\n')
        with self.assertRaises(OutOfBounds):
            read_events(path)

    def test_empty_file_gives_empty_stream(self):
        self.assertEqual(len(read_events(self.write('events.txt', ''))), 0)

    def test_parse_errors_carry_line_number(self):
        cases = {
            '0.1 1 1 1\n0.2 1 1\n': 2,
            '0.1 1 1 1\nnan 1 1 1\n': 2,
            '0.1 1 1 2\n': 1,
            '0.1 1.5 1 1\n': 1,
            '0.1 a 1 1\n': 1,
        }
        for text, line in cases.items():
            with self.subTest(text=text), self.assertRaises(ParseError) as ctx:
                read_events(self.write('events.txt', text))
            self.assertEqual(ctx.exception.line, line)

    def test_batches_do_not_change_result(self):
        lines = ''.join(f'{i * 0.001:.6f} {i % 50} {i % 30} {i % 2}\n' for i in range(100))
        path = self.write('events.txt', lines)
        whole = read_events(path, batch_size=1000)
        batched = read_events(path, batch_size=7)
        np.testing.assert_array_equal(whole.t, batched.t)
        np.testing.assert_array_equal(whole.x, batched.x)

    def test_unsorted_file(self):
        with self.assertRaises(UnsortedTimestamps):
            read_events(self.write('events.txt', '0.2 1 1 1\n0.1 1 1 1\n'))

    def test_event_round_trip(self):
        stream = make_stream([(0.000123456, 3, 4, 1), (0.5, 7, 8, 0)])
        path = self.dir / 'events.txt'
        write_events(stream, path)
        again = read_events(path)
        np.testing.assert_array_equal(again.x, stream.x)
        np.testing.assert_allclose(again.t, stream.t, atol=1e-9)

    def test_poses_renormalised_and_rejected(self):
        with self.assertLogs('core.io', level='WARNING') as logs:
            poses = read_poses(self.write('poses.txt', '0.0 1 2 3 0 0 0 1.0005\n0.005 1 2 3 0 0 0 1\n'))
        self.assertEqual(len(logs.records), 1)
        self.assertIn('line 1', logs.output[0])
        self.assertAlmostEqual(math.sqrt(sum(q * q for q in poses[0].rotation)), 1.0, places=12)
        with self.assertRaises(ParseError):
            read_poses(self.write('bad.txt', '0.0 1 2 3 0 0 0 1.1\n'))
        with self.assertRaises(ParseError):
            read_poses(self.write('order.txt', '0.1 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 0 1\n'))

    def test_pose_and_calib_round_trip(self):
        poses = [Pose(t=0.0, translation=(0.1, 0.2, 0.3), rotation=(0.0, 0.0, 0.0, 1.0))]
        write_poses(poses, self.dir / 'poses.txt')
        self.assertEqual(read_poses(self.dir / 'poses.txt'), poses)
        intrinsics = CameraIntrinsics(199.092, 198.828, 132.192, 110.712, (-0.368, 0.150, -0.0003, -0.0003, 0.0))
        write_calib(intrinsics, self.dir / 'calib.txt')
        self.assertEqual(read_calib(self.dir / 'calib.txt'), intrinsics)

    def test_calib_needs_nine_fields(self):
        with self.assertRaises(ParseError):
            read_calib(self.write('calib.txt', '200 200 120 90\n'))

    def test_track_round_trip(self):
        tracks = [
            Track(chain_id=4, points=[(0.0051234567, 10.123456789, 20.5), (0.0101234567, 11.0, 21.25)]),
            Track(chain_id=1, points=[(0.25, 1.0 / 3.0, 2.0 / 3.0), (0.5, 1.5, 2.5)]),
        ]
        path = self.dir / 'tracks.csv'
        write_tracks(tracks, path, header=EcdtParams().as_header())
        again = read_tracks(path)
        self.assertEqual([t.chain_id for t in again], [4, 1])
        for before, after in zip(tracks, again):
            np.testing.assert_allclose(after.points, before.points, rtol=1e-8)
        write_tracks(again, self.dir / 'again.csv', header=EcdtParams().as_header())
        self.assertEqual(path.read_text(), (self.dir / 'again.csv').read_text())


class CommandPlumbingTests(SimpleTestCase):
    """Shared helpers of the management commands"""

    def test_parse_thresholds(self):
        self.assertEqual(parse_thresholds('3,5,7'), [3.0, 5.0, 7.0])
        for bad in ('', 'a,b', '3,-1'):
            with self.subTest(value=bad), self.assertRaises(Exception):
                parse_thresholds(bad)

    def test_describe_is_single_line(self):
        self.assertEqual(describe(ParseError(4, 'bad\nvalue')), 'ParseError: Line 4: bad value')
        self.assertEqual(describe(OutOfRange(1.5, chain_id=7)), 'OutOfRange: track 7: no ground-truth pose covers t=1.500000')
        self.assertTrue(describe(EmptyStream()).startswith('EmptyStream: '))
