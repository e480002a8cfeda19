import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from core.exceptions import BothEmpty, EmptyWindow
from core.io import read_tracks
from core.params import EcdtParams
from core.types import Cluster, ClusterChain, EventStream, Polarity
from synthetic.scenes import gen_reversal_scene, gen_translating_bar

from .extraction import extract_tracks, moving_average, sample_times
from .matching import PixelSet, head_descriptor, iou, match_clusters, singleton_chains, tail_descriptor
from .pipeline import run_pipeline


def make_cluster(cid, rows, polarity=Polarity.ON, width=240, height=180):
    """Cluster from (t, x, y) rows."""
    rows = list(rows)
    t, x, y = (list(c) for c in zip(*rows))
    events = EventStream(x=x, y=y, t=t, p=[int(polarity)] * len(rows), width=width, height=height)
    return Cluster(id=cid, polarity=polarity, events=events)


def chain_of(*clusters, chain_id=0):
    return ClusterChain(chain_id=chain_id, clusters=clusters, link_scores=[1.0] * (len(clusters) - 1))


def brute_force_links(clusters, params):
    """Best one-to-one link set by exhaustive enumeration of matchings."""
    tails, heads = [], []
    for c in clusters:
        t, x, y = c.events.t, c.events.x, c.events.y
        heads.append({(int(a), int(b)) for a, b, tt in zip(x, y, t) if tt < c.t_start + params.delta_t})
        tails.append({(int(a), int(b)) for a, b, tt in zip(x, y, t) if tt > c.t_end - params.delta_t})
    edges = []
    for i, a in enumerate(clusters):
        for j, b in enumerate(clusters):
            if i == j or not a.t_end <= b.t_start <= a.t_end + params.search_time:
                continue
            score = len(tails[i] & heads[j]) / len(tails[i] | heads[j])
            if score >= params.iou_threshold:
                edges.append(((-score, b.t_start, b.id, a.id), i, j))
    successors = {i: [(key, j) for key, ii, j in edges if ii == i] for i in range(len(clusters))}
    sentinel = (float('inf'),)
    best = None

    def visit(i, used, chosen):
        # every matching: each predecessor picks one free successor or none
        nonlocal best
        if i == len(clusters):
            keys = sorted(key for key, _, _ in chosen) + [sentinel] * (len(clusters) - len(chosen))
            if best is None or keys < best[0]:
                best = (keys, chosen)
            return
        visit(i + 1, used, chosen)
        for key, j in successors[i]:
            if j not in used:
                visit(i + 1, used | {j}, chosen + [(key, i, j)])

    visit(0, frozenset(), [])
    return {(i, j) for _, i, j in best[1]}


def chain_links(chains, clusters):
    position = {c.id: i for i, c in enumerate(clusters)}
    return {
        (position[a.id], position[b.id])
        for chain in chains for a, b in zip(chain.clusters, chain.clusters[1:])
    }


class DescriptorTests(SimpleTestCase):
    """Head and tail pixel sets"""

    def setUp(self):
        self.cluster = make_cluster(0, [(0.0, 1, 1), (0.005, 2, 2), (0.02, 3, 3)])

    def test_single_event_cluster(self):
        single = make_cluster(0, [(0.3, 7, 9)])
        self.assertEqual(head_descriptor(single, 0.01).to_set(), {(7, 9)})
        self.assertEqual(tail_descriptor(single, 0.01).to_set(), {(7, 9)})

    def test_window_arithmetic(self):
        self.assertEqual(head_descriptor(self.cluster, 0.01).to_set(), {(1, 1), (2, 2)})
        self.assertEqual(tail_descriptor(self.cluster, 0.01).to_set(), {(3, 3)})

    def test_duplicate_pixels_collapse(self):
        cluster = make_cluster(0, [(0.0, 4, 4), (0.001, 4, 4), (0.002, 5, 4)])
        self.assertEqual(len(head_descriptor(cluster, 0.01)), 2)
        self.assertIn((5, 4), head_descriptor(cluster, 0.01))

    def test_tail_is_head_of_reversed_cluster(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            t = np.sort(rng.integers(0, 512, 40)) / 1024.0
            x, y = rng.integers(0, 20, 40), rng.integers(0, 20, 40)
            cluster = make_cluster(0, zip(t, x, y))
            reversed_cluster = make_cluster(0, zip((t[-1] - t)[::-1], x[::-1], y[::-1]))
            self.assertEqual(tail_descriptor(cluster, 0.0625), head_descriptor(reversed_cluster, 0.0625))

    def test_bar_head_is_leading_cross_section(self):
        scene = gen_translating_bar(duration=0.1)
        leading = scene.labels == 0
        events = scene.events.subset(np.flatnonzero(leading))
        cluster = Cluster(id=0, polarity=Polarity.ON, events=events)
        head = head_descriptor(cluster, 0.01)
        self.assertEqual({y for _, y in head.to_set()}, set(range(80, 100)))
        self.assertTrue({x for x, _ in head.to_set()} <= {40, 41})


class IouTests(SimpleTestCase):
    """Intersection over union of pixel sets"""

    def test_examples(self):
        a = PixelSet.from_pixels([(1, 1), (2, 2)])
        self.assertEqual(iou(a, a), 1.0)
        self.assertEqual(iou(a, PixelSet.from_pixels([(5, 5)])), 0.0)
        b = PixelSet.from_pixels([(1, 1), (2, 2), (3, 3), (4, 4)])
        c = PixelSet.from_pixels([(1, 1), (2, 2), (5, 5), (6, 6)])
        self.assertEqual(iou(b, c), 1 / 3)

    def test_both_empty(self):
        with self.assertRaises(BothEmpty):
            iou(PixelSet.from_pixels([]), PixelSet.from_pixels([]))

    def test_randomized_against_set_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            a = {tuple(p) for p in rng.integers(0, 6, (int(rng.integers(0, 20)), 2)).tolist()}
            b = {tuple(p) for p in rng.integers(0, 6, (int(rng.integers(1, 20)), 2)).tolist()}
            self.assertEqual(iou(PixelSet.from_pixels(a), PixelSet.from_pixels(b)), len(a & b) / len(a | b))


class MatchClustersTests(SimpleTestCase):
    """Gated, one-to-one head/tail linking"""

    def setUp(self):
        self.params = EcdtParams()

    def test_low_iou_gives_singletons(self):
        first = make_cluster(0, [(0.0, 1, 1), (0.1, 1, 1), (0.1, 2, 1)])
        second = make_cluster(1, [(0.12, 1, 1), (0.12, 3, 1)], polarity=Polarity.OFF)
        self.assertEqual(iou(tail_descriptor(first, 0.01), head_descriptor(second, 0.01)), 1 / 3)
        chains = match_clusters([first, second], self.params.with_overrides(iou_threshold=0.5))
        self.assertEqual([len(c.clusters) for c in chains], [1, 1])

    def test_temporal_bound(self):
        first = make_cluster(0, [(0.0, 1, 1), (0.1, 1, 1)])
        late = make_cluster(1, [(0.4, 1, 1), (0.5, 1, 1)], polarity=Polarity.OFF)
        self.assertEqual(len(match_clusters([first, late], self.params)), 2)
        soon = make_cluster(1, [(0.15, 1, 1), (0.5, 1, 1)], polarity=Polarity.OFF)
        chains = match_clusters([first, soon], self.params)
        self.assertEqual(len(chains), 1)
        self.assertEqual(chains[0].link_scores, (1.0,))

    def test_proximity_gate(self):
        first = make_cluster(0, [(0.0, 1, 1), (0.1, 1, 1)])
        second = make_cluster(1, [(0.12, 1, 1), (0.12, 60, 60)])
        params = self.params.with_overrides(iou_threshold=0.4)
        self.assertEqual(len(match_clusters([first, second], params)), 2)
        self.assertEqual(len(match_clusters([first, second], params.with_overrides(proximity_radius=100.0))), 1)

    def test_opposite_polarity_only(self):
        first = make_cluster(0, [(0.0, 1, 1), (0.1, 1, 1)])
        same = make_cluster(1, [(0.15, 1, 1), (0.2, 1, 1)])
        self.assertEqual(len(match_clusters([first, same], self.params)), 1)
        self.assertEqual(len(match_clusters([first, same], self.params, opposite_polarity_only=True)), 2)

    def test_best_iou_wins_contested_successor(self):
        successor = make_cluster(2, [(0.2, 1, 1), (0.2, 2, 1), (0.3, 5, 5)])
        exact = make_cluster(0, [(0.0, 5, 9), (0.1, 1, 1), (0.1, 2, 1)])
        partial = make_cluster(1, [(0.05, 5, 9), (0.15, 1, 1), (0.15, 2, 1), (0.15, 3, 1)])
        chains = match_clusters([exact, partial, successor], self.params.with_overrides(iou_threshold=0.5))
        merged = [c for c in chains if len(c.clusters) == 2]
        self.assertEqual(len(merged), 1)
        self.assertEqual([c.id for c in merged[0].clusters], [0, 2])

    def test_chains_partition_clusters(self):
        rng = np.random.default_rng(12)
        clusters = self.random_clusters(rng, 10)
        chains = match_clusters(clusters, self.params.with_overrides(iou_threshold=0.3))
        members = sorted(c.id for chain in chains for c in chain.clusters)
        self.assertEqual(members, list(range(10)))
        self.assertEqual([c.chain_id for c in chains], list(range(len(chains))))
        for chain in chains:
            self.assertTrue(all(score >= 0.3 for score in chain.link_scores))

    def test_agrees_with_exhaustive_search(self):
        rng = np.random.default_rng(31)
        params = self.params.with_overrides(iou_threshold=0.3)
        for trial in range(30):
            clusters = self.random_clusters(rng, int(rng.integers(2, 7)))
            chains = match_clusters(clusters, params)
            with self.subTest(trial=trial):
                self.assertEqual(chain_links(chains, clusters), brute_force_links(clusters, params))

    def test_worker_count_does_not_change_chains(self):
        clusters = self.random_clusters(np.random.default_rng(3), 10)
        params = self.params.with_overrides(iou_threshold=0.3)
        self.assertEqual(
            chain_links(match_clusters(clusters, params, workers=1), clusters),
            chain_links(match_clusters(clusters, params, workers=6), clusters),
        )

    def test_singleton_chains_follow_start_time(self):
        a = make_cluster(0, [(0.3, 1, 1)])
        b = make_cluster(1, [(0.1, 1, 1)])
        self.assertEqual([c.clusters[0].id for c in singleton_chains([a, b])], [1, 0])

    @staticmethod
    def random_clusters(rng, count):
        """Clusters of three head and three tail events on a 3x3 pixel patch."""
        clusters = []
        for cid in range(count):
            start = int(rng.integers(0, 20)) * 0.01
            end = start + 0.04
            times = [start, start + 0.001, start + 0.002, end - 0.002, end - 0.001, end]
            pixels = rng.integers(0, 3, (6, 2))
            polarity = Polarity(int(rng.integers(0, 2)))
            clusters.append(make_cluster(cid, [(t, int(x), int(y)) for t, (x, y) in zip(times, pixels)], polarity))
        return clusters


class MovingAverageTests(SimpleTestCase):
    """Window means and sampled track extraction"""

    def test_constant_pixel(self):
        chain = chain_of(make_cluster(0, [(0.0, 50, 60), (0.002, 50, 60), (0.004, 50, 60)]))
        self.assertEqual(moving_average(chain, 0.002, 0.01), (50.0, 60.0))

    def test_mean_of_two_events(self):
        chain = chain_of(make_cluster(0, [(0.0, 0, 0), (0.001, 2, 2)]))
        self.assertEqual(moving_average(chain, 0.001, 0.01), (1.0, 1.0))

    def test_window_bounds_are_open(self):
        chain = chain_of(make_cluster(0, [(0.0, 0, 0), (0.5, 8, 8), (1.0, 4, 4)]))
        self.assertEqual(moving_average(chain, 0.5, 1.0), (8.0, 8.0))

    def test_empty_window(self):
        chain = chain_of(make_cluster(0, [(0.0, 0, 0), (1.0, 2, 2)]))
        with self.assertRaises(EmptyWindow):
            moving_average(chain, 0.5, 0.01)

    def test_young_chain_is_dropped(self):
        chain = chain_of(make_cluster(0, [(0.0, 1, 1), (0.005, 1, 1)]))
        self.assertEqual(extract_tracks([chain], EcdtParams(), sample_period=0.005), [])

    def test_sample_count_for_one_second(self):
        times = np.linspace(0.0, 1.0, 2001)
        chain = chain_of(make_cluster(0, [(t, 10, 10) for t in times]))
        tracks = extract_tracks([chain], EcdtParams(), sample_period=0.01)
        self.assertEqual(len(tracks), 1)
        self.assertAlmostEqual(len(tracks[0]), 99, delta=1)
        self.assertTrue((np.diff(tracks[0].t) > 0).all())
        self.assertGreaterEqual(tracks[0].age, 0.01)

    def test_sample_times(self):
        np.testing.assert_allclose(sample_times(0.0, 0.05, 0.01, 0.01), [0.005, 0.015, 0.025, 0.035, 0.045])
        self.assertEqual(len(sample_times(0.0, 0.005, 0.01, 0.01)), 0)

    def test_translation_moves_every_point(self):
        scene = gen_translating_bar(duration=0.3)
        leading = scene.events.subset(np.flatnonzero(scene.labels == 0))
        shifted = EventStream(
            x=leading.x + 5, y=leading.y + 3, t=leading.t, p=leading.p, width=240, height=180,
        )
        params = EcdtParams()
        base = extract_tracks([chain_of(Cluster(0, Polarity.ON, leading))], params, sample_period=0.005)[0]
        moved = extract_tracks([chain_of(Cluster(0, Polarity.ON, shifted))], params, sample_period=0.005)[0]
        np.testing.assert_array_equal(moved.t, base.t)
        np.testing.assert_allclose(moved.xy, base.xy + [5.0, 3.0], atol=1e-9)

    def test_time_shift_moves_timestamps_only(self):
        scene = gen_translating_bar(duration=0.3)
        leading = scene.events.subset(np.flatnonzero(scene.labels == 0))
        later = EventStream(x=leading.x, y=leading.y, t=leading.t + 0.25, p=leading.p, width=240, height=180)
        params = EcdtParams()
        base = extract_tracks([chain_of(Cluster(0, Polarity.ON, leading))], params, sample_period=0.005)[0]
        shifted = extract_tracks([chain_of(Cluster(0, Polarity.ON, later))], params, sample_period=0.005)[0]
        self.assertEqual(len(shifted), len(base))
        np.testing.assert_allclose(shifted.t, base.t + 0.25, atol=1e-9)
        np.testing.assert_allclose(shifted.xy, base.xy, atol=1e-9)

    def test_per_event_agrees_with_sampled(self):
        rng = np.random.default_rng(0)
        ticks = np.sort(rng.choice(np.arange(0, 1024), 600, replace=False))
        rows = [(tick / 256.0, int(rng.integers(0, 50)), int(rng.integers(0, 50))) for tick in ticks]
        chain = chain_of(make_cluster(0, rows))
        params = EcdtParams(t_w=0.25, min_feature_age=0.25)
        sampled = extract_tracks([chain], params, sample_period=0.125)[0]
        per_event = extract_tracks([chain], params, per_event=True)[0]
        common, i, j = np.intersect1d(sampled.t, per_event.t, return_indices=True)
        self.assertGreater(len(common), 5)
        np.testing.assert_allclose(sampled.xy[i], per_event.xy[j], atol=1e-9)

    def test_chain_union_spans_clusters(self):
        first = make_cluster(0, [(0.0, 10, 10), (0.004, 10, 10)])
        second = make_cluster(1, [(0.006, 20, 10), (0.01, 20, 10)], polarity=Polarity.OFF)
        chain = chain_of(first, second)
        self.assertEqual(moving_average(chain, 0.005, 0.01), (15.0, 10.0))


class PipelineTests(SimpleTestCase):
    """KCSCAN, HT matching and tracks on synthetic scenes"""

    def chains_of_edge(self, result, labels, edge):
        chain_ids = result.chain_labels()[labels == edge]
        return set(chain_ids[chain_ids >= 0].tolist())

    def test_reversal_is_merged_by_ht_matching(self):
        scene = gen_reversal_scene(seed=1)
        params = EcdtParams()
        merged = run_pipeline(scene.events, params, sample_period=0.005)
        split = run_pipeline(scene.events, params, use_ht=False, sample_period=0.005)

        merged_chains = self.chains_of_edge(merged, scene.labels, 0)
        split_chains = self.chains_of_edge(split, scene.labels, 0)
        self.assertEqual(len(merged_chains), 1)
        self.assertGreaterEqual(len(split_chains), 2)

        merged_age = max(t.age for t in merged.tracks if t.chain_id in merged_chains)
        split_age = max(t.age for t in split.tracks if t.chain_id in split_chains)
        self.assertGreaterEqual(merged_age, 1.8 * split_age)

    def test_reversal_with_several_edges(self):
        scene = gen_reversal_scene(n_edges=3, seed=2)
        result = run_pipeline(scene.events, EcdtParams(), sample_period=0.005)
        for edge in range(3):
            self.assertEqual(len(self.chains_of_edge(result, scene.labels, edge)), 1)

    def test_moving_average_follows_bar_centroid(self):
        scene = gen_translating_bar(velocity=100.0)
        motion = scene.extras['motion']
        result = run_pipeline(scene.events, EcdtParams(), sample_period=0.005)
        self.assertEqual(len(result.tracks), 2)
        polarity_of = {chain.chain_id: chain.clusters[0].polarity for chain in result.chains}
        for track in result.tracks:
            edge = 0 if polarity_of[track.chain_id] == Polarity.ON else 1
            x, y = motion.centroid(track.t, edge)
            error = np.hypot(track.xy[:, 0] - x, track.xy[:, 1] - y)
            self.assertLess(error.max(), 0.5)

    def test_chunked_clusters_are_stitched(self):
        # slow edge whose pixel column does not change across the chunk borders
        scene = gen_translating_bar(velocity=20.0, x0=40.25, duration=0.6)
        params = EcdtParams()
        result = run_pipeline(scene.events, params, chunk_duration=0.2, sample_period=0.005)
        self.assertGreater(len(result.labeling.clusters), 2)
        self.assertEqual(len(result.chains), 2)
        strict = run_pipeline(
            scene.events, params, chunk_duration=0.2, sample_period=0.005, opposite_polarity_only=True,
        )
        self.assertGreater(len(strict.chains), 2)

    def test_tracks_respect_minimum_age(self):
        scene = gen_reversal_scene(seed=4)
        result = run_pipeline(scene.events, EcdtParams(min_feature_age=0.3), sample_period=0.005)
        self.assertTrue(all(t.age >= 0.3 for t in result.tracks))
        self.assertTrue(all((np.diff(t.t) > 0).all() for t in result.tracks))


class TrackCommandTests(SimpleTestCase):
    """The track management command"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        call_command('synth', 'reversal', str(self.dir / 'scene'), '--seed', '5', stdout=StringIO())

    def tearDown(self):
        self.tmp.cleanup()

    def track(self, *extra):
        out = StringIO()
        call_command('track', str(self.dir / 'scene' / 'events.txt'), *extra, stdout=out)
        return out.getvalue()

    def test_writes_tracks_and_labels(self):
        output = self.track('--out', str(self.dir / 'tracks.csv'), '--labels-out', str(self.dir / 'labels.csv'), '--print-params')
        self.assertIn('1 chains', output)
        tracks = read_tracks(self.dir / 'tracks.csv')
        self.assertEqual(len(tracks), 1)
        text = (self.dir / 'tracks.csv').read_text()
        self.assertTrue(text.startswith('# k=30\n'))
        self.assertIn('# ht_matching=True\n', text)
        header = [line for line in (self.dir / 'labels.csv').read_text().splitlines() if not line.startswith('#')][0]
        self.assertEqual(header, 't,x,y,p,cluster_id,chain_id')

    def test_no_ht_splits_the_edge(self):
        self.track('--out', str(self.dir / 'tracks.csv'), '--no-ht')
        self.assertEqual(len(read_tracks(self.dir / 'tracks.csv')), 2)

    def test_begin_after_end_is_usage_error(self):
        with self.assertRaises(CommandError) as ctx:
            self.track('--out', str(self.dir / 'tracks.csv'), '--t-begin', '0.6', '--t-end', '0.2')
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertFalse((self.dir / 'tracks.csv').exists())

    def test_invalid_parameter_is_usage_error(self):
        with self.assertRaises(CommandError) as ctx:
            self.track('--out', str(self.dir / 'tracks.csv'), '--phi-min', '1.5')
        self.assertEqual(ctx.exception.returncode, 1)

    def test_zero_sample_period_and_threads_are_usage_errors(self):
        for flag in ('--sample-period', '--threads'):
            with self.assertRaises(CommandError) as ctx:
                self.track('--out', str(self.dir / 'tracks.csv'), flag, '0')
            self.assertEqual(ctx.exception.returncode, 1)
            self.assertIn(flag, str(ctx.exception))
        self.assertFalse((self.dir / 'tracks.csv').exists())

    def test_time_slice(self):
        self.track('--out', str(self.dir / 'tracks.csv'), '--t-begin', '0.0', '--t-end', '0.3')
        tracks = read_tracks(self.dir / 'tracks.csv')
        self.assertEqual(len(tracks), 1)
        self.assertLessEqual(tracks[0].t[-1], 0.3)

    def test_unsorted_input_is_io_error_and_leaves_no_output(self):
        events = self.dir / 'bad.txt'
        events.write_text('0.2 1 1 1\n0.1 1 1 1\n')
        out = self.dir / 'tracks.csv'
        with self.assertRaises(CommandError) as ctx:
            call_command('track', str(events), '--out', str(out), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('UnsortedTimestamps', str(ctx.exception))
        self.assertFalse(out.exists())

    def test_output_identical_across_thread_counts(self):
        self.track('--out', str(self.dir / 'one.csv'), '--threads', '1', '--print-params')
        self.track('--out', str(self.dir / 'eight.csv'), '--threads', '8', '--print-params')
        self.assertEqual((self.dir / 'one.csv').read_bytes(), (self.dir / 'eight.csv').read_bytes())

    def test_calibration_is_recorded(self):
        self.track('--out', str(self.dir / 'tracks.csv'), '--calib', str(self.dir / 'scene' / 'calib.txt'), '--print-params')
        self.assertIn('# calib=200 200 120 90 0 0 0 0 0\n', (self.dir / 'tracks.csv').read_text())


class EndToEndTests(SimpleTestCase):
    """synth, track, evaluate and stats chained on one scene"""

    def test_reversal_scene_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            call_command('synth', 'reversal', str(tmp), stdout=StringIO())
            out = StringIO()
            call_command('track', str(tmp / 'events.txt'), '--out', str(tmp / 'tracks.csv'), stdout=out)
            self.assertIn('1 chains', out.getvalue())
            call_command(
                'evaluate', str(tmp / 'tracks.csv'), str(tmp / 'poses.txt'), str(tmp / 'calib.txt'),
                '--per-track-out', str(tmp / 'per_track.csv'), '--summary-out', str(tmp / 'summary.csv'),
                stdout=StringIO(),
            )
            rows = [line.split(',') for line in (tmp / 'summary.csv').read_text().splitlines() if not line.startswith('#')]
            self.assertEqual(rows[0][:3], ['threshold_px', 'kept', 'total'])
            self.assertTrue(all(row[1:3] == ['1', '1'] for row in rows[1:]))
            stats = StringIO()
            call_command('stats', str(tmp / 'per_track.csv'), stdout=stats)
            self.assertIn('threshold', stats.getvalue())
