import numpy as np
from django.test import SimpleTestCase

from core.exceptions import EmptyStream, InvalidParams
from core.params import EcdtParams
from core.types import EventStream, Polarity
from synthetic.scenes import JUNCTION, gen_crossing_bands

from .index import StIndex, build_index
from .kcscan import NOISE, cluster, core_point_eval, evaluate_core_points, purity_score


def stream_from(x, y, t, p, width=240, height=180):
    return EventStream(x=x, y=y, t=t, p=p, width=width, height=height)


def random_stream(rng, n, mixed=True):
    """Events in a 30x30 px, 10 ms box; polarity follows the image half with 10% flips."""
    x = rng.integers(0, 30, n)
    y = rng.integers(0, 30, n)
    t = np.sort(rng.uniform(0.0, 0.01, n))
    if mixed:
        p = (x < 15).astype(np.int8)
        flips = rng.random(n) < 0.1
        p[flips] = 1 - p[flips]
    else:
        p = np.ones(n, dtype=np.int8)
    return stream_from(x, y, t, p)


def pairwise_distances(points):
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def brute_force_neighbors(dist, i, k, r):
    d = dist[i].copy()
    d[i] = np.inf
    inside = np.flatnonzero(d <= r)
    return inside[np.lexsort((inside, d[inside]))][:k]


def brute_force_kcscan(points, polarity, k, r, phi_min):
    """Exhaustive KCSCAN: core test, connected cores, nearest-core borders."""
    n = len(points)
    dist = pairwise_distances(points)
    core = np.zeros(n, dtype=bool)
    for i in range(n):
        neighbors = brute_force_neighbors(dist, i, k, r)
        if len(neighbors) == k and np.count_nonzero(polarity[neighbors] == polarity[i]) / k >= phi_min:
            core[i] = True

    component = np.full(n, -1)
    components = []
    for seed in np.flatnonzero(core):
        if component[seed] >= 0:
            continue
        component[seed] = len(components)
        members, stack = [seed], [seed]
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(core & (polarity == polarity[i]) & (dist[i] <= r) & (component < 0)):
                component[j] = component[seed]
                members.append(j)
                stack.append(j)
        components.append(min(members))

    rank = {c: cid for cid, c in enumerate(np.argsort(components, kind='stable'))}
    labels = np.full(n, NOISE)
    labels[core] = [rank[c] for c in component[core]]
    for i in np.flatnonzero(~core):
        candidates = np.flatnonzero(core & (polarity == polarity[i]) & (dist[i] <= r))
        if len(candidates):
            best = min(candidates, key=lambda j: (dist[i, j], labels[j]))
            labels[i] = labels[best]
    return core, labels


def partition(labels):
    groups = {}
    for i, label in enumerate(labels):
        if label >= 0:
            groups.setdefault(label, set()).add(i)
    return {frozenset(g) for g in groups.values()}


class StIndexTests(SimpleTestCase):
    """Radius-bounded k-NN queries"""

    def test_single_event_index(self):
        index = build_index(stream_from([5], [5], [0.0], [1]), 5000.0)
        self.assertEqual(len(index), 1)
        self.assertEqual(len(index.knn_within_radius(0, 3, 10.0).indices), 0)

    def test_isolated_event_has_no_neighbors(self):
        index = StIndex([[0, 0, 0], [50, 0, 0], [0, 50, 0]], 1.0)
        self.assertEqual(list(index.knn_within_radius(0, 4, 10.0).indices), [])

    def test_two_nearest_within_radius(self):
        index = StIndex([[0, 0, 0], [3, 0, 0], [0, 1, 0], [0, 0, 2]], 1.0)
        neighbors = index.knn_within_radius(0, 2, 2.5)
        self.assertEqual(list(neighbors.indices), [2, 3])
        self.assertEqual(list(neighbors.distances), [1.0, 2.0])

    def test_equidistant_pair_lower_index_first(self):
        index = StIndex([[0, 0, 0], [0, 0, 1], [1, 0, 0]], 1.0)
        self.assertEqual(list(index.knn_within_radius(0, 2, 5.0).indices), [1, 2])

    def test_ties_at_cut_off_are_resolved_by_index(self):
        shell = [
            (3, 4, 0), (4, 3, 0), (0, 3, 4), (0, 4, 3), (3, 0, 4), (4, 0, 3),
            (5, 0, 0), (0, 5, 0), (0, 0, 5),
        ]
        shell += [(-a, -b, -c) for a, b, c in shell]
        index = StIndex([(0, 0, 0)] + shell, 1.0)
        neighbors = index.knn_within_radius(0, 2, 6.0)
        self.assertEqual(list(neighbors.indices), [1, 2])
        self.assertEqual(list(neighbors.distances), [5.0, 5.0])

    def test_invalid_time_scale_and_empty_stream(self):
        events = stream_from([1], [1], [0.0], [1])
        with self.assertRaises(InvalidParams):
            build_index(events, 0.0)
        with self.assertRaises(EmptyStream):
            build_index(EventStream.empty(240, 180), 5000.0)

    def test_agrees_with_exhaustive_scan(self):
        rng = np.random.default_rng(11)
        n = 100_000
        events = stream_from(
            rng.integers(0, 240, n), rng.integers(0, 180, n), np.sort(rng.uniform(0, 0.05, n)), rng.integers(0, 2, n),
        )
        index = build_index(events, 5000.0)
        points = events.scaled_points(5000.0)
        for q in rng.choice(n, 100, replace=False):
            diff = points - points[q]
            d = np.sqrt(np.sum(diff * diff, axis=-1))
            d[q] = np.inf
            inside = np.flatnonzero(d <= 10.0)
            expected = inside[np.lexsort((inside, d[inside]))][:30]
            self.assertEqual(list(index.knn_within_radius(int(q), 30, 10.0).indices), list(expected))

    def test_random_batches_match_oracle(self):
        rng = np.random.default_rng(5)
        for trial in range(20):
            events = random_stream(rng, int(rng.integers(50, 1200)))
            k = int(rng.integers(1, 30))
            r = float(rng.uniform(1.0, 8.0))
            index = build_index(events, 5000.0)
            dist = pairwise_distances(index.points)
            indices, distances, counts = index.knn_batch(k, r)
            for q in rng.choice(len(events), 25, replace=False):
                expected = brute_force_neighbors(dist, q, k, r)
                with self.subTest(trial=trial, query=int(q)):
                    self.assertEqual(list(indices[q, :counts[q]]), list(expected))

    def test_results_do_not_depend_on_workers(self):
        events = random_stream(np.random.default_rng(2), 1500)
        index = build_index(events, 5000.0)
        single = index.knn_batch(12, 5.0, workers=1)
        many = index.knn_batch(12, 5.0, workers=4)
        for a, b in zip(single, many):
            np.testing.assert_array_equal(a, b)


class PurityScoreTests(SimpleTestCase):
    """Fraction of the configured k neighbours sharing the query polarity"""

    def test_examples(self):
        self.assertEqual(purity_score(Polarity.ON, [1, 1, 1, 1], 4), 1.0)
        self.assertEqual(purity_score(Polarity.ON, [0, 0, 0, 0], 4), 0.0)
        self.assertEqual(purity_score(Polarity.ON, [1, 1, 0, 1, 0], 5), 0.6)

    def test_divides_by_k_not_by_found(self):
        self.assertEqual(purity_score(1, [1, 1], 4), 0.5)

    def test_more_neighbors_than_k_rejected(self):
        with self.assertRaises(InvalidParams):
            purity_score(1, [1, 1, 1], 2)

    def test_randomized_against_counting_formula(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            k = int(rng.integers(1, 40))
            found = int(rng.integers(0, k + 1))
            neighbors = rng.integers(0, 2, found)
            query = int(rng.integers(0, 2))
            expected = sum(1 for p in neighbors if p == query) / k
            self.assertEqual(purity_score(query, neighbors, k), expected)


class CorePointTests(SimpleTestCase):
    """Core test: exactly k neighbours within r and enough purity"""

    def setUp(self):
        self.params = EcdtParams(k=4, r=2.0, phi_min=1.0, time_scale=1000.0)

    def evaluate(self, rows, query=0):
        x, y, p = zip(*rows)
        events = stream_from(x, y, [0.0] * len(rows), p)
        return core_point_eval(query, self.params, build_index(events, self.params.time_scale))

    def test_pure_neighborhood_is_core(self):
        is_core, neighbors = self.evaluate([(10, 10, 1), (11, 10, 1), (9, 10, 1), (10, 11, 1), (10, 9, 1), (13, 10, 0)])
        self.assertTrue(is_core)
        self.assertEqual(sorted(neighbors.indices), [1, 2, 3, 4])

    def test_mixed_neighborhood_is_not_core(self):
        is_core, neighbors = self.evaluate([(10, 10, 1), (11, 10, 1), (9, 10, 0), (10, 11, 1), (10, 9, 1)])
        self.assertFalse(is_core)
        self.assertEqual(len(neighbors.indices), 0)

    def test_too_few_neighbors_is_not_core(self):
        is_core, _ = self.evaluate([(10, 10, 1), (11, 10, 1), (9, 10, 1), (10, 11, 1), (30, 30, 1)])
        self.assertFalse(is_core)

    def test_raising_phi_min_never_adds_core_points(self):
        events = random_stream(np.random.default_rng(9), 800)
        index = build_index(events, 5000.0)
        loose = evaluate_core_points(index, EcdtParams(k=10, r=6.0, phi_min=0.7))
        strict = evaluate_core_points(index, EcdtParams(k=10, r=6.0, phi_min=0.9))
        self.assertFalse((strict & ~loose).any())

    def test_core_set_independent_of_scan_order(self):
        rng = np.random.default_rng(4)
        events = random_stream(rng, 700)
        params = EcdtParams(k=8, r=6.0, phi_min=0.8)
        core = evaluate_core_points(build_index(events, params.time_scale), params)
        order = rng.permutation(len(events))
        shuffled = events.subset(order)
        shuffled_core = evaluate_core_points(build_index(shuffled, params.time_scale), params)
        np.testing.assert_array_equal(shuffled_core, core[order])


class KcscanTests(SimpleTestCase):
    """Cluster expansion against brute-force references"""

    def test_empty_stream(self):
        with self.assertRaises(EmptyStream):
            cluster(EventStream.empty(240, 180), EcdtParams())

    def test_dense_blob_is_one_cluster(self):
        rng = np.random.default_rng(1)
        events = stream_from(rng.integers(10, 20, 200), rng.integers(10, 20, 200), np.sort(rng.uniform(0, 0.002, 200)), np.ones(200))
        labeling = cluster(events, EcdtParams())
        self.assertEqual(len(labeling.clusters), 1)
        self.assertEqual(labeling.noise_count, 0)

    def test_blobs_further_apart_than_2r(self):
        rng = np.random.default_rng(2)
        x = np.concatenate([rng.integers(10, 20, 200), rng.integers(50, 60, 200)])
        y = rng.integers(10, 20, 400)
        t = rng.uniform(0, 0.002, 400)
        order = np.argsort(t, kind='stable')
        labeling = cluster(stream_from(x[order], y[order], t[order], np.ones(400)), EcdtParams())
        self.assertEqual(len(labeling.clusters), 2)

    def test_matches_brute_force_reference(self):
        rng = np.random.default_rng(2024)
        for trial in range(50):
            events = random_stream(rng, int(rng.integers(20, 1001)))
            params = EcdtParams(
                k=int(rng.integers(3, 31)),
                r=float(rng.uniform(2.0, 9.0)),
                phi_min=float(rng.choice([0.5, 0.7, 0.9, 1.0])),
            )
            labeling = cluster(events, params)
            core, labels = brute_force_kcscan(events.scaled_points(params.time_scale), events.p, params.k, params.r, params.phi_min)
            with self.subTest(trial=trial, k=params.k, r=params.r):
                np.testing.assert_array_equal(labeling.core, core)
                np.testing.assert_array_equal(labeling.labels, labels)

    def test_reduces_to_dbscan_on_single_polarity(self):
        rng = np.random.default_rng(77)
        for trial in range(20):
            events = random_stream(rng, int(rng.integers(20, 1001)), mixed=False)
            k = int(rng.integers(3, 31))
            r = float(rng.uniform(2.0, 9.0))
            labeling = cluster(events, EcdtParams(k=k, r=r, phi_min=float(rng.uniform(0.1, 1.0))))
            _, labels = brute_force_kcscan(events.scaled_points(5000.0), np.ones(len(events)), k, r, 0.0)
            with self.subTest(trial=trial):
                self.assertEqual(partition(labeling.labels), partition(labels))

    def test_clusters_are_single_polarity_and_cover_labels(self):
        events = random_stream(np.random.default_rng(3), 900)
        labeling = cluster(events, EcdtParams(k=6, r=6.0, phi_min=0.8))
        self.assertNotIn(-2, labeling.labels)
        for cid, members in labeling.clusters.items():
            self.assertEqual(len(set(members.events.p.tolist())), 1)
            np.testing.assert_array_equal(np.flatnonzero(labeling.labels == cid), np.sort(members.indices))

    def test_worker_count_does_not_change_labels(self):
        events = random_stream(np.random.default_rng(8), 1000)
        params = EcdtParams(k=6, r=6.0, phi_min=0.8)
        np.testing.assert_array_equal(cluster(events, params, workers=1).labels, cluster(events, params, workers=8).labels)

    def test_crossing_bands_barrier(self):
        for seed in range(10):
            scene = gen_crossing_bands(seed=seed)
            labeling = cluster(scene.events, EcdtParams())
            with self.subTest(seed=seed):
                self.assertGreaterEqual(len(labeling.clusters), 4)
                for cid in labeling.clusters:
                    segments = set(scene.labels[labeling.labels == cid].tolist()) - {JUNCTION}
                    self.assertLessEqual(len(segments), 1, f'cluster {cid} spans segments {segments}')
