import numpy as np
import pytest

from sacloc.errors import TooFewPoints
from sacloc.regions import assign_region, assign_regions, kmeans_fit
from sacloc.rng import stream


def brute_force_assign(centroids, point):
    d2 = np.square(centroids - point).sum(axis=1)
    return int(np.argmin(d2))


class TestKmeansFit:
    def test_two_symmetric_clusters(self):
        pts = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
        model = kmeans_fit(pts, k=2, seed=1)
        got = sorted(map(tuple, np.round(model.centroids, 9).tolist()))
        assert got == [(0.0, 0.5), (10.0, 0.5)]

    def test_k1_is_mean(self):
        pts = stream(2, "pts").normal(size=(50, 2))
        model = kmeans_fit(pts, k=1, seed=0)
        assert np.allclose(model.centroids[0], pts.mean(axis=0))

    def test_k_equals_n(self):
        pts = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
        model = kmeans_fit(pts, k=3, seed=3)
        got = sorted(map(tuple, model.centroids.tolist()))
        assert got == sorted(map(tuple, pts.tolist()))
        assert model.objective_history[-1] == 0.0

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            kmeans_fit(np.zeros((2, 2)), k=3, seed=0)

    def test_too_few_distinct_points(self):
        pts = np.zeros((10, 2))
        with pytest.raises(TooFewPoints):
            kmeans_fit(pts, k=2, seed=0)

    def test_deterministic(self):
        pts = stream(5, "pts").normal(size=(200, 2)) * 10
        a = kmeans_fit(pts, k=4, seed=7)
        b = kmeans_fit(pts, k=4, seed=7)
        assert np.array_equal(a.centroids, b.centroids)

    def test_objective_non_increasing(self):
        pts = stream(6, "pts").normal(size=(300, 2)) * 5
        model = kmeans_fit(pts, k=5, seed=1)
        hist = model.objective_history
        assert len(hist) >= 2
        assert all(a >= b - 1e-9 for a, b in zip(hist, hist[1:]))

    def test_recovers_separated_blobs(self):
        # blob separation (>= 100 m) dwarfs the spread (1 m): the fitted
        # partition must match the generating labels exactly
        rng = stream(9, "blobs")
        centers = np.array(
            [[0.0, 0.0], [100.0, 0.0], [0.0, 100.0], [100.0, 100.0], [50.0, 220.0]])
        labels = np.repeat(np.arange(5), 60)
        pts = centers[labels] + rng.normal(scale=1.0, size=(300, 2))
        model = kmeans_fit(pts, k=5, seed=4)
        fitted = assign_regions(model, pts)
        # agreement up to label permutation: each true blob maps to exactly
        # one fitted label and vice versa
        mapping = {}
        for true, fit in zip(labels, fitted):
            mapping.setdefault(true, set()).add(fit)
        assert all(len(v) == 1 for v in mapping.values())
        assert len({v.pop() for v in mapping.values()}) == 5


class TestAssign:
    def test_exact_centroid(self):
        model = kmeans_fit(np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]]), 3, seed=0)
        for r in range(3):
            assert assign_region(model, model.centroids[r]) == r

    def test_tie_breaks_to_lowest_id(self):
        pts = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
        model = kmeans_fit(pts, k=2, seed=1)
        mid = model.centroids.mean(axis=0)
        assert assign_region(model, mid) == 0

    def test_nearest_wins(self):
        pts = np.array([[0.0, 0.0]] * 3 + [[10.0, 0.0]] * 3)
        model = kmeans_fit(pts + stream(1, "j").normal(scale=1e-3, size=(6, 2)),
                           k=2, seed=2)
        order = np.argsort(model.centroids[:, 0])
        assert assign_region(model, np.array([4.0, 0.0])) == order[0]

    def test_matches_brute_force_scan(self):
        pts = stream(11, "pts").normal(size=(500, 2)) * 20
        model = kmeans_fit(pts, k=6, seed=3)
        queries = stream(12, "q").normal(size=(10_000, 2)) * 25
        fast = assign_regions(model, queries)
        for q, got in zip(queries, fast):
            assert got == brute_force_assign(model.centroids, q)
