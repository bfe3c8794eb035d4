"""Neighbor index construction, ordering, and self-exclusion."""

import numpy as np
import pytest

from localkrig.errors import DataError, ParameterError
from localkrig.neighbors import build


def brute_knn(coords, point, k, exclude=None):
    """Reference ordering: nondecreasing distance, ties by ascending id."""
    ids = np.arange(coords.shape[0])
    if exclude is not None:
        ids = ids[ids != exclude]
    d = np.sqrt(((coords[ids] - point) ** 2).sum(axis=1))
    order = np.lexsort((ids, d))[:k]
    return ids[order], d[order]


def test_build_validation():
    with pytest.raises(DataError):
        build([[0.0, 0.0]])
    with pytest.raises(DataError):
        build([[0.0, np.nan], [1.0, 1.0]])
    with pytest.raises(ParameterError):
        build([[0.0, 0.0], [1.0, 1.0]], backend="annoy")
    with pytest.raises(ParameterError):
        build(np.zeros(5))


def test_query_collinear_example():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    idx = build(pts)
    ids, dist = idx.query([0.1, 0.0], 3)
    np.testing.assert_array_equal(ids[0], [0, 1, 2])
    np.testing.assert_allclose(dist[0], [0.1, 0.9, 1.9], rtol=1e-12)


def test_tie_break_by_ascending_index():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    idx = build(pts)
    ids, dist = idx.query([0.0, 0.0], 3)
    np.testing.assert_array_equal(ids[0], [0, 1, 2])
    np.testing.assert_array_equal(dist[0], [0.0, 1.0, 1.0])


def test_grid_ties_match_brute_force():
    x, y = np.meshgrid(np.arange(7.0), np.arange(7.0))
    pts = np.column_stack([x.ravel(), y.ravel()])
    idx = build(pts)
    ids, dist = idx.query(pts, 10)
    for r in range(pts.shape[0]):
        bid, bd = brute_knn(pts, pts[r], 10)
        np.testing.assert_array_equal(ids[r], bid)
        np.testing.assert_allclose(dist[r], bd, rtol=1e-12)


def test_query_matches_brute_force_random():
    rng = np.random.default_rng(17)
    pts = rng.uniform(size=(300, 2))
    q = rng.uniform(size=(40, 2))
    idx = build(pts)
    ids, dist = idx.query(q, 20)
    for r in range(40):
        bid, bd = brute_knn(pts, q[r], 20)
        np.testing.assert_array_equal(ids[r], bid)
        np.testing.assert_allclose(dist[r], bd, rtol=1e-12)


def test_loo_excludes_self_by_index():
    rng = np.random.default_rng(8)
    pts = rng.uniform(size=(500, 2))
    idx = build(pts)
    all_ids = np.arange(500)
    ids, dist = idx.query_loo_many(all_ids, 5)
    assert not np.any(ids == all_ids[:, None])
    assert np.all(np.diff(dist, axis=1) >= 0)


def test_duplicate_locations_stay_neighbors():
    pts = np.array([[0.0, 0.0], [5.0, 5.0], [0.0, 0.0], [1.0, 0.0]])
    idx = build(pts)
    ids, dist = idx.query_loo(0, 2)
    np.testing.assert_array_equal(ids, [2, 3])
    np.testing.assert_array_equal(dist, [0.0, 1.0])
    ids, dist = idx.query_loo(2, 1)
    assert ids[0] == 0 and dist[0] == 0.0


def test_loo_matches_brute_force():
    rng = np.random.default_rng(21)
    pts = rng.uniform(size=(200, 2))
    idx = build(pts)
    sample = np.array([0, 7, 54, 199])
    ids, dist = idx.query_loo_many(sample, 15)
    for r, i in enumerate(sample):
        bid, bd = brute_knn(pts, pts[i], 15, exclude=i)
        np.testing.assert_array_equal(ids[r], bid)
        np.testing.assert_allclose(dist[r], bd, rtol=1e-12)


def test_k_bounds():
    pts = np.random.default_rng(0).uniform(size=(10, 2))
    idx = build(pts)
    with pytest.raises(ParameterError):
        idx.query(pts[:1], 0)
    with pytest.raises(ParameterError):
        idx.query(pts[:1], 11)
    ids, _ = idx.query(pts[:1], 10)
    assert ids.shape == (1, 10)
    with pytest.raises(ParameterError):
        idx.query_loo(0, 10)
    ids, _ = idx.query_loo(0, 9)
    assert ids.shape == (9,)


def test_exact_backend_is_deterministic():
    rng = np.random.default_rng(33)
    pts = rng.uniform(size=(150, 2))
    q = rng.uniform(size=(20, 2))
    a = build(pts).query(q, 12)
    b = build(pts).query(q, 12)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_higher_dimensional_brute_path():
    rng = np.random.default_rng(4)
    pts = rng.uniform(size=(80, 5))
    q = rng.uniform(size=(10, 5))
    idx = build(pts)
    ids, dist = idx.query(q, 8)
    for r in range(10):
        bid, bd = brute_knn(pts, q[r], 8)
        np.testing.assert_array_equal(ids[r], bid)
        np.testing.assert_allclose(dist[r], bd, rtol=1e-12)


def test_approximate_small_cloud_agrees_with_exact():
    rng = np.random.default_rng(6)
    pts = rng.uniform(size=(400, 2))
    approx = build(pts, backend="approximate", seed=1)
    exact = build(pts)
    q = rng.uniform(size=(30, 2))
    aids, adist = approx.query(q, 10)
    eids, edist = exact.query(q, 10)
    recall = np.mean([len(set(aids[r]) & set(eids[r])) / 10 for r in range(30)])
    assert recall >= 0.95
    # Distances of returned neighbors are true distances, sorted.
    assert np.all(np.diff(adist, axis=1) >= 0)


def test_approximate_loo_excludes_self():
    rng = np.random.default_rng(14)
    pts = rng.uniform(size=(300, 2))
    approx = build(pts, backend="approximate", seed=2)
    sample = np.arange(0, 300, 7)
    ids, _ = approx.query_loo_many(sample, 8)
    assert not np.any(ids == sample[:, None])


@pytest.mark.slow
def test_approximate_recall_at_50_on_10k_cloud():
    # Fixed-seed 10k uniform cloud, default build parameters.
    rng = np.random.default_rng(2024)
    pts = rng.uniform(size=(10_000, 2))
    approx = build(pts, backend="approximate", seed=3)
    exact = build(pts)
    q = rng.uniform(size=(200, 2))
    aids, _ = approx.query(q, 50)
    eids, _ = exact.query(q, 50)
    recall = np.mean([len(set(aids[r]) & set(eids[r])) / 50 for r in range(200)])
    assert recall >= 0.95
