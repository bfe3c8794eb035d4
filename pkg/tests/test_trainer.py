"""Batched nearest-neighbor LOO training."""

import numpy as np
import pytest

from localkrig import linalg
from localkrig.data import simulate_gp
from localkrig.errors import ParameterError, SingularMatrixError
from localkrig.kernels import HyperParams, matern, pairwise_distances
from localkrig.neighbors import build
from localkrig.trainer import (BatchSpec, TrainingSet, batched_loss,
                               estimate_sigma_sq, loo_predict_nn, optimize,
                               prefetch_neighborhoods, sample_batch)


def make_train(n=120, seed=0, nu=0.8, rho=0.15, sigma_sq=2.0):
    rows = int(np.sqrt(n))
    ds, p = simulate_gp(rows, rows, HyperParams(
        sigma_sq=sigma_sq, rho=rho, nu=nu, tau_sq=0.001), seed=seed)
    train = TrainingSet(ds.train_locations(), ds.train_responses())
    return train, build(train.locations), p


def dense_loo_predictions(train, params):
    """Reference LOO built from the full covariance, one dense solve per point."""
    K = matern(pairwise_distances(train.locations), params)
    preds = np.empty(train.n)
    for i in range(train.n):
        rest = np.delete(np.arange(train.n), i)
        sol = np.linalg.solve(K[np.ix_(rest, rest)], train.responses[rest])
        preds[i] = K[i, rest] @ sol
    return preds


def test_training_set_validation():
    with pytest.raises(ParameterError):
        TrainingSet(np.zeros((3, 2)), np.array([1.0, np.nan, 2.0]))
    with pytest.raises(ParameterError):
        TrainingSet(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ParameterError):
        TrainingSet(np.zeros((3, 2)), np.zeros(4))
    with pytest.raises(ParameterError):
        TrainingSet(np.zeros(3), np.zeros(3))


def test_batch_spec_and_sampling():
    with pytest.raises(ParameterError):
        BatchSpec(size=0)
    with pytest.raises(ParameterError):
        BatchSpec(size=5, mode="bootstrap")
    ids = sample_batch(100, BatchSpec(size=30, seed=4))
    assert ids.shape == (30,)
    assert np.unique(ids).size == 30
    assert ids.min() >= 0 and ids.max() < 100
    np.testing.assert_array_equal(ids, sample_batch(100, BatchSpec(size=30, seed=4)))
    assert not np.array_equal(ids, sample_batch(100, BatchSpec(size=30, seed=5)))
    with pytest.raises(ParameterError):
        sample_batch(10, BatchSpec(size=11))


def test_prefetch_shapes_and_content():
    train, idx, p = make_train(n=100)
    batch = np.array([3, 17, 40])
    hoods = prefetch_neighborhoods(train, idx, batch, k=6)
    assert hoods.ids.shape == (3, 6)
    assert hoods.dists.shape == (3, 6)
    assert hoods.local_dists.shape == (3, 6, 6)
    np.testing.assert_array_equal(hoods.y_batch, train.responses[batch])
    np.testing.assert_array_equal(hoods.y_neighbors, train.responses[hoods.ids])
    for r in range(3):
        assert np.array_equal(hoods.local_dists[r], hoods.local_dists[r].T)
        assert np.all(np.diag(hoods.local_dists[r]) == 0.0)
        np.testing.assert_allclose(
            hoods.dists[r],
            np.linalg.norm(train.locations[hoods.ids[r]] - train.locations[batch[r]], axis=1),
            rtol=1e-12)


def test_loo_predict_single_neighbor_closed_form():
    # k=1: prediction = [matern(d) / (sigma^2 (1+tau^2))] * y_neighbor.
    locs = np.array([[0.0, 0.0], [0.3, 0.0], [2.0, 0.0]])
    train = TrainingSet(locs, np.array([5.0, -2.0, 1.0]))
    idx = build(locs)
    p = HyperParams(sigma_sq=2.0, rho=0.5, nu=0.5, tau_sq=0.01)
    got = loo_predict_nn(train, idx, 0, 1, p)
    expected = (matern(0.3, p) / (2.0 * 1.01)) * (-2.0)
    assert got == pytest.approx(expected, rel=1e-12)


def test_loo_predict_coincident_neighbor_interpolates():
    locs = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0]])
    train = TrainingSet(locs, np.array([3.7, 9.9, 0.0]))
    idx = build(locs)
    p = HyperParams(sigma_sq=1.5, rho=1.0, nu=1.5, tau_sq=0.0)
    assert loo_predict_nn(train, idx, 0, 1, p) == pytest.approx(9.9, rel=1e-12)
    assert loo_predict_nn(train, idx, 1, 1, p) == pytest.approx(3.7, rel=1e-12)


def test_full_neighborhood_matches_dense_loo():
    train, idx, p = make_train(n=64, seed=3)
    preds = dense_loo_predictions(train, p)
    for i in (0, 13, 50):
        got = loo_predict_nn(train, idx, i, train.n - 1, p)
        assert got == pytest.approx(preds[i], rel=1e-8)
    batch = np.arange(train.n)
    loss = batched_loss(train, idx, batch, train.n - 1, p)
    expected = float(np.mean((train.responses - preds) ** 2))
    assert loss == pytest.approx(expected, rel=1e-8)


def test_batched_loss_compositional_oracle():
    train, idx, p = make_train(n=144, seed=5)
    batch = sample_batch(train.n, BatchSpec(size=64, seed=9))
    loss = batched_loss(train, idx, batch, 20, p)
    per_point = [
        (train.responses[i] - loo_predict_nn(train, idx, i, 20, p)) ** 2
        for i in batch
    ]
    assert loss == pytest.approx(float(np.mean(per_point)), rel=1e-9)


def test_batched_loss_zero_on_duplicated_points():
    # Every point has an exact duplicate carrying the same response, so
    # the k=1 LOO prediction is exact and the loss vanishes.
    rng = np.random.default_rng(2)
    base = rng.uniform(size=(30, 2))
    locs = np.vstack([base, base])
    y = np.concatenate([rng.standard_normal(30)] * 2)
    train = TrainingSet(locs, y)
    idx = build(locs)
    p = HyperParams(nu=1.5, rho=0.3, tau_sq=0.0)
    assert batched_loss(train, idx, np.arange(60), 1, p) == 0.0


def test_batched_loss_single_element():
    train, idx, p = make_train(n=81, seed=7)
    loss = batched_loss(train, idx, np.array([12]), 10, p)
    resid = train.responses[12] - loo_predict_nn(train, idx, 12, 10, p)
    assert loss == pytest.approx(float(resid**2), rel=1e-12)


def test_batched_loss_validation():
    train, idx, p = make_train(n=49)
    with pytest.raises(ParameterError):
        batched_loss(train, idx, np.array([], dtype=int), 5, p)
    with pytest.raises(ParameterError):
        batched_loss(train, idx, np.array([1, 1]), 5, p)
    with pytest.raises(ParameterError):
        batched_loss(train, idx, np.array([0, 49]), 5, p)


def test_batched_loss_worker_invariance():
    train, idx, p = make_train(n=100, seed=11)
    batch = sample_batch(train.n, BatchSpec(size=32, seed=3))
    single = batched_loss(train, idx, batch, 12, p, workers=1)
    multi = batched_loss(train, idx, batch, 12, p, workers=4)
    assert single == multi


def test_batched_loss_reports_offending_batch_element(monkeypatch):
    train, idx, p = make_train(n=49)
    batch = np.array([5, 9, 31])

    def boom(A, B):
        raise SingularMatrixError("not positive definite", minor=2, element=1)

    monkeypatch.setattr(linalg, "solve_spd_stack", boom)
    with pytest.raises(SingularMatrixError, match="training point 9"):
        batched_loss(train, idx, batch, 5, p)


def test_estimate_sigma_sq_single_neighbor_closed_form():
    # k=1: Omega is the scalar 1+tau^2, so
    # sigma_hat^2 = mean(y_neighbor^2) / (1+tau^2).
    train, idx, _ = make_train(n=64, seed=13)
    p = HyperParams(rho=0.2, nu=0.8, tau_sq=0.001)
    batch = np.arange(train.n)
    hoods = prefetch_neighborhoods(train, idx, batch, k=1)
    got = estimate_sigma_sq(train, idx, batch, 1, p, hoods=hoods)
    expected = float(np.mean(hoods.y_neighbors[:, 0] ** 2) / 1.001)
    assert got == pytest.approx(expected, rel=1e-12)


def test_estimate_sigma_sq_ignores_input_scale():
    train, idx, _ = make_train(n=100, seed=17)
    batch = sample_batch(train.n, BatchSpec(size=40, seed=1))
    p1 = HyperParams(sigma_sq=1.0, rho=0.15, nu=0.8, tau_sq=0.001)
    p9 = p1.with_values(sigma_sq=9.0)
    a = estimate_sigma_sq(train, idx, batch, 15, p1)
    b = estimate_sigma_sq(train, idx, batch, 15, p9)
    assert a == pytest.approx(b, rel=1e-12)
    assert a > 0


def test_optimize_recovers_deterministically():
    train, idx, _ = make_train(n=400, seed=42, nu=0.8, rho=0.1)
    init = HyperParams(rho=0.1, nu=1.0, tau_sq=0.001, free={"nu": (0.1, 5.0)})
    spec = BatchSpec(size=200, seed=0)
    res = optimize(train, idx, spec, k=30, init=init)
    assert res.converged
    assert 0.1 <= res.params.nu <= 5.0
    assert res.params.sigma_sq > 0
    assert res.batch_indices.shape == (200,)
    assert set(res.timings) == {"prefetch_s", "optimize_s", "sigma_sq_s"}
    # Identical run reproduces the fit bitwise.
    res2 = optimize(train, idx, spec, k=30, init=init)
    assert res2.params.nu == res.params.nu
    assert res2.params.sigma_sq == res.params.sigma_sq
    # Final objective never exceeds the initial one.
    f_final = batched_loss(train, idx, res.batch_indices, 30,
                           res.params.with_values(sigma_sq=1.0))
    assert f_final <= res.trajectory[0]


def test_optimize_stationary_start_stops_quickly():
    train, idx, _ = make_train(n=400, seed=42, nu=0.8, rho=0.1)
    init = HyperParams(rho=0.1, nu=1.0, tau_sq=0.001, free={"nu": (0.1, 5.0)})
    spec = BatchSpec(size=200, seed=0)
    first = optimize(train, idx, spec, k=30, init=init)
    restart = optimize(train, idx, spec, k=30,
                       init=init.with_values(nu=first.params.nu))
    assert restart.iterations <= 2
    assert restart.params.nu == pytest.approx(first.params.nu, abs=1e-3)


def test_optimize_golden_agrees_with_lbfgsb():
    train, idx, _ = make_train(n=400, seed=42, nu=0.8, rho=0.1)
    init = HyperParams(rho=0.1, nu=1.0, tau_sq=0.001, free={"nu": (0.1, 5.0)})
    spec = BatchSpec(size=200, seed=0)
    lb = optimize(train, idx, spec, k=30, init=init)
    gd = optimize(train, idx, spec, k=30, init=init, method="golden")
    assert gd.params.nu == pytest.approx(lb.params.nu, abs=0.02)
    assert gd.converged


def test_optimize_from_far_init_reaches_same_minimum():
    train, idx, _ = make_train(n=400, seed=42, nu=0.8, rho=0.1)
    free = {"nu": (0.1, 5.0)}
    spec = BatchSpec(size=200, seed=0)
    near = optimize(train, idx, spec, k=30,
                    init=HyperParams(rho=0.1, nu=1.0, tau_sq=0.001, free=free))
    far = optimize(train, idx, spec, k=30,
                   init=HyperParams(rho=0.1, nu=2.0, tau_sq=0.001, free=free))
    assert far.params.nu == pytest.approx(near.params.nu, abs=0.05)


def test_optimize_validation():
    train, idx, _ = make_train(n=49)
    spec = BatchSpec(size=10, seed=0)
    with pytest.raises(ParameterError):
        optimize(train, idx, spec, k=5, init=HyperParams())
    free = HyperParams(free={"nu": (0.1, 5.0)})
    with pytest.raises(ParameterError):
        optimize(train, idx, spec, k=49, init=free)
    with pytest.raises(ParameterError):
        optimize(train, idx, spec, k=5, init=free, method="newton")
    two_free = HyperParams(free={"nu": (0.1, 5.0), "rho": (0.01, 10.0)})
    with pytest.raises(ParameterError):
        optimize(train, idx, spec, k=5, init=two_free, method="golden")
