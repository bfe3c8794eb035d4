"""Posterior prediction: local kriging at scale, dense kriging as oracle.

``predict_nn`` conditions each test point on its k nearest training
points only, costing O(k^3) per point. ``predict_full`` and
``log_likelihood`` form the dense n x n covariance and exist for
validation at small n; they refuse to run above a configurable cap.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import linalg
from .errors import ParameterError, SingularMatrixError
from .kernels import HyperParams, matern, pairwise_distances
from .trainer import TrainingSet

logger = logging.getLogger(__name__)

ORACLE_CAP = 2000
DEFAULT_LEVEL = 0.95


@dataclass
class PosteriorPrediction:
    """Predictive means, variances, and central intervals.

    ``clamped`` counts variances that came out numerically negative and
    were clamped to zero.
    """

    mean: np.ndarray
    variance: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    level: float
    clamped: int = 0


def _clamp_variance(variance: np.ndarray):
    """Clamp negative variances to zero, returning the count clamped."""
    neg = variance < 0
    count = int(neg.sum())
    if count:
        logger.warning("clamped %d negative predictive variance(s) to zero", count)
        variance = np.where(neg, 0.0, variance)
    return variance, count


def _interval(mean, variance, level):
    z = norm.ppf(0.5 + level / 2.0)
    half = z * np.sqrt(variance)
    return mean - half, mean + half


def predict_nn(train: TrainingSet, index, test_points, k: int, params: HyperParams,
               mean_model=None, level: float = DEFAULT_LEVEL,
               workers: int = 1) -> PosteriorPrediction:
    """Local-kriging posterior at each test point.

    Parameters
    ----------
    train : TrainingSet
        Residual-scale training data (trend already removed).
    index : neighbor index built over ``train.locations``
    test_points : (m, p) array
    k : int
        Neighbors per test point; 1 <= k <= n.
    params : HyperParams
        Fitted parameters including the estimated sigma_sq.
    mean_model : optional
        Fitted trend; its prediction is added back onto the mean.
    level : float
        Nominal central-interval level, in (0, 1).
    workers : int
        Thread count across test points; results do not depend on it.

    Returns
    -------
    PosteriorPrediction
    """
    test_points = np.atleast_2d(np.asarray(test_points, dtype=float))
    if not 0 < level < 1:
        raise ParameterError(f"interval level must be in (0, 1), got {level}")
    m = test_points.shape[0]
    prior = params.sigma_sq * (1.0 + params.tau_sq)
    if m == 0:
        empty = np.empty(0)
        return PosteriorPrediction(empty, empty, empty, empty, level)
    ids, dists = index.query(test_points, k)
    mean = np.empty(m)
    variance = np.empty(m)

    def run(lo_i, hi_i):
        pts = train.locations[ids[lo_i:hi_i]]
        diff = pts[:, :, None, :] - pts[:, None, :, :]
        K_local = matern(np.sqrt((diff * diff).sum(axis=-1)), params)
        k_rows = matern(dists[lo_i:hi_i], params)
        try:
            sol = linalg.solve_spd_stack(K_local, train.responses[ids[lo_i:hi_i]])
            sol_k = linalg.solve_spd_stack(K_local, k_rows)
        except SingularMatrixError as e:
            raise SingularMatrixError(
                f"singular local covariance at test point "
                f"{lo_i + e.element if e.element is not None else 'unknown'}: {e}",
                minor=e.minor,
            )
        mean[lo_i:hi_i] = (k_rows * sol).sum(axis=1)
        variance[lo_i:hi_i] = prior - (k_rows * sol_k).sum(axis=1)

    if workers <= 1 or m < 2 * workers:
        run(0, m)
    else:
        cuts = np.linspace(0, m, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for f in [pool.submit(run, cuts[j], cuts[j + 1]) for j in range(workers)]:
                f.result()

    if mean_model is not None:
        mean = mean + mean_model.predict(test_points)
    variance, clamped = _clamp_variance(variance)
    lo, hi = _interval(mean, variance, level)
    return PosteriorPrediction(mean, variance, lo, hi, level, clamped)


def predict_full(train: TrainingSet, test_points, params: HyperParams,
                 mean_model=None, level: float = DEFAULT_LEVEL,
                 cap: int = ORACLE_CAP) -> PosteriorPrediction:
    """Exact dense-kriging posterior; validation oracle for small n."""
    if train.n > cap:
        raise ParameterError(
            f"predict_full is a small-n oracle (n <= {cap}, got {train.n}); use predict_nn"
        )
    test_points = np.atleast_2d(np.asarray(test_points, dtype=float))
    if not 0 < level < 1:
        raise ParameterError(f"interval level must be in (0, 1), got {level}")
    K = matern(pairwise_distances(train.locations), params)
    diff = test_points[:, None, :] - train.locations[None, :, :]
    K_cross = matern(np.sqrt((diff * diff).sum(axis=-1)), params)
    alpha = linalg.solve_spd(K, train.responses)
    mean = K_cross @ alpha
    sol = linalg.solve_spd(K, K_cross.T)
    prior = params.sigma_sq * (1.0 + params.tau_sq)
    variance = prior - (K_cross.T * sol).sum(axis=0)
    if mean_model is not None:
        mean = mean + mean_model.predict(test_points)
    variance, clamped = _clamp_variance(variance)
    lo, hi = _interval(mean, variance, level)
    return PosteriorPrediction(mean, variance, lo, hi, level, clamped)


def log_likelihood(train: TrainingSet, params: HyperParams, cap: int = ORACLE_CAP) -> float:
    """Dense Gaussian log-density of the training responses.

    Returns ``-(n/2) log(2 pi) - (1/2) log|K| - (1/2) y^T K^{-1} y``.
    Validation oracle only; refuses n above the cap.
    """
    if train.n > cap:
        raise ParameterError(
            f"log_likelihood is a small-n oracle (n <= {cap}, got {train.n})"
        )
    K = matern(pairwise_distances(train.locations), params)
    L = linalg._cholesky_lower(K)
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    quad = linalg.quad_form(K, train.responses)
    n = train.n
    return -0.5 * n * np.log(2.0 * np.pi) - 0.5 * logdet - 0.5 * quad
