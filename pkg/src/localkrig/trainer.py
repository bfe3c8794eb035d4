"""Hyperparameter estimation by batched nearest-neighbor LOO cross-validation.

Free kernel parameters minimize the mean squared leave-one-out error
over a random batch of training points, each predicted from its k
nearest neighbors (neighbor sets range over the full training set, not
just batch members). The scale sigma_sq is held at 1 during the
minimization and recovered afterwards in closed form.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import linalg
from .errors import ParameterError, SingularMatrixError
from .kernels import HyperParams, matern

logger = logging.getLogger(__name__)

FD_REL_STEP = 1e-6
CONVERGENCE_FTOL = 1e-8
MAX_ITERATIONS = 100


@dataclass
class TrainingSet:
    """Training locations and residual-scale responses."""

    locations: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float)
        self.responses = np.asarray(self.responses, dtype=float)
        if self.locations.ndim != 2:
            raise ParameterError(f"locations must be (n, p), got {self.locations.shape}")
        if self.responses.shape != (self.locations.shape[0],):
            raise ParameterError("responses must be one value per location")
        if not (np.isfinite(self.locations).all() and np.isfinite(self.responses).all()):
            raise ParameterError("training data must be finite")
        if self.locations.shape[0] < 1:
            raise ParameterError("need at least 1 training point")

    @property
    def n(self) -> int:
        return self.locations.shape[0]


@dataclass(frozen=True)
class BatchSpec:
    """How to sample the training batch the objective averages over."""

    size: int
    seed: int = 0
    mode: str = "uniform_without_replacement"

    def __post_init__(self):
        if self.size < 1:
            raise ParameterError(f"batch size must be positive, got {self.size}")
        if self.mode != "uniform_without_replacement":
            raise ParameterError(f"unknown sampling mode {self.mode!r}")


@dataclass
class TrainResult:
    """Outcome of one optimize call."""

    params: HyperParams
    trajectory: list
    iterations: int
    converged: bool
    timings: dict = field(default_factory=dict)
    sigma_degenerate: bool = False
    batch_indices: np.ndarray | None = None


@dataclass
class Neighborhoods:
    """Prefetched per-batch-element neighbor geometry and responses.

    Holding these fixed makes each objective evaluation a pure map of
    the kernel parameters with cost O(b k^3), independent of n.
    """

    ids: np.ndarray
    dists: np.ndarray
    local_dists: np.ndarray
    y_neighbors: np.ndarray
    y_batch: np.ndarray


def sample_batch(n: int, spec: BatchSpec) -> np.ndarray:
    """Distinct training indices drawn uniformly without replacement."""
    if spec.size > n:
        raise ParameterError(f"batch size {spec.size} exceeds training size {n}")
    return np.random.default_rng(spec.seed).choice(n, size=spec.size, replace=False)


def prefetch_neighborhoods(train: TrainingSet, index, batch_ids, k: int) -> Neighborhoods:
    """Gather neighbor ids, distances, and responses for a batch."""
    batch_ids = np.asarray(batch_ids, dtype=np.int64)
    ids, dists = index.query_loo_many(batch_ids, k)
    pts = train.locations[ids]
    diff = pts[:, :, None, :] - pts[:, None, :, :]
    local = np.sqrt((diff * diff).sum(axis=-1))
    return Neighborhoods(
        ids=ids,
        dists=dists,
        local_dists=local,
        y_neighbors=train.responses[ids],
        y_batch=train.responses[batch_ids],
    )


def loo_predict_nn(train: TrainingSet, index, i: int, k: int, params: HyperParams) -> float:
    """Leave-one-out prediction of training point ``i`` from its k neighbors."""
    ids, d = index.query_loo(i, k)
    pts = train.locations[ids]
    diff = pts[:, None, :] - pts[None, :, :]
    K_local = matern(np.sqrt((diff * diff).sum(axis=-1)), params)
    k_row = matern(d, params)
    try:
        sol = linalg.solve_spd(K_local, train.responses[ids])
    except SingularMatrixError as e:
        raise SingularMatrixError(
            f"singular local covariance at training point {i}: {e}", minor=e.minor
        )
    return float(k_row @ sol)


def _stack_losses(params, hoods: Neighborhoods, workers: int = 1) -> np.ndarray:
    """Squared LOO errors per batch element, in batch order.

    Each element is an independent k x k solve; chunks only partition
    the stack, so the result is identical for any worker count.
    """
    b = hoods.y_batch.shape[0]
    out = np.empty(b)

    def run(lo, hi):
        K_local = matern(hoods.local_dists[lo:hi], params)
        k_rows = matern(hoods.dists[lo:hi], params)
        sol = linalg.solve_spd_stack(K_local, hoods.y_neighbors[lo:hi])
        pred = (k_rows * sol).sum(axis=1)
        out[lo:hi] = (hoods.y_batch[lo:hi] - pred) ** 2

    if workers <= 1 or b < 2 * workers:
        run(0, b)
    else:
        bounds = np.linspace(0, b, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run, bounds[j], bounds[j + 1]) for j in range(workers)]
            for f in futures:
                f.result()
    return out


def batched_loss(train: TrainingSet, index, batch_ids, k: int, params: HyperParams,
                 hoods: Neighborhoods | None = None, workers: int = 1) -> float:
    """Mean squared LOO error over a batch, Q_B(theta).

    Neighbor sets come from the full training set. The reduction runs in
    fixed batch order, so the value does not depend on ``workers``.
    """
    batch_ids = np.asarray(batch_ids, dtype=np.int64)
    if batch_ids.size == 0 or np.unique(batch_ids).size != batch_ids.size:
        raise ParameterError("batch indices must be nonempty and distinct")
    if batch_ids.min() < 0 or batch_ids.max() >= train.n:
        raise ParameterError("batch indices out of range")
    if hoods is None:
        hoods = prefetch_neighborhoods(train, index, batch_ids, k)
    try:
        losses = _stack_losses(params, hoods, workers)
    except SingularMatrixError as e:
        raise SingularMatrixError(
            f"singular local covariance within batch (training point "
            f"{batch_ids[e.element] if e.element is not None else 'unknown'}): {e}",
            minor=e.minor,
        )
    return float(np.mean(losses))


def estimate_sigma_sq(train: TrainingSet, index, batch_ids, k: int, params: HyperParams,
                      hoods: Neighborhoods | None = None) -> float:
    """Closed-form scale estimate after the shape parameters are fitted.

    sigma_hat^2 = (1/(k b)) sum_i y_i^T Omega_i^{-1} y_i over the batch,
    where Omega is the unit-scale local covariance.
    """
    batch_ids = np.asarray(batch_ids, dtype=np.int64)
    if hoods is None:
        hoods = prefetch_neighborhoods(train, index, batch_ids, k)
    unit = params.with_values(sigma_sq=1.0)
    omega = matern(hoods.local_dists, unit)
    quads = linalg.quad_form_stack(omega, hoods.y_neighbors)
    b, kk = hoods.y_neighbors.shape
    return float(quads.sum() / (kk * b))


def _fd_gradient(fun, x, fx, bounds):
    """Forward-difference gradient, stepping backwards at upper bounds."""
    g = np.empty_like(x)
    for j in range(x.size):
        h = FD_REL_STEP * max(abs(x[j]), FD_REL_STEP)
        lo, hi = bounds[j]
        if x[j] + h <= hi:
            g[j] = (fun(_bump(x, j, h)) - fx) / h
        else:
            g[j] = (fx - fun(_bump(x, j, -h))) / h
    return g


def _bump(x, j, h):
    out = x.copy()
    out[j] += h
    return out


def _golden_section(fun, lo, hi, tol=CONVERGENCE_FTOL, max_iter=200):
    """Minimize a univariate function on [lo, hi] by golden-section search."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(np.array([c])), fun(np.array([d]))
    it = 0
    while abs(b - a) > tol * max(1.0, abs(a) + abs(b)) and it < max_iter:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(np.array([c]))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(np.array([d]))
        it += 1
    x = c if fc < fd else d
    return np.array([x]), it


def optimize(train: TrainingSet, index, batch_spec: BatchSpec, k: int,
             init: HyperParams, method: str = "lbfgsb", workers: int = 1) -> TrainResult:
    """Fit the free hyperparameters on one fixed batch.

    The batch is sampled once before optimization begins, so the
    objective is deterministic during line searches. The best evaluated
    point is kept even if the optimizer's last step went uphill.

    Parameters
    ----------
    train : TrainingSet
    index : neighbor index over ``train.locations``
    batch_spec : BatchSpec
    k : int
        Neighborhood size; 1 <= k <= n - 1.
    init : HyperParams
        Starting values; must mark at least one parameter free.
        sigma_sq is forced to 1 for the minimization and replaced by its
        closed-form estimate in the returned parameters.
    method : str
        ``"lbfgsb"`` (bounded quasi-Newton with forward-difference
        gradients) or ``"golden"`` (derivative-free; single free
        parameter only).

    Returns
    -------
    TrainResult
    """
    if not init.free:
        raise ParameterError("optimize requires at least one free parameter")
    if not 1 <= k <= train.n - 1:
        raise ParameterError(f"k must be in [1, {train.n - 1}], got {k}")
    t0 = time.perf_counter()
    batch_ids = sample_batch(train.n, batch_spec)
    hoods = prefetch_neighborhoods(train, index, batch_ids, k)
    t_prefetch = time.perf_counter() - t0

    base = init.with_values(sigma_sq=1.0)
    bounds = base.free_bounds()
    best = {"f": np.inf, "x": None}

    def objective(vec):
        f = batched_loss(train, index, batch_ids, k,
                         base.with_free_vector(vec), hoods=hoods, workers=workers)
        if f < best["f"]:
            best["f"], best["x"] = f, np.array(vec, dtype=float)
        return f

    trajectory = []
    t0 = time.perf_counter()
    x0 = base.free_vector()
    if method == "golden":
        if len(bounds) != 1:
            raise ParameterError("golden-section search handles exactly one free parameter")
        xbest, iterations = _golden_section(objective, bounds[0][0], bounds[0][1])
        objective(xbest)
        converged = iterations < 200
        trajectory.append(best["f"])
    elif method == "lbfgsb":
        def value_and_grad(vec):
            f = objective(vec)
            trajectory.append(f)
            g = _fd_gradient(objective, np.asarray(vec, dtype=float), f, bounds)
            return f, g

        res = minimize(value_and_grad, x0=x0, jac=True, method="L-BFGS-B",
                       bounds=bounds,
                       options={"ftol": CONVERGENCE_FTOL, "maxiter": MAX_ITERATIONS})
        iterations = int(res.nit)
        converged = bool(res.success)
    else:
        raise ParameterError(f"unknown optimizer method {method!r}")
    t_opt = time.perf_counter() - t0

    fitted = base.with_free_vector(best["x"])
    t0 = time.perf_counter()
    sigma_hat = estimate_sigma_sq(train, index, batch_ids, k, fitted, hoods=hoods)
    t_sigma = time.perf_counter() - t0
    degenerate = not sigma_hat > 0
    if degenerate:
        logger.warning("closed-form scale estimate is %g; keeping sigma_sq = 1", sigma_hat)
    final = fitted.with_values(sigma_sq=sigma_hat if not degenerate else 1.0)
    return TrainResult(
        params=final,
        trajectory=trajectory,
        iterations=iterations,
        converged=converged,
        timings={"prefetch_s": t_prefetch, "optimize_s": t_opt, "sigma_sq_s": t_sigma},
        sigma_degenerate=degenerate,
        batch_indices=batch_ids,
    )
