"""Matern covariance evaluation and local covariance assembly.

The covariance of the field at distance ``d`` is

    sigma_sq * [ (2^(1-nu)/Gamma(nu)) (sqrt(2 nu) d/rho)^nu K_nu(sqrt(2 nu) d/rho)
                 + tau_sq * 1{d = 0} ]

where ``K_nu`` is the modified Bessel function of the second kind. At
``d = 0`` the Matern term is taken at its limit 1, so the value is
``sigma_sq * (1 + tau_sq)``. Closed forms replace the Bessel evaluation
at ``nu`` in {0.5, 1.5, 2.5}, and the Gaussian (RBF) limit replaces it
for large ``nu``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, kve

from .errors import ParameterError

# Beyond this smoothness the Bessel recurrences lose accuracy and the
# kernel is pointwise indistinguishable from its Gaussian limit.
RBF_NU_THRESHOLD = 30.0

_FREEABLE = ("nu", "rho", "tau_sq")


@dataclass(frozen=True)
class HyperParams:
    """Kernel hyperparameters with optional optimizer exposure.

    Parameters
    ----------
    sigma_sq : float
        Marginal variance, in response-variance units. Must be positive.
        Never exposed to the optimizer; it is held at 1 during training
        and estimated in closed form afterwards.
    rho : float
        Length scale in normalized-coordinate units. Must be positive.
    nu : float
        Smoothness. Must be positive.
    tau_sq : float
        Nugget relative to ``sigma_sq`` (dimensionless). Must be
        nonnegative; applies only at exactly zero distance.
    free : mapping or tuple
        Parameters the optimizer may vary, as ``{name: (lo, hi)}`` with
        ``0 < lo < hi``. Only ``nu``, ``rho``, ``tau_sq`` may be freed.
    """

    sigma_sq: float = 1.0
    rho: float = 1.0
    nu: float = 1.0
    tau_sq: float = 0.001
    free: tuple = ()

    def __post_init__(self):
        for name in ("sigma_sq", "rho", "nu"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be positive and finite, got {v!r}")
        if not (np.isfinite(self.tau_sq) and self.tau_sq >= 0):
            raise ParameterError(f"tau_sq must be nonnegative, got {self.tau_sq!r}")
        if isinstance(self.free, dict):
            items = dict(self.free)
        else:
            items = {}
            for entry in self.free:
                if len(entry) == 3:
                    name, lo, hi = entry
                else:
                    name, (lo, hi) = entry
                items[name] = (lo, hi)
        norm = []
        for name in sorted(items):
            lo, hi = items[name]
            if name == "sigma_sq":
                raise ParameterError("sigma_sq cannot be freed; it is estimated in closed form")
            if name not in _FREEABLE:
                raise ParameterError(f"unknown free parameter {name!r}")
            if not (np.isfinite(lo) and np.isfinite(hi) and 0 < lo < hi):
                raise ParameterError(f"free parameter {name!r} needs 0 < lo < hi, got ({lo}, {hi})")
            norm.append((name, float(lo), float(hi)))
        object.__setattr__(self, "free", tuple(norm))

    @property
    def free_names(self) -> tuple:
        return tuple(name for name, _, _ in self.free)

    def free_bounds(self) -> list:
        return [(lo, hi) for _, lo, hi in self.free]

    def free_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in self.free_names])

    def with_values(self, **values) -> "HyperParams":
        """Return a copy with the given parameter values replaced."""
        return dataclasses.replace(self, **values)

    def with_free_vector(self, vec) -> "HyperParams":
        """Return a copy with free parameters set from an optimizer vector."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (len(self.free),):
            raise ParameterError(f"expected {len(self.free)} free values, got shape {vec.shape}")
        return self.with_values(**dict(zip(self.free_names, vec.tolist())))


def _matern_shape(x: np.ndarray, nu: float) -> np.ndarray:
    """Unit-variance Matern shape via the general Bessel path.

    ``x = sqrt(2 nu) d / rho`` is the scaled distance. Evaluated in log
    space with the exponentially scaled Bessel function so that neither
    ``x**nu`` underflow nor ``K_nu`` overflow occurs. Inputs are deduped
    first; gridded data has few distinct distances and the Bessel call
    dominates the cost.
    """
    u, inv = np.unique(x, return_inverse=True)
    out = np.ones_like(u)
    # Below this the shape is 1 to double precision; evaluating kve there
    # would overflow for small nu.
    cut = 10.0 ** (-17.0 / min(2.0 * nu, 2.0))
    m = u > cut
    xm = u[m]
    logpre = (1.0 - nu) * math.log(2.0) - gammaln(nu) + nu * np.log(xm)
    out[m] = np.exp(logpre - xm) * kve(nu, xm)
    return out[inv].reshape(x.shape)


def matern(d, params: HyperParams, force_general: bool = False):
    """Matern covariance at distance(s) ``d``.

    Parameters
    ----------
    d : float or ndarray
        Nonnegative Euclidean distance(s) in the same units as ``rho``.
    params : HyperParams
        Kernel hyperparameters.
    force_general : bool
        Skip the closed-form and RBF-limit fast paths; used to test
        their consistency with the Bessel path.

    Returns
    -------
    float or ndarray
        Covariance value(s), shaped like ``d``.
    """
    scalar = np.isscalar(d) or (isinstance(d, np.ndarray) and d.ndim == 0)
    d = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ParameterError("distances must be finite and nonnegative")
    nu, rho = params.nu, params.rho
    if not force_general and nu == 0.5:
        shape = np.exp(-d / rho)
    elif not force_general and nu == 1.5:
        s = math.sqrt(3.0) * d / rho
        shape = (1.0 + s) * np.exp(-s)
    elif not force_general and nu == 2.5:
        s = math.sqrt(5.0) * d / rho
        shape = (1.0 + s + s * s / 3.0) * np.exp(-s)
    elif not force_general and nu > RBF_NU_THRESHOLD:
        shape = np.exp(-0.5 * (d / rho) ** 2)
    else:
        shape = _matern_shape(math.sqrt(2.0 * nu) * d / rho, nu)
    out = params.sigma_sq * (shape + params.tau_sq * (d == 0.0))
    return float(out) if scalar else out


def cross_covariance(center, neighbors, params: HyperParams) -> np.ndarray:
    """Covariance row between one location and its neighbors.

    Parameters
    ----------
    center : (p,) array
    neighbors : (k, p) array
    params : HyperParams

    Returns
    -------
    (k,) ndarray
        ``matern(||center - neighbor_j||, params)`` per neighbor. The
        nugget applies only at exactly zero distance.
    """
    center = np.asarray(center, dtype=float)
    neighbors = np.asarray(neighbors, dtype=float)
    if neighbors.ndim != 2 or neighbors.size == 0:
        raise ParameterError("neighbors must be a nonempty (k, p) array")
    if center.shape != (neighbors.shape[1],):
        raise ParameterError(
            f"center has dimension {center.shape}, neighbors have {neighbors.shape[1]}"
        )
    d = np.sqrt(((neighbors - center) ** 2).sum(axis=1))
    return matern(d, params)


def local_covariance(neighbors, params: HyperParams) -> np.ndarray:
    """Covariance matrix of a neighbor set.

    Parameters
    ----------
    neighbors : (k, p) array
    params : HyperParams

    Returns
    -------
    (k, k) ndarray
        Exactly symmetric; diagonal entries equal
        ``sigma_sq * (1 + tau_sq)``.
    """
    neighbors = np.asarray(neighbors, dtype=float)
    if neighbors.ndim != 2 or neighbors.size == 0:
        raise ParameterError("neighbors must be a nonempty (k, p) array")
    return matern(pairwise_distances(neighbors), params)


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    """Exactly symmetric pairwise Euclidean distance matrix.

    ``(a - b)**2`` equals ``(b - a)**2`` in floating point, so the matrix
    is symmetric by construction rather than by post-symmetrization.
    """
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))
