"""Dense symmetric positive definite solves for small local systems.

Everything here is Cholesky without pivoting. A factorization that fails
is retried once with a diagonal jitter of ``1e-10 * mean(diag)``; the
retry is logged, and a second failure raises
:class:`~localkrig.errors.SingularMatrixError` carrying the 1-based
index of the offending leading minor.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotrf

from .errors import ParameterError, SingularMatrixError

logger = logging.getLogger(__name__)

JITTER_SCALE = 1e-10


def _cholesky_lower(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with one jitter retry.

    Returns a dense lower-triangular factor (upper triangle zeroed).
    """
    A = np.ascontiguousarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ParameterError(f"expected a square matrix, got shape {A.shape}")
    c, info = dpotrf(A, lower=1)
    if info < 0:
        raise ParameterError(f"invalid matrix input to Cholesky (argument {-info})")
    if info > 0:
        jitter = JITTER_SCALE * float(np.mean(np.diag(A)))
        logger.warning(
            "Cholesky failed at leading minor %d; retrying with jitter %.3e", info, jitter
        )
        c2, info2 = dpotrf(A + jitter * np.eye(A.shape[0]), lower=1)
        if info2 != 0:
            raise SingularMatrixError(
                f"matrix is not positive definite (leading minor {info})", minor=int(info)
            )
        c = c2
    return np.tril(c)


def solve_spd(A, b) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Parameters
    ----------
    A : (k, k) array
    b : (k,) or (k, m) array

    Returns
    -------
    ndarray
        Solution with the shape of ``b``.
    """
    L = _cholesky_lower(A)
    return cho_solve((L, True), np.asarray(b, dtype=float))


def quad_form(A, y) -> float:
    """Quadratic form ``y^T A^{-1} y`` for symmetric positive definite ``A``."""
    y = np.asarray(y, dtype=float)
    return float(y @ solve_spd(A, y))


def cholesky_stack(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factors of a stack of SPD matrices.

    Parameters
    ----------
    A : (m, k, k) array

    Returns
    -------
    (m, k, k) ndarray
        Per-matrix lower factors. If the vectorized factorization fails
        anywhere, each matrix is refactored individually so the jitter
        retry and the error can identify the offender.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise ParameterError(f"expected an (m, k, k) stack, got shape {A.shape}")
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        out = np.empty_like(A)
        for i in range(A.shape[0]):
            try:
                out[i] = _cholesky_lower(A[i])
            except SingularMatrixError as e:
                raise SingularMatrixError(str(e), minor=e.minor, element=i)
        return out


def solve_spd_stack(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``A[i] x[i] = B[i]`` across a stack of SPD systems.

    Parameters
    ----------
    A : (m, k, k) array
    B : (m, k) or (m, k, r) array

    Returns
    -------
    ndarray
        Solutions with the shape of ``B``.
    """
    B = np.asarray(B, dtype=float)
    squeeze = B.ndim == 2
    if squeeze:
        B = B[..., None]
    L = cholesky_stack(A)
    z = np.linalg.solve(L, B)
    x = np.linalg.solve(np.swapaxes(L, 1, 2), z)
    return x[..., 0] if squeeze else x


def quad_form_stack(A: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Per-system quadratic forms ``Y[i]^T A[i]^{-1} Y[i]``.

    Parameters
    ----------
    A : (m, k, k) array
    Y : (m, k) array

    Returns
    -------
    (m,) ndarray
    """
    Y = np.asarray(Y, dtype=float)
    x = solve_spd_stack(A, Y)
    return (Y * x).sum(axis=1)
