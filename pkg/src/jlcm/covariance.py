"""Modified Cholesky covariance regression for the random effects.

Each subject's random-effects covariance is written as ``T Sigma T' = D``
with ``T`` unit lower triangular (entry (g, l) equal to ``-phi``) and ``D``
diagonal.  The autoregressive coefficients follow a linear model
``phi = A'alpha1`` and the innovation variances a log-linear model
``log d^2 = B'alpha2``; both designs are subject level, so every (g, l)
pair of a subject shares one ``phi`` and every g one ``log d^2``.

Positive definiteness holds for any real ``alpha1``, ``alpha2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels
from .data import CovarianceDesign, ValidationError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class CholeskyFactors:
    """Unit lower-triangular ``T`` and log innovation variances ``log_d2``."""

    T: np.ndarray
    log_d2: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.log_d2)

    @property
    def D(self) -> np.ndarray:
        return np.diag(np.exp(self.log_d2))


def build_factors(alpha1, alpha2, design: CovarianceDesign, q: int) -> CholeskyFactors:
    """Factors of one subject's covariance from the regression coefficients.

    Parameters
    ----------
    alpha1, alpha2 : array_like
        Coefficients of the autoregressive and log-variance submodels.
    design : CovarianceDesign
        Subject covariates ``A`` (same length as ``alpha1``) and ``B``.
    q : int
        Dimension of the longitudinal random effects; the factors are
        (q+1) x (q+1).
    """
    alpha1 = np.atleast_1d(np.asarray(alpha1, dtype=float))
    alpha2 = np.atleast_1d(np.asarray(alpha2, dtype=float))
    A = np.atleast_1d(np.asarray(design.A, dtype=float))
    B = np.atleast_1d(np.asarray(design.B, dtype=float))
    if A.shape != alpha1.shape:
        raise ValidationError(f"dimension mismatch: A has length {A.size}, alpha1 {alpha1.size}")
    if B.shape != alpha2.shape:
        raise ValidationError(f"dimension mismatch: B has length {B.size}, alpha2 {alpha2.size}")
    d = q + 1
    phi = float(A @ alpha1)
    T = np.eye(d)
    T[np.tril_indices(d, -1)] = -phi
    return CholeskyFactors(T=T, log_d2=np.full(d, float(B @ alpha2)))


def batch_factors(alpha1, alpha2, A, B, q: int):
    """Factors for all subjects at once.

    Returns
    -------
    T : ndarray (N, q+1, q+1)
    log_d2 : ndarray (N, q+1)
    """
    phi = np.asarray(A, dtype=float) @ np.asarray(alpha1, dtype=float)
    logd = np.asarray(B, dtype=float) @ np.asarray(alpha2, dtype=float)
    d = q + 1
    T = np.broadcast_to(np.eye(d), (len(phi), d, d)).copy()
    rows, cols = np.tril_indices(d, -1)
    T[:, rows, cols] = -phi[:, None]
    return T, np.repeat(logd[:, None], d, axis=1)


def sigma_from_factors(f: CholeskyFactors) -> np.ndarray:
    """Sigma = T^{-1} D T^{-T} by two triangular solves."""
    d = f.dim
    Tinv = solve_triangular(f.T, np.eye(d), lower=True, unit_diagonal=True)
    S = (Tinv * np.exp(f.log_d2)) @ Tinv.T
    return 0.5 * (S + S.T)


def random_effects_log_density(W, f: CholeskyFactors) -> float:
    """Multivariate normal log density of ``W`` evaluated through the factors."""
    W = np.asarray(W, dtype=float)
    e = f.T @ W
    return float(-0.5 * f.dim * LOG_2PI
                 - 0.5 * np.sum(f.log_d2 + e * e * np.exp(-f.log_d2)))


def batch_log_density(W, alpha1, alpha2, A, B) -> np.ndarray:
    """Per-subject random-effects log density, shape (N,)."""
    T, log_d2 = batch_factors(alpha1, alpha2, A, B, W.shape[1] - 1)
    return kernels.mvn_cholesky_logdens(W, T, log_d2)
