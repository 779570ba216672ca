"""Pure numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature; ``jlcm.kernels`` picks one at import time.
"""

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)


def gompertz_integral(t, gamma, gamma_eps):
    """(exp(gamma t) - 1) / gamma, with the gamma -> 0 limit ``t``.

    ``t`` and ``gamma`` broadcast against each other.
    """
    t = np.asarray(t, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    small = np.abs(gamma) < gamma_eps
    safe = np.where(small, 1.0, gamma)
    return np.where(small, t, np.expm1(safe * t) / safe)


def gompertz_survival_terms(T, delta, eta, lam0, gamma, gamma_eps):
    """Per-subject, per-class survival log density.

    Parameters
    ----------
    T, delta : ndarray (N,)
    eta : ndarray (N, K)
        Linear predictor x3'omega_k + upsilon_i.
    lam0, gamma : ndarray (K,)

    Returns
    -------
    logf : ndarray (N, K)
        delta * log hazard(T) - H(T).
    """
    g = gompertz_integral(T[:, None], gamma[None, :], gamma_eps)
    log_scale = np.log(lam0)[None, :] + eta
    H = np.exp(log_scale) * g
    return delta[:, None] * (log_scale + gamma[None, :] * T[:, None]) - H


def mvn_cholesky_logdens(W, Tmat, log_d2):
    """Random-effects log density from modified Cholesky factors.

    Parameters
    ----------
    W : ndarray (N, d)
    Tmat : ndarray (N, d, d)
        Unit lower-triangular factors.
    log_d2 : ndarray (N, d)
        Log innovation variances.
    """
    e = np.einsum("ngl,nl->ng", Tmat, W)
    d = W.shape[1]
    return -0.5 * d * LOG_2PI - 0.5 * np.sum(log_d2 + e * e * np.exp(-log_d2), axis=1)


def gaussian_terms(y, mean, tau):
    """Log N(y | mean[:, k], tau[k]) for every row and class; shape (n, K)."""
    r = y[:, None] - mean
    return -0.5 * (LOG_2PI + np.log(tau)[None, :]) - 0.5 * r * r / tau[None, :]


def subject_gaussian_loglik(y, mean, Z, U, tau, obs_subject, n_subjects):
    """Per-subject sum of log N(y_j | mean_j + z_j'U_i, tau_j).

    ``mean`` and ``tau`` are per-observation (already selected by label).
    """
    r = y - mean - np.einsum("nq,nq->n", Z, U[obs_subject])
    terms = -0.5 * (LOG_2PI + np.log(tau)) - 0.5 * r * r / tau
    return np.bincount(obs_subject, weights=terms, minlength=n_subjects)


def log_softmax_rows(L):
    m = L.max(axis=1, keepdims=True)
    shifted = L - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def sample_categorical(logp, u):
    """Draw one label per row of unnormalised log weights using uniforms ``u``."""
    p = np.exp(logp - logp.max(axis=1, keepdims=True))
    c = np.cumsum(p, axis=1)
    target = u * c[:, -1]
    labels = (c < target[:, None]).sum(axis=1)
    return np.minimum(labels, logp.shape[1] - 1)
