"""Densities of the membership, longitudinal, and survival submodels and the
joint complete-data log-likelihood.

Scalar functions mirror the model equations one term at a time; the
``*_terms`` functions evaluate the same quantities for a whole
:class:`~jlcm.data.Dataset` and are what the sampler calls.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .covariance import batch_log_density
from .data import Dataset, LatentState, ParameterSet

LOG_2PI = np.log(2.0 * np.pi)

#: Below this |gamma| the cumulative hazard uses its gamma -> 0 limit.
GAMMA_EPS = 1e-8


def membership_probabilities(x1, xi) -> np.ndarray:
    """Multinomial-logit class probabilities at one visit.

    Parameters
    ----------
    x1 : array_like (p1,)
    xi : array_like (K, p1)
    """
    eta = np.atleast_2d(np.asarray(xi, dtype=float)) @ np.asarray(x1, dtype=float)
    return np.exp(eta - logsumexp(eta))


def longitudinal_log_density(y, x2, z, beta_k, U, tau_k) -> float:
    """log N(y | x2'beta_k + z'U, tau_k); ``tau_k`` is a variance."""
    mean = np.dot(x2, beta_k) + np.dot(z, U)
    r = y - mean
    return float(-0.5 * (LOG_2PI + np.log(tau_k)) - 0.5 * r * r / tau_k)


def hazard(t, x3, omega_k, gamma_k, lam0_k, upsilon) -> float:
    """Gompertz proportional hazard lam0 exp(gamma t) exp(x3'omega + upsilon)."""
    eta = np.dot(x3, omega_k) + upsilon
    return float(lam0_k * np.exp(gamma_k * t + eta))


def cumulative_hazard(t, x3, omega_k, gamma_k, lam0_k, upsilon):
    """Integral of :func:`hazard` over [0, t] in closed form."""
    eta = np.dot(x3, omega_k) + upsilon
    H = lam0_k * np.exp(eta) * kernels.gompertz_integral(t, gamma_k, GAMMA_EPS)
    return float(H) if np.ndim(H) == 0 else H


def survival_log_density(T, delta, x3, omega_k, gamma_k, lam0_k, upsilon) -> float:
    """delta * log hazard(T) - H(T)."""
    eta = np.dot(x3, omega_k) + upsilon
    log_haz = np.log(lam0_k) + gamma_k * T + eta
    H = lam0_k * np.exp(eta) * kernels.gompertz_integral(T, gamma_k, GAMMA_EPS)
    return float(delta * log_haz - H)


# -- dataset-level terms ------------------------------------------------------

def membership_log_probs(params: ParameterSet, data: Dataset) -> np.ndarray:
    """log pi_ijk for every observation, shape (n, K)."""
    return kernels.log_softmax_rows(data.X1 @ params.xi.T)


def random_effect_contrib(data: Dataset, U) -> np.ndarray:
    """z_ij'U_i for every observation."""
    return np.einsum("nq,nq->n", data.Z, U[data.obs_subject])


def longitudinal_terms(params: ParameterSet, data: Dataset, U) -> np.ndarray:
    """log f(y_ij | R_ij = k, U_i) for every observation and class, (n, K)."""
    mean = data.X2 @ params.beta.T + random_effect_contrib(data, U)[:, None]
    return kernels.gaussian_terms(data.y, mean, params.tau)


def survival_terms(params: ParameterSet, data: Dataset, upsilon) -> np.ndarray:
    """log f(T_i | delta_i, class k, upsilon_i) for every subject and class, (N, K)."""
    eta = data.X3 @ params.omega.T + np.asarray(upsilon)[:, None]
    return kernels.gompertz_survival_terms(
        data.followup, data.event.astype(float), eta, params.lam0, params.gamma, GAMMA_EPS)


def class_log_weights(params: ParameterSet, data: Dataset, state: LatentState,
                      include_survival: bool = True) -> np.ndarray:
    """Unnormalised log P_ijk: membership + response (+ survival at the last visit)."""
    logp = membership_log_probs(params, data) + longitudinal_terms(params, data, state.U)
    if include_survival:
        logp[data.last_obs] += survival_terms(params, data, state.upsilon)
    return logp


def joint_log_likelihood(params: ParameterSet, data: Dataset, state: LatentState) -> float:
    """Complete-data log-likelihood given labels and random effects.

    Sum over subjects of log f(W_i) plus, for each visit, the membership and
    response terms of the realised class, plus the survival term of the
    class at the final visit.
    """
    return float(np.sum(subject_log_likelihood(params, data, state)))


def subject_log_likelihood(params: ParameterSet, data: Dataset, state: LatentState) -> np.ndarray:
    """Per-subject contributions to :func:`joint_log_likelihood`, shape (N,)."""
    R = state.R
    rows = np.arange(data.n_obs)
    per_obs = (membership_log_probs(params, data)[rows, R]
               + longitudinal_terms(params, data, state.U)[rows, R])
    total = np.bincount(data.obs_subject, weights=per_obs, minlength=data.n_subjects)
    surv = survival_terms(params, data, state.upsilon)
    total += surv[np.arange(data.n_subjects), R[data.last_obs]]
    total += batch_log_density(state.W, params.alpha1, params.alpha2, data.A, data.B)
    return total
