"""Exact conditional draws: fixed effects, baseline hazard scales, residual
variances, and the per-visit class labels.

Each class-specific update falls back to a prior draw when no observation
(or, for the hazard scale, no final visit) is currently assigned to the
class.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..data import Dataset, LatentState, ParameterSet
from ..likelihood import GAMMA_EPS, class_log_weights, random_effect_contrib
from .config import PriorConfig

# Gamma draws with the vague shape 0.01 underflow to exactly 0 now and then.
_TINY = np.finfo(float).tiny


def _gamma(rng, shape, scale=1.0):
    return max(rng.gamma(shape, scale), _TINY)


def beta_conditional(k, data: Dataset, state: LatentState, tau_k, prior: PriorConfig):
    """Mean and covariance of the normal full conditional of beta_k.

    Returns ``None`` for an empty class.
    """
    mask = state.R == k
    if not mask.any():
        return None
    b0, _, prec0 = prior.beta_prior(data.X2.shape[1])
    X = data.X2[mask]
    r = data.y[mask] - random_effect_contrib(data, state.U)[mask]
    A = X.T @ X / tau_k + prec0
    B = X.T @ r / tau_k + prec0 @ b0
    cov = np.linalg.inv(A)
    return np.linalg.solve(A, B), 0.5 * (cov + cov.T)


def sample_beta_k(k, data: Dataset, state: LatentState, tau_k, prior: PriorConfig, rng):
    """One draw of beta_k from N(A^{-1}B, A^{-1}), or from the prior if class k is empty."""
    cond = beta_conditional(k, data, state, tau_k, prior)
    if cond is None:
        mean, cov, _ = prior.beta_prior(data.X2.shape[1])
    else:
        mean, cov = cond
    L = np.linalg.cholesky(cov)
    return mean + L @ rng.standard_normal(len(mean))


def lambda_conditional(k, data: Dataset, state: LatentState, gamma_k, omega_k, prior: PriorConfig):
    """(shape, rate) of the Gamma full conditional of lam0_k."""
    final = state.R[data.last_obs] == k
    if not final.any():
        return prior.lam_shape, prior.lam_rate
    eta = data.X3[final] @ omega_k + state.upsilon[final]
    integral = np.exp(eta) * kernels.gompertz_integral(data.followup[final], gamma_k, GAMMA_EPS)
    return prior.lam_shape + data.event[final].sum(), prior.lam_rate + integral.sum()


def sample_lambda_k(k, data: Dataset, state: LatentState, gamma_k, omega_k, prior: PriorConfig, rng):
    shape, rate = lambda_conditional(k, data, state, gamma_k, omega_k, prior)
    return _gamma(rng, shape, 1.0 / rate)


def tau_conditional(k, data: Dataset, state: LatentState, beta_k, prior: PriorConfig):
    """(shape, scale) of the inverse-gamma full conditional of tau_k."""
    mask = state.R == k
    if not mask.any():
        return prior.tau_shape, prior.tau_rate
    r = (data.y[mask] - data.X2[mask] @ beta_k
         - random_effect_contrib(data, state.U)[mask])
    return prior.tau_shape + 0.5 * mask.sum(), prior.tau_rate + 0.5 * float(r @ r)


def sample_tau_k(k, data: Dataset, state: LatentState, beta_k, prior: PriorConfig, rng):
    shape, scale = tau_conditional(k, data, state, beta_k, prior)
    return scale / _gamma(rng, shape)


def class_probabilities(data: Dataset, params: ParameterSet, state: LatentState) -> np.ndarray:
    """Normalised P(R_ij = k | rest), shape (n, K)."""
    return np.exp(kernels.log_softmax_rows(class_log_weights(params, data, state)))


def sample_class_indicators(data: Dataset, params: ParameterSet, state: LatentState, rng,
                            use_likelihood: bool = True) -> np.ndarray:
    """Draw every R_ij independently from its discrete full conditional."""
    if params.K == 1:
        return np.zeros(data.n_obs, dtype=np.int64)
    u = rng.random(data.n_obs)
    if use_likelihood:
        logp = class_log_weights(params, data, state)
    else:
        logp = np.zeros((data.n_obs, params.K))
    return kernels.sample_categorical(logp, u)
