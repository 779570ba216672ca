"""Adaptive Metropolis with a fixed safety component.

For the first ``2d`` iterations of a d-dimensional block the proposal is
``N(x, s0^2 I / d)``; afterwards it is the mixture
``(1 - a) N(x, sigma2 * Sigma_m / d) + a N(x, s0^2 I / d)`` where
``Sigma_m`` is the running empirical covariance of the block's history.
Both components are symmetric, so acceptance uses the target ratio only.
"""

from __future__ import annotations

import numpy as np

_JITTER = 1e-12


class AdaptationState:
    """Running mean/covariance (Welford) of one block's history."""

    def __init__(self, x0, sigma2=2.38 ** 2, alpha_prop=0.05, initial_scale=0.1):
        x0 = np.array(x0, dtype=float)
        self.dim = x0.size
        self.m = 0  # completed iterations
        self.count = 1
        self.mean = x0.copy()
        self.m2 = np.zeros((self.dim, self.dim))
        self.sigma2 = sigma2
        self.alpha_prop = alpha_prop
        self.initial_scale = initial_scale
        self.accepted = 0
        self.accepted_late = 0
        self.proposed_late = 0

    @property
    def empirical_cov(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros((self.dim, self.dim))
        return self.m2 / (self.count - 1)

    @property
    def warming_up(self) -> bool:
        """True while the next step (iteration m + 1) uses only the fixed proposal."""
        return self.m + 1 <= 2 * self.dim

    def safe_cov(self) -> np.ndarray:
        return (self.initial_scale ** 2 / self.dim) * np.eye(self.dim)

    def adaptive_cov(self) -> np.ndarray:
        return self.sigma2 * self.empirical_cov / self.dim

    def proposal_cov(self) -> np.ndarray:
        """Covariance of the proposal at the next iteration (mixture moments)."""
        if self.warming_up:
            return self.safe_cov()
        return (1 - self.alpha_prop) * self.adaptive_cov() + self.alpha_prop * self.safe_cov()

    def record(self, x):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += np.outer(delta, x - self.mean)

    def acceptance_rate(self, late=False) -> float:
        if late:
            return self.accepted_late / self.proposed_late if self.proposed_late else float("nan")
        return self.accepted / self.m if self.m else float("nan")


def _draw_step(state: AdaptationState, rng) -> np.ndarray:
    z = rng.standard_normal(state.dim)
    use_safe = state.warming_up or rng.random() < state.alpha_prop
    if use_safe:
        return (state.initial_scale / np.sqrt(state.dim)) * z
    cov = state.adaptive_cov() + _JITTER * np.eye(state.dim)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        L = V * np.sqrt(np.clip(w, 0.0, None))
    return L @ z


def adaptive_metropolis_step(x, logp_x, log_target, state: AdaptationState, rng, late=False):
    """One adaptive Metropolis update of a single block.

    Parameters
    ----------
    x : ndarray (d,)
        Current value; ``logp_x`` its (finite) log target.
    log_target : callable
        Maps a candidate to its log target; non-finite values reject.
    late : bool
        Count this step towards the post-burn-in acceptance rate.

    Returns
    -------
    x_new, logp_new, accepted
    """
    proposal = x + _draw_step(state, rng)
    log_u = np.log(rng.random())
    logp_prop = log_target(proposal)
    accepted = bool(np.isfinite(logp_prop) and log_u < logp_prop - logp_x)
    if accepted:
        x, logp_x = proposal, logp_prop
    state.m += 1
    state.accepted += accepted
    if late:
        state.proposed_late += 1
        state.accepted_late += accepted
    state.record(x)
    return x, logp_x, accepted


class BatchAdaptation:
    """Independent adaptation states for many same-sized blocks.

    Used for the per-subject random-effect blocks, which are conditionally
    independent given everything else and so can be updated in one
    vectorised step while each keeps its own history.
    """

    def __init__(self, X0, sigma2=2.38 ** 2, alpha_prop=0.05, initial_scale=0.1):
        X0 = np.array(X0, dtype=float)
        self.n, self.dim = X0.shape
        self.m = 0
        self.count = 1
        self.mean = X0.copy()
        self.m2 = np.zeros((self.n, self.dim, self.dim))
        self.sigma2 = sigma2
        self.alpha_prop = alpha_prop
        self.initial_scale = initial_scale
        self.accepted = np.zeros(self.n)
        self.accepted_late = np.zeros(self.n)
        self.proposed_late = 0

    @property
    def warming_up(self) -> bool:
        return self.m + 1 <= 2 * self.dim

    def empirical_cov(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.m2)
        return self.m2 / (self.count - 1)

    def record(self, X):
        self.count += 1
        delta = X - self.mean
        self.mean += delta / self.count
        self.m2 += delta[:, :, None] * (X - self.mean)[:, None, :]

    def step(self, X, logp, log_target, rng, late=False):
        """Vectorised update of all blocks; ``log_target`` maps (n, d) -> (n,)."""
        Z = rng.standard_normal((self.n, self.dim))
        safe_scale = self.initial_scale / np.sqrt(self.dim)
        if self.warming_up:
            steps = safe_scale * Z
        else:
            use_safe = rng.random(self.n) < self.alpha_prop
            cov = self.sigma2 * self.empirical_cov() / self.dim
            cov += _JITTER * np.eye(self.dim)
            try:
                L = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                w, V = np.linalg.eigh(cov)
                L = V * np.sqrt(np.clip(w, 0.0, None))[:, None, :]
            steps = np.einsum("nij,nj->ni", L, Z)
            steps[use_safe] = safe_scale * Z[use_safe]
        proposal = X + steps
        log_u = np.log(rng.random(self.n))
        logp_prop = log_target(proposal)
        acc = np.isfinite(logp_prop) & (log_u < logp_prop - logp)
        X = np.where(acc[:, None], proposal, X)
        logp = np.where(acc, logp_prop, logp)
        self.m += 1
        self.accepted += acc
        if late:
            self.proposed_late += 1
            self.accepted_late += acc
        self.record(X)
        return X, logp, acc

    def acceptance_rate(self, late=False) -> float:
        if late:
            return float(self.accepted_late.mean() / self.proposed_late) if self.proposed_late else float("nan")
        return float(self.accepted.mean() / self.m) if self.m else float("nan")
