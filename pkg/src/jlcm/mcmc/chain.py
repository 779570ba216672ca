"""Metropolis-within-Gibbs sampler for the joint latent class model.

One iteration:

1. draw every class label R_ij from its discrete full conditional;
2. Gibbs draws of beta_k, then tau_k, then lam0_k for each class;
3. adaptive Metropolis updates of (omega_k, gamma_k) and xi_k for each
   class, then alpha1, alpha2, then all per-subject random effects W_i;
4. record the complete-data log-likelihood and, after burn-in, the draw.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..covariance import batch_factors
from ..data import Dataset, LatentState, ParameterSet, validate
from ..likelihood import GAMMA_EPS, joint_log_likelihood, random_effect_contrib
from .adaptive import AdaptationState, BatchAdaptation, adaptive_metropolis_step
from .config import PriorConfig, SamplerConfig
from .gibbs import sample_beta_k, sample_class_indicators, sample_lambda_k, sample_tau_k

log = logging.getLogger(__name__)

PARAM_FIELDS = ParameterSet.CLASS_FIELDS + ParameterSet.SHARED_FIELDS


class DivergenceError(RuntimeError):
    """The complete-data log-likelihood became non-finite."""

    def __init__(self, iteration, value, context=""):
        self.iteration = iteration
        self.value = value
        where = f" ({context})" if context else ""
        super().__init__(f"non-finite log-likelihood {value} at iteration {iteration}{where}")


@dataclass
class ChainOutput:
    """Stored post-burn-in draws plus diagnostics.

    ``draws`` maps each parameter field to an array with the draw on axis 0
    (e.g. ``draws["beta"]`` has shape (S, K, p2)).  ``R`` is (S, n) and
    ``W`` is (S, N, q+1).  ``loglik`` is the complete-data log-likelihood at
    every iteration, burn-in included.
    """

    K: int
    draws: dict
    R: np.ndarray
    W: np.ndarray
    loglik: np.ndarray
    iterations: np.ndarray
    acceptance: dict = field(default_factory=dict)
    config: SamplerConfig | None = None

    @property
    def n_draws(self) -> int:
        return len(self.iterations)

    def params(self, s: int) -> ParameterSet:
        return ParameterSet(**{f: self.draws[f][s] for f in PARAM_FIELDS})

    def state(self, s: int) -> LatentState:
        return LatentState(R=self.R[s].astype(np.int64), W=self.W[s])

    def posterior_mean(self) -> ParameterSet:
        return ParameterSet(**{f: self.draws[f].mean(axis=0) for f in PARAM_FIELDS})

    def mean_W(self) -> np.ndarray:
        return self.W.mean(axis=0)

    def modal_R(self) -> np.ndarray:
        """Most frequent label of every visit over the stored draws."""
        counts = np.stack([(self.R == k).sum(axis=0) for k in range(self.K)], axis=1)
        return counts.argmax(axis=1)

    def take(self, index) -> "ChainOutput":
        """Chain restricted to (or reordered by) the given draw indices."""
        index = np.asarray(index)
        if index.size == 0:
            index = index.astype(np.int64)
        return ChainOutput(
            K=self.K,
            draws={f: v[index] for f, v in self.draws.items()},
            R=self.R[index],
            W=self.W[index],
            loglik=self.loglik,
            iterations=self.iterations[index],
            acceptance=dict(self.acceptance),
            config=self.config,
        )


def initial_values(data: Dataset, K: int, rng=None):
    """Deterministic starting point.

    Pooled least squares for the fixed effects, spread multiplicatively
    across classes (class k scaled by ``1 + c_k`` with ``c`` evenly spaced in
    [-0.5, 0.5]) so the classes start ordered by their first coefficient;
    ridge-regularised per-subject least squares for U; everything on the
    log-linear scales at zero.
    """
    p2 = data.X2.shape[1]
    beta_pool, *_ = np.linalg.lstsq(data.X2, data.y, rcond=None)
    resid = data.y - data.X2 @ beta_pool
    q = data.q
    U = np.zeros((data.n_subjects, q))
    for i in range(data.n_subjects):
        lo, hi = data.offsets[i], data.offsets[i + 1]
        Zi = data.Z[lo:hi]
        U[i] = np.linalg.solve(Zi.T @ Zi + np.eye(q), Zi.T @ resid[lo:hi])
    r2 = resid - random_effect_contrib(data, U)
    s2 = max(float(np.mean(r2 ** 2)), 1e-6)
    spread = np.linspace(-0.5, 0.5, K) if K > 1 else np.zeros(1)
    beta = beta_pool[None, :] * (1.0 + spread[:, None])
    rate = data.event.sum() / data.followup.sum()
    params = ParameterSet(
        xi=np.zeros((K, data.X1.shape[1])),
        beta=beta.reshape(K, p2),
        omega=np.zeros((K, data.X3.shape[1])),
        gamma=np.zeros(K),
        tau=np.full(K, s2),
        lam0=np.full(K, max(rate, 1e-3)),
        alpha1=np.zeros(data.A.shape[1]),
        alpha2=np.zeros(data.B.shape[1]),
    )
    W = np.column_stack([U, np.zeros(data.n_subjects)])
    state = LatentState(R=np.zeros(data.n_obs, dtype=np.int64), W=W)
    if K > 1:
        from ..likelihood import class_log_weights
        state = LatentState(R=class_log_weights(params, data, state).argmax(axis=1), W=W)
    return params, state


class _Sampler:
    """Mutable sampler state; one instance per chain."""

    def __init__(self, data: Dataset, K: int, prior: PriorConfig, config: SamplerConfig,
                 init=None):
        self.data = data
        self.K = K
        self.prior = prior
        self.cfg = config
        self.rng = np.random.Generator(np.random.PCG64(config.seed))
        params, state = init if init is not None else initial_values(data, K)
        validate(params, data, state)
        self.p = {f: np.array(getattr(params, f), dtype=float) for f in PARAM_FIELDS}
        self.R = np.array(state.R, dtype=np.int64)
        self.W = np.array(state.W, dtype=float)
        self.use_lik = config.use_likelihood
        am = dict(sigma2=config.sigma2, alpha_prop=config.alpha_prop,
                  initial_scale=config.initial_scale)
        self.blocks = {}
        for k in range(K):
            self.blocks[f"omega_gamma[{k + 1}]"] = AdaptationState(
                np.append(self.p["omega"][k], self.p["gamma"][k]), **am)
            self.blocks[f"xi[{k + 1}]"] = AdaptationState(self.p["xi"][k], **am)
        self.blocks["alpha1"] = AdaptationState(self.p["alpha1"], **am)
        self.blocks["alpha2"] = AdaptationState(self.p["alpha2"], **am)
        self.w_block = BatchAdaptation(self.W, **am)
        self.theta_sd = np.sqrt(prior.theta_var)
        self._refresh_factors()

    # -- helpers ------------------------------------------------------------
    def params(self) -> ParameterSet:
        return ParameterSet(**{f: self.p[f].copy() for f in PARAM_FIELDS})

    def state(self) -> LatentState:
        return LatentState(R=self.R, W=self.W)

    def _log_prior_theta(self, x):
        return -0.5 * float(np.dot(x, x)) / self.prior.theta_var

    def _refresh_factors(self):
        self.Tmat, self.log_d2 = batch_factors(self.p["alpha1"], self.p["alpha2"],
                                               self.data.A, self.data.B, self.data.q)

    # -- log targets --------------------------------------------------------
    def _target_omega_gamma(self, k):
        d = self.data
        final = self.R[d.last_obs] == k
        T = d.followup[final]
        delta = d.event[final].astype(float)
        X3 = d.X3[final]
        ups = self.W[final, -1]
        lam = self.p["lam0"][k:k + 1]
        p3 = X3.shape[1]

        def target(x):
            lp = self._log_prior_theta(x)
            if not self.use_lik or not final.any():
                return lp
            eta = (X3 @ x[:p3] + ups)[:, None]
            terms = kernels.gompertz_survival_terms(T, delta, eta, lam, x[p3:], GAMMA_EPS)
            return lp + float(terms.sum())
        return target

    def _target_xi(self, k):
        d = self.data
        rows = np.arange(d.n_obs)
        xi = self.p["xi"].copy()

        def target(x):
            lp = self._log_prior_theta(x)
            if not self.use_lik:
                return lp
            xi[k] = x
            return lp + float(kernels.log_softmax_rows(d.X1 @ xi.T)[rows, self.R].sum())
        return target

    def _target_alpha(self, which):
        d = self.data

        def target(x):
            lp = self._log_prior_theta(x)
            if not self.use_lik:
                return lp
            a1 = x if which == "alpha1" else self.p["alpha1"]
            a2 = x if which == "alpha2" else self.p["alpha2"]
            T, log_d2 = batch_factors(a1, a2, d.A, d.B, d.q)
            return lp + float(kernels.mvn_cholesky_logdens(self.W, T, log_d2).sum())
        return target

    def _w_target(self):
        d = self.data
        R = self.R
        mean = np.einsum("np,np->n", d.X2, self.p["beta"][R])
        tau = self.p["tau"][R]
        last_class = R[d.last_obs]
        xo = np.einsum("ip,ip->i", d.X3, self.p["omega"][last_class])
        lam = self.p["lam0"][last_class]
        gam = self.p["gamma"][last_class]
        g_int = kernels.gompertz_integral(d.followup, gam, GAMMA_EPS)
        log_haz_base = np.log(lam) + gam * d.followup + xo
        scale = lam * np.exp(xo) * g_int
        delta = d.event.astype(float)
        Tmat, log_d2 = self.Tmat, self.log_d2
        q = d.q

        def target(W):
            out = kernels.mvn_cholesky_logdens(W, Tmat, log_d2)
            out += kernels.subject_gaussian_loglik(d.y, mean, d.Z, W[:, :q], tau,
                                                   d.obs_subject, d.n_subjects)
            ups = W[:, q]
            out += delta * (log_haz_base + ups) - scale * np.exp(ups)
            return out
        return target

    # -- one sweep ----------------------------------------------------------
    def sweep(self, late: bool):
        d, rng, p, K = self.data, self.rng, self.p, self.K
        self.R = sample_class_indicators(d, self.params(), self.state(), rng, self.use_lik)
        st = self.state() if self.use_lik else LatentState(
            R=np.full(d.n_obs, -1, dtype=np.int64), W=self.W)
        for k in range(K):
            p["beta"][k] = sample_beta_k(k, d, st, p["tau"][k], self.prior, rng)
            p["tau"][k] = sample_tau_k(k, d, st, p["beta"][k], self.prior, rng)
            p["lam0"][k] = sample_lambda_k(k, d, st, p["gamma"][k], p["omega"][k], self.prior, rng)

        p3 = d.X3.shape[1]
        for k in range(K):
            blk = self.blocks[f"omega_gamma[{k + 1}]"]
            target = self._target_omega_gamma(k)
            x = np.append(p["omega"][k], p["gamma"][k])
            x, _, _ = adaptive_metropolis_step(x, target(x), target, blk, rng, late)
            p["omega"][k], p["gamma"][k] = x[:p3], x[p3]

            blk = self.blocks[f"xi[{k + 1}]"]
            target = self._target_xi(k)
            x, _, _ = adaptive_metropolis_step(p["xi"][k].copy(), target(p["xi"][k]), target,
                                               blk, rng, late)
            p["xi"][k] = x

        for name in ("alpha1", "alpha2"):
            target = self._target_alpha(name)
            x, _, _ = adaptive_metropolis_step(p[name].copy(), target(p[name]), target,
                                               self.blocks[name], rng, late)
            p[name] = x
        self._refresh_factors()

        if self.use_lik:
            target = self._w_target()
            self.W, _, _ = self.w_block.step(self.W, target(self.W), target, rng, late)

    def loglik(self) -> float:
        if not self.use_lik:
            return 0.0
        return joint_log_likelihood(self.params(), self.data, self.state())

    def acceptance(self) -> dict:
        out = {}
        for name, blk in self.blocks.items():
            out[name] = (blk.acceptance_rate(), blk.acceptance_rate(late=True))
        out["W"] = (self.w_block.acceptance_rate(), self.w_block.acceptance_rate(late=True))
        return out


def run_chain(data: Dataset, K: int, prior: PriorConfig | None = None,
              config: SamplerConfig | None = None, init=None, progress=None) -> ChainOutput:
    """Run one chain and return its post-burn-in draws.

    Parameters
    ----------
    data : Dataset
    K : int
        Number of latent classes.
    prior, config : optional
        Defaults are ``PriorConfig()`` and ``SamplerConfig()``.
    init : (ParameterSet, LatentState), optional
        Starting point; see :func:`initial_values` for the default.
    progress : callable, optional
        Called as ``progress(iteration)`` after every sweep.

    Raises
    ------
    DivergenceError
        If the complete-data log-likelihood becomes non-finite.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    prior = prior or PriorConfig()
    config = config or SamplerConfig()
    problems = data.check()
    if problems:
        from ..data import ValidationError
        raise ValidationError(problems)
    sampler = _Sampler(data, K, prior, config, init)
    S = config.n_draws
    draws = {f: np.empty((S,) + sampler.p[f].shape) for f in PARAM_FIELDS}
    R = np.empty((S, data.n_obs), dtype=np.int8 if K < 128 else np.int32)
    W = np.empty((S,) + sampler.W.shape)
    trace = np.empty(config.n_iter)
    iterations = np.empty(S, dtype=np.int64)
    s = 0
    for m in range(1, config.n_iter + 1):
        late = m > config.burn_in
        sampler.sweep(late)
        ll = sampler.loglik()
        if not np.isfinite(ll):
            raise DivergenceError(m, ll)
        trace[m - 1] = ll
        if late and (m - config.burn_in) % config.thin == 0 and s < S:
            for f in PARAM_FIELDS:
                draws[f][s] = sampler.p[f]
            R[s] = sampler.R
            W[s] = sampler.W
            iterations[s] = m
            s += 1
        if progress is not None:
            progress(m)
    log.debug("chain finished: K=%d, %d draws", K, S)
    return ChainOutput(K=K, draws=draws, R=R, W=W, loglik=trace, iterations=iterations,
                       acceptance=sampler.acceptance(), config=config)
