"""Quantities derived from a fitted chain: posterior class membership,
dynamic survival predictions, jumping behaviour, DIC, and the two
evaluation metrics used in simulation studies (classification error rate
and IPCW time-dependent AUC).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize
from scipy.special import logsumexp

from . import kernels
from .covariance import batch_factors
from .data import Dataset, LatentState, ParameterSet
from .likelihood import (GAMMA_EPS, class_log_weights, joint_log_likelihood,
                         longitudinal_terms, membership_log_probs)
from .mcmc.chain import ChainOutput
from .mcmc.summary import relabel


class DegenerateLandmarkError(ValueError):
    """The predicted survival at the landmark time underflows to zero."""


class UndefinedAUCError(ValueError):
    """No cases or no controls in the prediction window."""


@dataclass(frozen=True)
class PosteriorEstimates:
    """Plug-in point estimates: posterior means of the parameters and of W."""

    params: ParameterSet
    W: np.ndarray
    R: np.ndarray  # modal labels, 0-based

    @classmethod
    def from_chain(cls, chain: ChainOutput, policy: str = "beta-first") -> "PosteriorEstimates":
        ch = relabel(chain, policy)
        return cls(params=ch.posterior_mean(), W=ch.mean_W(), R=ch.modal_R())


@dataclass(frozen=True)
class ModelScore:
    """Conditional DIC. ``p_d`` may be negative and is reported as is."""

    K: int
    mean_deviance: float
    deviance_at_mean: float
    p_d: float
    dic: float


@dataclass(frozen=True)
class JumpingSummary:
    """Subjects whose modal label never changes (per class) and subjects
    that change class at least once, tallied by the class of their final
    visit.  Both arrays are indexed by 0-based class."""

    stayers: np.ndarray
    jumpers: np.ndarray

    @property
    def total(self) -> int:
        return int(self.stayers.sum() + self.jumpers.sum())


def _estimates(source) -> PosteriorEstimates:
    return source if isinstance(source, PosteriorEstimates) else PosteriorEstimates.from_chain(source)


# -- membership ----------------------------------------------------------------

def posterior_membership(source, data: Dataset):
    """Posterior class-membership probabilities at every visit.

    ``pi_hat_ijk`` is proportional to ``pi_ijk * L_ijk`` where ``L_ijk =
    f(W_i) * P_ijk`` and ``P_ijk`` already contains ``pi_ijk``, the response
    density and, at the final visit, the survival density.  The prior
    weight therefore enters twice; this follows the classification rule as
    stated by the method and differs from the usual Bayes posterior.
    ``f(W_i)`` does not depend on k and cancels.

    Parameters
    ----------
    source : ChainOutput or PosteriorEstimates

    Returns
    -------
    probs : ndarray (n, K)
    modal : ndarray (n,)
        0-based modal class.
    """
    est = _estimates(source)
    state = LatentState(R=est.R, W=est.W)
    logw = membership_log_probs(est.params, data) + class_log_weights(est.params, data, state)
    probs = np.exp(kernels.log_softmax_rows(logw))
    return probs, probs.argmax(axis=1)


def jumping_summary(modal, data: Dataset, K: int | None = None) -> JumpingSummary:
    modal = np.asarray(modal, dtype=np.int64)
    K = int(modal.max()) + 1 if K is None else K
    off = data.offsets
    lo = np.minimum.reduceat(modal, off[:-1])
    hi = np.maximum.reduceat(modal, off[:-1])
    final = modal[data.last_obs]
    stay = lo == hi
    return JumpingSummary(stayers=np.bincount(final[stay], minlength=K),
                          jumpers=np.bincount(final[~stay], minlength=K))


# -- dynamic prediction ----------------------------------------------------------

def mixture_log_survival(log_weights, lam0, gamma, eta, times):
    """log of sum_k w_k exp(-H_k(s)) at each time s, for one subject.

    ``log_weights``, ``lam0``, ``gamma``, ``eta`` have one entry per class.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    g = kernels.gompertz_integral(times[:, None], np.asarray(gamma)[None, :], GAMMA_EPS)
    H = np.asarray(lam0)[None, :] * np.exp(np.asarray(eta))[None, :] * g
    return logsumexp(np.asarray(log_weights)[None, :] - H, axis=1)


def conditional_survival(log_weights, lam0, gamma, eta, landmark, horizons):
    """P(T > t + dt | T > t) under a Gompertz mixture, for each dt in ``horizons``."""
    horizons = np.asarray(horizons, dtype=float)
    if np.any(horizons < 0):
        raise ValueError("horizons must be nonnegative")
    logS = mixture_log_survival(log_weights, lam0, gamma, eta,
                                np.concatenate([[landmark], landmark + horizons]))
    if not np.isfinite(logS[0]):
        raise DegenerateLandmarkError(f"predicted survival at landmark {landmark:g} is zero")
    out = np.exp(np.minimum(logS[1:] - logS[0], 0.0))
    out[horizons == 0] = 1.0
    return out


def _last_visit_before(data: Dataset, landmark: float) -> np.ndarray:
    """Row of each subject's last visit at or before ``landmark`` (-1 if none)."""
    idx = np.full(data.n_subjects, -1)
    rows = np.flatnonzero(data.obs_time <= landmark)
    # rows are grouped by subject and time-ordered, so the last write wins
    idx[data.obs_subject[rows]] = rows
    return idx


def landmark_weights(est: PosteriorEstimates, data: Dataset, landmark: float, W=None):
    """log membership weights at each subject's last visit at or before ``landmark``.

    Uses the classification rule of :func:`posterior_membership` without the
    survival factor, since the event time is not yet observed.  Returns
    (N, K) log weights; subjects without a visit by ``landmark`` get NaN rows.
    """
    W = est.W if W is None else W
    logw = (2 * membership_log_probs(est.params, data)
            + longitudinal_terms(est.params, data, np.nan_to_num(W[:, :data.q])))
    logw = kernels.log_softmax_rows(logw)
    idx = _last_visit_before(data, landmark)
    out = np.full((data.n_subjects, est.params.K), np.nan)
    ok = idx >= 0
    out[ok] = logw[idx[ok]]
    return out


def landmark_random_effects(est: PosteriorEstimates, data: Dataset, landmark: float,
                            subjects=None) -> np.ndarray:
    """Posterior mode of each W_i given only what is known at the landmark.

    The objective is the random-effect density plus the class-marginal
    likelihood of the responses observed by ``landmark`` and of survival
    up to ``landmark``, with parameters at their plug-in values.  The
    survival factor enters through the class at the last visit so seen.

    Returns (N, q+1); rows of subjects not requested or without a visit by
    the landmark are NaN.
    """
    p = est.params
    q = data.q
    Tmat, log_d2 = batch_factors(p.alpha1, p.alpha2, data.A, data.B, q)
    log_pi = membership_log_probs(p, data)
    fixed = data.X2 @ p.beta.T
    eta0 = data.X3 @ p.omega.T
    g_t = kernels.gompertz_integral(landmark, p.gamma, GAMMA_EPS)
    last = _last_visit_before(data, landmark)
    subjects = np.arange(data.n_subjects) if subjects is None else np.asarray(subjects)
    out = np.full((data.n_subjects, q + 1), np.nan)
    for i in subjects:
        if last[i] < 0:
            continue
        rows = np.arange(data.offsets[i], last[i] + 1)
        Z, y = data.Z[rows], data.y[rows]
        base = log_pi[rows] - 0.5 * np.log(2 * np.pi * p.tau)[None, :]
        Ti, ld = Tmat[i], log_d2[i]
        scale = p.lam0 * np.exp(eta0[i]) * g_t

        def neg(w):
            e = Ti @ w
            lf = -0.5 * np.sum(ld + e * e / np.exp(ld))
            r = y[:, None] - fixed[rows] - (Z @ w[:q])[:, None]
            terms = base - 0.5 * r * r / p.tau[None, :]
            terms[-1] -= scale * np.exp(w[q])
            return -(lf + logsumexp(terms, axis=1).sum())

        res = minimize(neg, np.zeros(q + 1), method="BFGS")
        out[i] = res.x
    return out


def dynamic_survival(source, data: Dataset, landmark: float, horizons, subjects=None,
                     random_effects: str = "chain"):
    """Conditional survival ``S_i(t + dt | T_i > t, history up to t)``.

    A ratio of class mixtures of Gompertz survival functions at the
    posterior-mean parameters, weighted by the posterior membership at the
    last visit at or before the landmark.

    Parameters
    ----------
    random_effects : {"chain", "landmark"}
        ``"chain"`` plugs in the chain's posterior means of W, as the
        prediction rule prescribes; these also reflect data observed after
        the landmark.  ``"landmark"`` re-estimates each W_i from the history
        up to the landmark only (see :func:`landmark_random_effects`).

    Returns
    -------
    ndarray (n_selected, len(horizons))
    """
    if landmark < 0:
        raise ValueError("landmark must be nonnegative")
    est = _estimates(source)
    p = est.params
    subjects = np.arange(data.n_subjects) if subjects is None else np.asarray(subjects)
    if random_effects == "landmark":
        W = landmark_random_effects(est, data, landmark, subjects)
    elif random_effects == "chain":
        W = est.W
    else:
        raise ValueError(f"unknown random_effects option {random_effects!r}")
    logw = landmark_weights(est, data, landmark, W)
    eta = data.X3 @ p.omega.T + W[:, -1][:, None]
    out = np.empty((len(subjects), len(np.atleast_1d(horizons))))
    for r, i in enumerate(subjects):
        if np.isnan(logw[i, 0]):
            raise ValueError(f"subject {data.subject_ids[i]}: no observation at or before the landmark")
        try:
            out[r] = conditional_survival(logw[i], p.lam0, p.gamma, eta[i], landmark, horizons)
        except DegenerateLandmarkError as exc:
            raise DegenerateLandmarkError(f"subject {data.subject_ids[i]}: {exc}") from None
    return out


# -- model selection -------------------------------------------------------------

def compute_dic(chain: ChainOutput, data: Dataset, policy: str = "beta-first") -> ModelScore:
    """Conditional DIC with deviance ``-2 log L(Psi, R, W)``.

    ``D_bar`` averages the deviance of each stored draw with its own labels
    and random effects; the plug-in deviance uses posterior means of the
    parameters and of W with the modal labels.
    """
    if chain.n_draws == 0:
        raise ValueError("chain has no stored draws")
    ch = relabel(chain, policy)
    dev = np.array([-2.0 * joint_log_likelihood(ch.params(s), data, ch.state(s))
                    for s in range(ch.n_draws)])
    est = PosteriorEstimates(params=ch.posterior_mean(), W=ch.mean_W(), R=ch.modal_R())
    d_hat = -2.0 * joint_log_likelihood(est.params, data, LatentState(R=est.R, W=est.W))
    d_bar = float(dev.mean())
    p_d = d_bar - d_hat
    return ModelScore(K=chain.K, mean_deviance=d_bar, deviance_at_mean=d_hat, p_d=p_d,
                      dic=d_bar + p_d)


# -- evaluation metrics ------------------------------------------------------------

MAX_PERMUTATION_K = 6


def error_rate(predicted, truth) -> float:
    """Misclassification fraction minimised over relabelings of ``predicted``.

    When the two label sets differ in size the smaller one is matched
    injectively into the larger.
    """
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.shape != truth.shape or predicted.size == 0:
        raise ValueError("label arrays must be nonempty and of equal length")
    K = int(max(predicted.max(), truth.max())) + 1
    if K > MAX_PERMUTATION_K:
        raise ValueError(f"error_rate supports at most {MAX_PERMUTATION_K} classes, got {K}")
    confusion = np.zeros((K, K))
    np.add.at(confusion, (predicted, truth), 1)
    r, c = linear_sum_assignment(confusion, maximize=True)
    return float(1.0 - confusion[r, c].sum() / predicted.size)


def censoring_survival(time, event):
    """Kaplan-Meier estimate of the censoring survival function G.

    Returns a callable ``G(s, left=False)``; ``left=True`` gives ``G(s-)``.
    """
    time = np.asarray(time, dtype=float)
    cens = np.asarray(event) == 0
    jumps = np.unique(time[cens])
    at_risk = (time[None, :] >= jumps[:, None]).sum(axis=1)
    d = (cens[None, :] & (time[None, :] == jumps[:, None])).sum(axis=1)
    surv = np.concatenate([[1.0], np.cumprod(1.0 - d / at_risk)])

    def G(s, left=False):
        s = np.asarray(s, dtype=float)
        return surv[np.searchsorted(jumps, s, side="left" if left else "right")]
    return G


def ipcw_auc(marker, time, event, landmark: float, horizon: float) -> float:
    """Inverse-probability-of-censoring weighted AUC on (t, t + dt].

    Cases have an observed event in the window and weight ``1 / G(T-)``;
    controls are still at risk after ``t + dt`` and weight ``1 / G(t + dt)``.
    Higher marker values should indicate higher risk; ties count one half.
    """
    marker = np.asarray(marker, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    end = landmark + horizon
    case = (time > landmark) & (time <= end) & (event == 1)
    control = time > end
    if not case.any() or not control.any():
        raise UndefinedAUCError(
            f"{case.sum()} cases and {control.sum()} controls in ({landmark:g}, {end:g}]")
    G = censoring_survival(time, event)
    g_case = G(time[case], left=True)
    g_ctrl = float(G(end))
    if np.any(g_case <= 0) or g_ctrl <= 0:
        raise UndefinedAUCError("censoring survival estimate reaches zero inside the window")
    w_case = 1.0 / g_case
    mc = marker[case][:, None]
    mk = marker[control][None, :]
    score = (mc > mk) + 0.5 * (mc == mk)
    # control weights are all 1/G(t+dt) and cancel in the ratio
    return float(w_case @ score.mean(axis=1) / w_case.sum())
