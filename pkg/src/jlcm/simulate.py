"""Synthetic data from the general joint latent class model.

Each subject gets a standard-normal baseline covariate X1, a Bernoulli(0.5)
treatment indicator X3, random effects W ~ N(0, Sigma_i) with covariance
design A = B = (1, X3), one class label per scheduled visit drawn from the
multinomial-logit membership model on (X1, Time), Gaussian responses with
fixed effects on (X1, Time) and random intercept and slope, and a Gompertz
event time obtained by inverting the cumulative hazard.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .covariance import build_factors
from .data import CovarianceDesign, Dataset, ParameterSet
from .likelihood import GAMMA_EPS, membership_probabilities


def scenario_parameters() -> ParameterSet:
    """The two-class reference parameter set (q = 2)."""
    return ParameterSet(
        xi=np.array([[0.01, 0.2], [0.0, 1.0]]),
        beta=np.array([[2.0, 1.5], [4.0, 3.0]]),
        omega=np.array([[0.5], [0.8]]),
        gamma=np.array([0.2, -0.2]),
        tau=np.array([0.1, 0.5]),
        lam0=np.array([0.2, 0.1]),
        alpha1=np.array([-0.2, -0.5]),
        alpha2=np.array([0.1, 0.3]),
    )


@dataclass(frozen=True)
class SimulationScenario:
    """Design and true parameters of one simulated dataset.

    Visits are scheduled at ``0, spacing, ..., (n_visits - 1) * spacing`` and
    dropped once they fall after the subject's follow-up time.  Follow-up
    ends at the first of the event, ``admin_censor`` and an independent
    ``U(censor_low, censor_high)`` dropout time; ``censoring=False`` turns
    all censoring off.  ``fixed_class`` forces every label to one class
    (0-based).
    """

    N: int = 200
    n_visits: int = 6
    spacing: float = 0.2
    params: ParameterSet = field(default_factory=scenario_parameters)
    admin_censor: float = 1.2
    censor_low: float = 0.4
    censor_high: float = 2.0
    censoring: bool = True
    fixed_class: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.n_visits < 1 or not self.spacing > 0:
            raise ValueError("visit schedule must be nonempty with positive spacing")
        if self.censoring and not (0 < self.censor_low <= self.censor_high and self.admin_censor > 0):
            raise ValueError("censoring times must be positive with censor_low <= censor_high")
        p = self.params
        if p.xi.shape[1] != 2 or p.beta.shape[1] != 2 or p.omega.shape[1] != 1:
            raise ValueError("scenario covariates are (X1, Time) and X3; parameter widths must match")
        if p.alpha1.shape != (2,) or p.alpha2.shape != (2,):
            raise ValueError("covariance design is (1, X3); alpha1 and alpha2 need length 2")
        if self.fixed_class is not None and not 0 <= self.fixed_class < p.K:
            raise ValueError("fixed_class out of range")
        if not self.censoring:
            used = range(p.K) if self.fixed_class is None else [self.fixed_class]
            if any(p.gamma[k] < 0 for k in used):
                raise ValueError("without censoring every class needs gamma >= 0 "
                                 "(otherwise event times can be infinite)")

    @property
    def schedule(self) -> np.ndarray:
        return self.spacing * np.arange(self.n_visits)


def scenario_defaults() -> SimulationScenario:
    return SimulationScenario()


def gompertz_inverse(u, eta, lam0, gamma):
    """Event time with survival probability ``u`` under a Gompertz hazard.

    Solves ``H(T) = -log u`` for ``H(t) = lam0 e^eta (e^{gamma t} - 1) / gamma``.
    Returns ``inf`` where the total hazard mass is below ``-log u`` (only
    possible for ``gamma < 0``).
    """
    u = np.asarray(u, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    target = -np.log(u) / (lam0 * np.exp(eta))
    small = np.abs(gamma) < GAMMA_EPS
    g = np.where(small, 1.0, gamma)
    arg = g * target
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(arg > -1.0, np.log1p(np.maximum(arg, -1.0 + 1e-300)) / g, np.inf)
    out = np.where(small, target, t)
    return float(out) if out.ndim == 0 else out


def _draw_W(rng, params: ParameterSet, a_row, q):
    f = build_factors(params.alpha1, params.alpha2, CovarianceDesign(A=a_row, B=a_row), q)
    e = rng.standard_normal(q + 1) * np.exp(0.5 * f.log_d2)
    return solve_triangular(f.T, e, lower=True, unit_diagonal=True)


def _simulate_subject(rng, sc: SimulationScenario, i: int):
    p = sc.params
    q = 2
    times = sc.schedule
    x1 = rng.standard_normal()
    x3 = float(rng.random() < 0.5)
    a_row = np.array([1.0, x3])
    W = _draw_W(rng, p, a_row, q)

    X1 = np.column_stack([np.full(len(times), x1), times])
    Z = np.column_stack([np.ones(len(times)), times])
    u_lab = rng.random(len(times))
    if sc.fixed_class is None:
        probs = np.array([membership_probabilities(row, p.xi) for row in X1])
        labels = (u_lab[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
        labels = np.minimum(labels, p.K - 1)
    else:
        labels = np.full(len(times), sc.fixed_class)
    eps = rng.standard_normal(len(times)) * np.sqrt(p.tau[labels])
    y = np.einsum("jp,jp->j", X1, p.beta[labels]) + Z @ W[:q] + eps

    u = rng.random()
    eta = p.omega[:, 0] * x3 + W[q]
    T_class = gompertz_inverse(np.full(p.K, u), eta, p.lam0, p.gamma)
    if sc.censoring:
        C = min(sc.admin_censor, rng.uniform(sc.censor_low, sc.censor_high))
    else:
        C = np.inf
    # Survival follows the class at the last visit scheduled before dropout.
    # Choosing the visit from the event time instead would tie the final
    # label to T through the time trend of the membership model and bias
    # the hazard shape.
    j = int(np.searchsorted(times, C, side="right")) - 1
    T = T_class[labels[max(j, 0)]]
    followup = min(T, C)
    event = int(T <= C)
    keep = times <= followup
    return dict(x1=X1[keep], z=Z[keep], times=times[keep], y=y[keep], labels=labels[keep],
                followup=followup, event=event, x3=x3, a=a_row, W=W)


def simulate_dataset(scenario: SimulationScenario | None = None) -> Dataset:
    """Draw one dataset; identical seeds give identical datasets.

    Every subject uses its own substream spawned from ``scenario.seed``.
    """
    sc = scenario or scenario_defaults()
    streams = np.random.SeedSequence(sc.seed).spawn(sc.N)
    subs = [_simulate_subject(np.random.default_rng(s), sc, i) for i, s in enumerate(streams)]
    counts = np.array([len(s["y"]) for s in subs])
    X = np.concatenate([s["x1"] for s in subs])
    return Dataset(
        subject_ids=np.arange(1, sc.N + 1).astype(object),
        obs_subject=np.repeat(np.arange(sc.N), counts),
        obs_time=np.concatenate([s["times"] for s in subs]),
        y=np.concatenate([s["y"] for s in subs]),
        X1=X,
        X2=X.copy(),
        Z=np.concatenate([s["z"] for s in subs]),
        followup=np.array([s["followup"] for s in subs]),
        event=np.array([s["event"] for s in subs]),
        X3=np.array([[s["x3"]] for s in subs]),
        A=np.array([s["a"] for s in subs]),
        B=np.array([s["a"] for s in subs]),
        true_classes=np.concatenate([s["labels"] for s in subs]).astype(np.int64),
        true_W=np.array([s["W"] for s in subs]),
        covariate_names={"X1": ["X1", "obstime"], "X2": ["X1", "obstime"], "Z": ["1", "obstime"],
                         "X3": ["X3"], "A": ["1", "X3"], "B": ["1", "X3"]},
    )


def with_seed(scenario: SimulationScenario, seed: int) -> SimulationScenario:
    return replace(scenario, seed=seed)
