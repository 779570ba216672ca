from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the priors.

    ``beta_mean`` / ``beta_cov`` may be left as ``None`` and are then
    expanded to ``0`` and ``beta_var * I`` for the fixed-effect dimension.
    Elements of (omega, xi, alpha1, alpha2, gamma) get independent
    ``N(0, theta_var)`` priors.
    """

    beta_mean: Optional[np.ndarray] = None
    beta_cov: Optional[np.ndarray] = None
    beta_var: float = 100.0
    lam_shape: float = 0.01
    lam_rate: float = 0.01
    tau_shape: float = 0.01
    tau_rate: float = 0.01
    theta_var: float = 1.0

    def __post_init__(self):
        for name in ("beta_var", "lam_shape", "lam_rate", "tau_shape", "tau_rate", "theta_var"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.beta_cov is not None:
            cov = np.asarray(self.beta_cov, dtype=float)
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError("beta_cov must be symmetric positive definite") from None

    def beta_prior(self, p2: int):
        """Return (mean, covariance, precision) of the fixed-effect prior."""
        mean = np.zeros(p2) if self.beta_mean is None else np.asarray(self.beta_mean, dtype=float)
        cov = self.beta_var * np.eye(p2) if self.beta_cov is None else np.asarray(self.beta_cov, dtype=float)
        if mean.shape != (p2,) or cov.shape != (p2, p2):
            raise ValueError(f"beta prior has wrong dimension for p2={p2}")
        return mean, cov, np.linalg.inv(cov)


@dataclass(frozen=True)
class SamplerConfig:
    """Run length, seed and adaptive-Metropolis constants.

    ``sigma2`` scales the adaptive covariance, ``alpha_prop`` is the weight
    of the fixed safety component, and ``initial_scale`` the standard
    deviation (before division by the block dimension) of the fixed
    component used alone for the first ``2 * dim`` iterations of a block.
    With ``use_likelihood=False`` every data term is dropped and the chain
    samples the prior.
    """

    n_iter: int = 5000
    burn_in: int = 2000
    thin: int = 1
    seed: int = 0
    sigma2: float = 2.38 ** 2
    alpha_prop: float = 0.05
    initial_scale: float = 0.1
    relabel: str = "beta-first"
    use_likelihood: bool = True
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be positive")
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if not 0 < self.alpha_prop < 1:
            raise ValueError("alpha_prop must lie in (0, 1)")
        if not (self.sigma2 > 0 and self.initial_scale > 0):
            raise ValueError("sigma2 and initial_scale must be positive")
        if self.relabel not in ("beta-first", "none"):
            raise ValueError(f"unknown relabel policy {self.relabel!r}")

    @property
    def n_draws(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin
