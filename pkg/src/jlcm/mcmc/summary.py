"""Posterior summaries and label-switching correction."""

from __future__ import annotations

import numpy as np
import pandas as pd

from ..data import ParameterSet
from .chain import ChainOutput, PARAM_FIELDS

#: Equal-tailed 89% interval.
INTERVAL = (0.055, 0.945)


def relabel(chain: ChainOutput, policy: str = "beta-first") -> ChainOutput:
    """Permute class indices draw by draw to undo label switching.

    With ``policy="beta-first"`` classes are ordered so that the first
    fixed-effect coefficient ``beta[k, 0]`` is ascending in every draw.
    Class-indexed parameters and the stored labels are permuted together,
    so the joint log-likelihood of every draw is unchanged.
    """
    if policy == "none" or chain.K == 1:
        return chain
    if policy != "beta-first":
        raise ValueError(f"unknown relabel policy {policy!r}")
    perm = np.argsort(chain.draws["beta"][:, :, 0], axis=1, kind="stable")  # (S, K)
    inverse = np.argsort(perm, axis=1)
    rows = np.arange(chain.n_draws)[:, None]
    draws = {}
    for f, v in chain.draws.items():
        draws[f] = v[rows, perm] if f in ParameterSet.CLASS_FIELDS else v.copy()
    R = np.take_along_axis(inverse, chain.R.astype(np.int64), axis=1).astype(chain.R.dtype)
    return ChainOutput(K=chain.K, draws=draws, R=R, W=chain.W, loglik=chain.loglik,
                       iterations=chain.iterations, acceptance=dict(chain.acceptance),
                       config=chain.config)


def _labels(field, shape):
    """(class, index) label of every entry of one draw of ``field``."""
    if field in ParameterSet.CLASS_FIELDS:
        K = shape[0]
        width = int(np.prod(shape[1:])) if len(shape) > 1 else 1
        return [(k + 1, j + 1 if len(shape) > 1 else 1) for k in range(K) for j in range(width)]
    return [(0, j + 1) for j in range(int(np.prod(shape)))]


def summarize(chain: ChainOutput) -> pd.DataFrame:
    """Posterior mean, sd and 89% equal-tailed interval of every parameter.

    Returns a frame with columns ``parameter, class, index, estimate, sd,
    ci_low, ci_high``; ``class`` is 1-based and 0 for shared parameters.
    """
    if chain.n_draws < 2:
        raise ValueError("at least two stored draws are needed for a summary")
    rows = []
    for f in PARAM_FIELDS:
        v = chain.draws[f]
        flat = v.reshape(v.shape[0], -1)
        mean = flat.mean(axis=0)
        sd = flat.std(axis=0, ddof=1)
        lo, hi = np.quantile(flat, INTERVAL, axis=0)
        for (k, j), m, s, a, b in zip(_labels(f, v.shape[1:]), mean, sd, lo, hi):
            rows.append((f, k, j, m, s, a, b))
    return pd.DataFrame(rows, columns=["parameter", "class", "index", "estimate", "sd",
                                       "ci_low", "ci_high"])
