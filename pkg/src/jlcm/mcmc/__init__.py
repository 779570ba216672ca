"""Metropolis-within-Gibbs sampling for the joint latent class model."""

from .adaptive import AdaptationState, BatchAdaptation, adaptive_metropolis_step
from .chain import ChainOutput, DivergenceError, initial_values, run_chain
from .config import PriorConfig, SamplerConfig
from .summary import INTERVAL, relabel, summarize
from .gibbs import (beta_conditional, class_probabilities, lambda_conditional,
                    sample_beta_k, sample_class_indicators, sample_lambda_k,
                    sample_tau_k, tau_conditional)

__all__ = [
    "AdaptationState", "BatchAdaptation", "adaptive_metropolis_step",
    "ChainOutput", "DivergenceError", "initial_values", "run_chain",
    "PriorConfig", "SamplerConfig", "INTERVAL", "relabel", "summarize",
    "beta_conditional", "class_probabilities", "lambda_conditional",
    "sample_beta_k", "sample_class_indicators", "sample_lambda_k",
    "sample_tau_k", "tau_conditional",
]
