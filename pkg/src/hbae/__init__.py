"""Hierarchical Bayesian inversion with posterior-informed approximation-error correction."""

from .bae import ErrorStatistics, build_error_ensemble, chain_source, error_statistics, prior_source, total_error_model
from .config import ConfigError, load_config
from .posterior import (GaussianPrior, InverseProblem, UniformPrior, bae_log_posterior, naive_log_posterior,
                        synthesize_data)
from .probability import GaussianModel, derive_seed, make_rng
from .sampler import Chain, SamplerConfig, run_ensemble

__version__ = "0.1.0"

__all__ = [
    "ErrorStatistics",
    "build_error_ensemble",
    "chain_source",
    "error_statistics",
    "prior_source",
    "total_error_model",
    "ConfigError",
    "load_config",
    "GaussianPrior",
    "InverseProblem",
    "UniformPrior",
    "bae_log_posterior",
    "naive_log_posterior",
    "synthesize_data",
    "GaussianModel",
    "derive_seed",
    "make_rng",
    "Chain",
    "SamplerConfig",
    "run_ensemble",
]
