"""Bayesian estimation of the dynamics parameters from weekly cases."""

from counterfact.inference.model import InferenceConfig, PosteriorModel, log_posterior
from counterfact.inference.sampler import (
    PosteriorResult,
    PosteriorSample,
    SamplingError,
    batch_means_se,
    posterior_predictive,
    sample_posterior,
)

__all__ = [
    "InferenceConfig",
    "PosteriorModel",
    "PosteriorResult",
    "PosteriorSample",
    "SamplingError",
    "batch_means_se",
    "log_posterior",
    "posterior_predictive",
    "sample_posterior",
]
