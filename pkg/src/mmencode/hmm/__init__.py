"""Gaussian and Gaussian-linear hidden Markov models."""

from ._inference import forward_backward_log, forward_backward_scaled
from .model import (
    GaussianHMM,
    GaussianLinearHMM,
    forward_backward,
    sample_hmm,
    state_marginals,
)
from .pipeline import HmmPipelineConfig, predict_glhmm_pipeline
from .preprocess import HmmPreprocessor, preprocess

__all__ = [
    "GaussianHMM",
    "GaussianLinearHMM",
    "HmmPipelineConfig",
    "HmmPreprocessor",
    "forward_backward",
    "forward_backward_log",
    "forward_backward_scaled",
    "predict_glhmm_pipeline",
    "preprocess",
    "sample_hmm",
    "state_marginals",
]
