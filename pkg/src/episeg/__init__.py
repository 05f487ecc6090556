"""Bayesian change-point segmentation of epidemic curves with piecewise
generalized-logistic growth and negative-binomial noise."""

from .core_model import (
    DomainError,
    EpidemicSeries,
    InfeasibleError,
    ModelState,
    PriorSpec,
    SamplerConfig,
    Segmentation,
    SegmentParams,
)
from .inference import forecast, summarize
from .sampler_auto import run_auto_chain
from .sampler_fixed import ChainTrace, run_fixed_chain

__version__ = "0.1.0"

__all__ = [
    "ChainTrace",
    "DomainError",
    "EpidemicSeries",
    "InfeasibleError",
    "ModelState",
    "PriorSpec",
    "SamplerConfig",
    "SegmentParams",
    "Segmentation",
    "forecast",
    "run_auto_chain",
    "run_fixed_chain",
    "summarize",
]
