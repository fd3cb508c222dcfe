"""Posterior sampling with Langevin and natural-gradient update rules."""
from . import data, fisher, harness, metric, models, oracles, samplers
from .data import Dataset
from .metric import MetricMatrix
from .models import ModelSpec
from .harness import ExperimentConfig
from .samplers import Chain, ModelProblem, SamplerConfig, run_chain

__version__ = "0.1.0"
