"""Bayesian double GLM Tweedie models with spatial effects and variable selection."""
from .diagnostics import PosteriorSummary, aic, ess_acf, predict, summarize, summarize_chain
from .model import Hyperparameters, ModelId, ModelState, ObservationSet
from .samplers import ChainOutput, McmcConfig, run_chain, run_chains
from .selection import SelectionReport, fdr_select
from .spatial import SpatialDomain
from .synth import Scenario, evaluate_fit, generate_dataset, run_replication
from .tweedie import DensityMethod, deviance, log_density, log_likelihood, sample_cpg

__version__ = "0.1.0"

__all__ = [
    "ChainOutput",
    "DensityMethod",
    "Hyperparameters",
    "McmcConfig",
    "ModelId",
    "ModelState",
    "ObservationSet",
    "PosteriorSummary",
    "Scenario",
    "SelectionReport",
    "SpatialDomain",
    "aic",
    "deviance",
    "ess_acf",
    "evaluate_fit",
    "fdr_select",
    "generate_dataset",
    "log_density",
    "log_likelihood",
    "predict",
    "run_chain",
    "run_chains",
    "run_replication",
    "sample_cpg",
    "summarize",
    "summarize_chain",
]
