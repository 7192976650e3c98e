"""Latent Markov random-effects logit models for panels with informative dropout."""

__version__ = "0.1.0"

from .data import Dataset, ModelConfig, SubjectPanel, derive_dropout, load_config, load_dataset, split_design, write_dataset
from .chain import ChainLaws, ChainParamsParametric, ChainParamsSaturated, MixingParams, chain_laws, initial_probs, transition_matrix
from .likelihood import (
    EmissionParams,
    ParameterSet,
    Posteriors,
    brute_force_loglik,
    conditional_loglik,
    emission_prob,
    forward_backward,
    score,
)
from .em import EMConfig, FitResult, e_step, fit_em, fit_from, fit_time_constant, refine_newton, short_run_init
from .inference import (
    average_state_probs,
    classification_index,
    decode_at_attrition,
    information_criteria,
    local_decode,
    param_count,
    parametric_bootstrap,
)
from .estimators import LatentMarkovDropout, TimeConstantMixture
from .simulate import SchemeSpec, run_replications, simulate_conditional, simulate_joint

__all__ = [
    "ChainLaws",
    "ChainParamsParametric",
    "ChainParamsSaturated",
    "Dataset",
    "EMConfig",
    "EmissionParams",
    "FitResult",
    "LatentMarkovDropout",
    "MixingParams",
    "ModelConfig",
    "ParameterSet",
    "Posteriors",
    "SchemeSpec",
    "SubjectPanel",
    "TimeConstantMixture",
    "average_state_probs",
    "brute_force_loglik",
    "chain_laws",
    "classification_index",
    "conditional_loglik",
    "decode_at_attrition",
    "derive_dropout",
    "e_step",
    "emission_prob",
    "fit_em",
    "fit_from",
    "fit_time_constant",
    "forward_backward",
    "information_criteria",
    "initial_probs",
    "load_config",
    "load_dataset",
    "local_decode",
    "param_count",
    "parametric_bootstrap",
    "refine_newton",
    "run_replications",
    "score",
    "short_run_init",
    "simulate_conditional",
    "simulate_joint",
    "split_design",
    "transition_matrix",
    "write_dataset",
]
