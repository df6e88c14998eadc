"""Inference of attacker parameters (knowledge, capability, objective) from a
single observed adversarial perturbation, via bi-level MAP optimization."""

from .attackers import (
    BoxAttacker,
    LinearAttacker,
    LogisticModel,
    MLPModel,
    PGDConfig,
    logits,
    optimal_attack_box,
    optimal_attack_linear,
)
from .core_math import (
    EPS_PD,
    PDMatrix,
    SpectralTop,
    gaussian_logpdf,
    mahalanobis_norm,
    matrix_normal_logpdf,
    pd_from_factor,
    pd_from_product,
    pd_identity,
    top_right_singular,
)
from .data_io import ExperimentConfig, LabeledDataset, load_pendigits, parse_config, write_summary
from .experiments import (
    TrainConfig,
    TrialRecord,
    TrialSummary,
    err,
    per,
    run_trials,
    train_logistic,
    train_mlp,
)
from .identifiability import (
    MembershipReport,
    construct_capability,
    construct_knowledge,
    construct_objective,
    verify_membership,
)
from .inference import (
    InferenceConfig,
    InferenceResult,
    infer_box,
    infer_linear,
    outer_objective_box,
    outer_objective_linear,
)
from .priors import (
    BoxPrior,
    LinearPrior,
    SampleConfig,
    build_box_prior,
    prior_logdensity_box,
    prior_logdensity_linear,
    sample_box_attacker,
    sample_linear_attacker,
)

__version__ = "0.1.0"
