"""Attack-agnostic CLEVER robustness scores (first and second order) with BPDA."""

from .attack import AttackParams, AttackResult, attack, untargeted_attack
from .autodiff import Graph
from .core import (
    BoundInputs,
    MisclassifiedInput,
    ScoreParams,
    ScoreResult,
    clever_score,
    first_order_score,
    hessian_spectral_norm,
    score_function,
    second_order_score,
    select_targets,
)
from .evt import EvtFit, SamplePlan, batch_maxima, estimate_max, fit_reverse_weibull, sample_ball
from .harness import (
    CleverReport,
    ExperimentConfig,
    compare_transforms,
    emit_report,
    load_dataset,
    run_experiment,
)
from .network import MarginFn, Model, load_model, logits, margin, margin_grad, predict, read_model, save_model
from .transforms import TransformSpec, apply, bpda_gradient, parse_transform, true_composed_gradient

__version__ = "0.1.0"

__all__ = [
    "apply",
    "attack",
    "AttackParams",
    "AttackResult",
    "batch_maxima",
    "BoundInputs",
    "bpda_gradient",
    "clever_score",
    "CleverReport",
    "compare_transforms",
    "emit_report",
    "estimate_max",
    "EvtFit",
    "ExperimentConfig",
    "first_order_score",
    "fit_reverse_weibull",
    "Graph",
    "hessian_spectral_norm",
    "load_dataset",
    "load_model",
    "logits",
    "margin",
    "margin_grad",
    "MarginFn",
    "MisclassifiedInput",
    "Model",
    "parse_transform",
    "predict",
    "read_model",
    "run_experiment",
    "sample_ball",
    "SamplePlan",
    "save_model",
    "score_function",
    "ScoreParams",
    "ScoreResult",
    "second_order_score",
    "select_targets",
    "TransformSpec",
    "true_composed_gradient",
    "untargeted_attack",
]
