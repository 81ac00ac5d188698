"""Noisy-label training with mismatch-guided mixing.

Out-of-fold predictions flag samples whose given label disagrees with the
cross-validated prediction; only those are mixed, with a partner predicted
in the same class, under a soft target between the given and the predicted
label. ERM, Mixup and Mixup* are available as reference strategies.
"""
from .crossval import ClassIndex, KFoldPlan, MismatchSet, OofPredictions, class_index, make_folds, mismatch_set, oof_predict
from .datasets import Dataset, NoiseSpec, SyntheticSpec, gen_gaussian, inject_noise, load_idx, relabel_with_oof
from .harness import ExperimentConfig, ExperimentReport, evaluate, run_experiment, summarize, sweep_alpha, theory_check
from .mixing import MixedBatch, MixStrategy, build_mixed_batch, composite_loss, sample_lambda, select_partner
from .netcore import NetworkSpec, NetworkState, SgdHyper, forward, gradients, lr_at, sgd_step, soft_cross_entropy
from .theory import KappaPair, RiskReport, estimate_delta, estimate_risks, kappa, linearity_residual

__all__ = [
    "ClassIndex",
    "KFoldPlan",
    "MismatchSet",
    "OofPredictions",
    "class_index",
    "make_folds",
    "mismatch_set",
    "oof_predict",
    "Dataset",
    "NoiseSpec",
    "SyntheticSpec",
    "gen_gaussian",
    "inject_noise",
    "load_idx",
    "relabel_with_oof",
    "ExperimentConfig",
    "ExperimentReport",
    "evaluate",
    "run_experiment",
    "summarize",
    "sweep_alpha",
    "theory_check",
    "MixedBatch",
    "MixStrategy",
    "build_mixed_batch",
    "composite_loss",
    "sample_lambda",
    "select_partner",
    "NetworkSpec",
    "NetworkState",
    "SgdHyper",
    "forward",
    "gradients",
    "lr_at",
    "sgd_step",
    "soft_cross_entropy",
    "KappaPair",
    "RiskReport",
    "estimate_delta",
    "estimate_risks",
    "kappa",
    "linearity_residual",
]

__version__ = "0.1.0"
