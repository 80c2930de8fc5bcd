"""Hyperparameter search, beta calibration and the F1 threshold protocol."""
from .bayesopt import SearchSpace, TuneResult, bayes_optimize, bayes_tune
from .calibration import CalibrationParams, apply_calibration, fit_beta_calibration
from .cv import CVResult, cross_validate
from .folds import StratificationError, stratified_folds
from .threshold import ThresholdPolicy, f1_optimal_threshold, select_threshold, threshold_from_folds

__all__ = [
    "CVResult",
    "CalibrationParams",
    "SearchSpace",
    "StratificationError",
    "ThresholdPolicy",
    "TuneResult",
    "apply_calibration",
    "bayes_optimize",
    "bayes_tune",
    "cross_validate",
    "f1_optimal_threshold",
    "fit_beta_calibration",
    "select_threshold",
    "stratified_folds",
    "threshold_from_folds",
]
