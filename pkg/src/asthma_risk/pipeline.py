"""Tune, fit, calibrate and threshold a risk model; save and load it.

Order of operations: out-of-fold raw scores from stratified CV (each fold
early-stops on its held-out part), beta calibration fit on those scores,
the F1 threshold protocol on the calibrated held-out scores, and a full-data
refit for the mean early-stopping round count.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data_io import Cohort
from .gbdt import Ensemble, GbdtHyperparams, fit_matrix, predict_score
from .model_selection import (
    CalibrationParams,
    SearchSpace,
    ThresholdPolicy,
    apply_calibration,
    bayes_tune,
    cross_validate,
    fit_beta_calibration,
    select_threshold,
    stratified_folds,
)

MODEL_FORMAT = "asthma-risk-model"
MODEL_VERSION = 1
THRESHOLD_SPACES = ("calibrated", "raw")


@dataclass(frozen=True)
class RiskModel:
    ensemble: Ensemble
    calibration: CalibrationParams
    policy: ThresholdPolicy
    threshold_space: str = "calibrated"
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.threshold_space not in THRESHOLD_SPACES:
            raise ValueError(f"threshold_space must be one of {THRESHOLD_SPACES}")

    @property
    def schema(self):
        return self.ensemble.schema

    @property
    def threshold(self) -> float:
        return self.policy.chosen_threshold

    def fingerprint(self) -> str:
        return self.ensemble.fingerprint

    def raw_scores(self, data) -> np.ndarray:
        return predict_score(self.ensemble, data)

    def calibrated_scores(self, data) -> np.ndarray:
        return apply_calibration(self.calibration, self.raw_scores(data))

    def decision_scores(self, data) -> np.ndarray:
        """Scores on the scale the threshold was chosen on."""
        if self.threshold_space == "raw":
            return self.raw_scores(data)
        return self.calibrated_scores(data)

    def predict(self, data) -> np.ndarray:
        if self.threshold is None:
            raise ValueError("model has no decision threshold yet")
        return (self.decision_scores(data) >= self.threshold).astype(int)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "fingerprint": self.fingerprint(),
            "config": self.config,
            "ensemble": self.ensemble.to_dict(),
            "calibration": self.calibration.to_dict(),
            "threshold": self.policy.to_dict(),
            "threshold_space": self.threshold_space,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RiskModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not a risk-model artifact")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        ens = Ensemble.from_dict(d["ensemble"])
        if ens.fingerprint != d["fingerprint"]:
            raise ValueError("model artifact fingerprint does not match its schema")
        return cls(ens, CalibrationParams(**d["calibration"]),
                   ThresholdPolicy.from_dict(d["threshold"]), d["threshold_space"], d["config"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RiskModel":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RiskModel":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


@dataclass
class TrainResult:
    model: RiskModel
    oof_raw: np.ndarray
    folds: list
    fold_auc: list[float]
    refit_rounds: int


def fit_stage(cohort: Cohort, params: GbdtHyperparams, folds, *, workers: int = 1):
    """Out-of-fold raw scores plus the full-data refit.

    Returns ``(ensemble, CVResult)``; the refit runs for the mean
    early-stopping round count of the folds.
    """
    X, y = cohort.X, cohort.y
    cv = cross_validate(X, y, cohort.schema, params, folds, objective="auc", workers=workers)
    rounds = max(1, cv.refit_rounds)
    ensemble = fit_matrix(X, y, cohort.schema, replace(params, max_rounds=rounds))
    return ensemble, cv


def threshold_stage(oof_raw, labels, folds, calibration: CalibrationParams, *,
                    threshold_space: str = "calibrated",
                    policy: ThresholdPolicy = ThresholdPolicy()) -> ThresholdPolicy:
    oof_raw = np.asarray(oof_raw, dtype=float)
    if threshold_space not in THRESHOLD_SPACES:
        raise ValueError(f"threshold_space must be one of {THRESHOLD_SPACES}")
    decision = oof_raw if threshold_space == "raw" else apply_calibration(calibration, oof_raw)
    return select_threshold(labels, lambda tr, te: decision[te], folds=folds, policy=policy)


def train_risk_model(
    cohort: Cohort,
    params: GbdtHyperparams,
    *,
    n_folds: int = 5,
    seed=0,
    threshold_space: str = "calibrated",
    policy: ThresholdPolicy = ThresholdPolicy(),
    workers: int = 1,
    config: dict | None = None,
) -> TrainResult:
    if threshold_space not in THRESHOLD_SPACES:
        raise ValueError(f"threshold_space must be one of {THRESHOLD_SPACES}")
    y = cohort.y
    folds = stratified_folds(y, n_folds, seed)
    ensemble, cv = fit_stage(cohort, params, folds, workers=workers)
    calibration = fit_beta_calibration(cv.oof_scores, y)
    chosen = threshold_stage(cv.oof_scores, y, folds, calibration,
                             threshold_space=threshold_space, policy=policy)
    model = RiskModel(ensemble, calibration, chosen, threshold_space, dict(config or {}))
    return TrainResult(model, cv.oof_scores, folds, cv.fold_objective, ensemble.best_iteration)


def tune_and_train(
    cohort: Cohort,
    *,
    space: SearchSpace | None = None,
    budget: int = 30,
    objective: str = "auc",
    seed=0,
    base_params: GbdtHyperparams = GbdtHyperparams(),
    n_folds: int = 5,
    threshold_space: str = "calibrated",
    workers: int = 1,
    config: dict | None = None,
):
    """Full workflow: Bayesian tuning, then :func:`train_risk_model` with the
    winner. Returns ``(TrainResult, TuneResult)``."""
    tuned = bayes_tune(cohort, space, n_folds, budget, objective, seed,
                       base_params=base_params, workers=workers)
    result = train_risk_model(cohort, tuned.best_params, n_folds=n_folds, seed=seed,
                              threshold_space=threshold_space, workers=workers, config=config)
    return result, tuned
