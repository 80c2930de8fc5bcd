from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..gbdt import Ensemble, GbdtHyperparams, fit_matrix, sigmoid
from ..metrics import auc
from ..schema import FeatureSchema
from .threshold import ThresholdPolicy, f1_optimal_threshold

OBJECTIVES = ("auc", "f1")


@dataclass
class CVResult:
    oof_scores: np.ndarray
    folds: list[tuple[np.ndarray, np.ndarray]]
    fold_objective: list[float]
    best_iterations: list[int]

    @property
    def mean_objective(self) -> float:
        return float(np.mean(self.fold_objective))

    @property
    def refit_rounds(self) -> int:
        return int(round(float(np.mean(self.best_iterations))))


def fold_objective(scores, labels, objective: str, policy: ThresholdPolicy = ThresholdPolicy()) -> float:
    if objective == "auc":
        return auc(scores, labels)
    if objective == "f1":
        return f1_optimal_threshold(scores, labels, policy)[1]
    raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")


def cross_validate(
    X: np.ndarray,
    y: np.ndarray,
    schema: FeatureSchema,
    params: GbdtHyperparams,
    folds: Sequence[tuple[np.ndarray, np.ndarray]],
    *,
    objective: str = "auc",
    workers: int = 1,
) -> CVResult:
    """Out-of-fold raw scores. Each fold early-stops on its held-out part,
    and the mean stopping round sizes the full-data refit."""
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    y = np.asarray(y, dtype=int)

    def run(fold) -> Ensemble:
        tr, te = fold
        return fit_matrix(X[tr], y[tr], schema, params, X[te], y[te])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            models = list(pool.map(run, folds))
    else:
        models = [run(f) for f in folds]
    oof = np.empty(y.size)
    objs = []
    for (tr, te), m in zip(folds, models):
        oof[te] = sigmoid(m.margin_matrix(X[te]))
        objs.append(fold_objective(oof[te], y[te], objective))
    return CVResult(oof, list(folds), objs, [m.best_iteration for m in models])
