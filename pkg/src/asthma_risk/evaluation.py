"""Validation-cohort reports and nested cross-validation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data_io import Cohort
from .gbdt import GbdtHyperparams
from .metrics import EvalReport, auc, baseline_blocks, metric_block
from .model_selection import SearchSpace, stratified_folds
from .pipeline import RiskModel, tune_and_train

ALL_BASELINES = ("cheo", "naive", "random")


def evaluate_on_validation(
    model: RiskModel,
    valid: Cohort,
    baselines: Sequence[str] = ALL_BASELINES,
    *,
    random_prob: float = 0.5,
    seed=0,
    baseline_cohort: Cohort | None = None,
) -> EvalReport:
    """Apply the frozen threshold to ``valid``. The model is scored against
    the program-contaminated labels, the CHEO rule against the clean ones.

    ``baseline_cohort`` supplies the full records for the baselines when
    ``valid`` has been cut down to a reduced model's features.
    """
    if model.threshold is None:
        raise ValueError("model has no decision threshold yet")
    scores = model.decision_scores(valid)
    block = metric_block("model", scores, valid.y, model.threshold)
    ref = valid if baseline_cohort is None else baseline_cohort
    if len(ref) != len(valid):
        raise ValueError("baseline cohort and validation cohort differ in size")
    base = baseline_blocks(ref.records, ref.y, ref.labels_uncontaminated, baselines,
                           random_prob=random_prob, seed=seed)
    return EvalReport(block, len(valid), valid.prevalence, tuple(base))


@dataclass
class NestedCVResult:
    fold_auc: list[float]
    fold_params: list[GbdtHyperparams]

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.fold_auc))


def nested_cv_evaluate(
    cohort: Cohort,
    space: SearchSpace | None = None,
    outer: int = 5,
    inner: int = 5,
    seed=0,
    *,
    budget: int = 10,
    base_params: GbdtHyperparams = GbdtHyperparams(),
    workers: int = 1,
) -> NestedCVResult:
    """Tune and train on each outer-train split only; score its outer-test
    split with the calibrated model."""
    aucs, chosen = [], []
    for k, (tr, te) in enumerate(stratified_folds(cohort.y, outer, seed)):
        train = cohort.take(tr)
        test = cohort.take(te)
        result, tuned = tune_and_train(train, space=space, budget=budget, seed=[seed, k],
                                       base_params=base_params, n_folds=inner, workers=workers)
        aucs.append(auc(result.model.calibrated_scores(test), test.y))
        chosen.append(tuned.best_params)
    return NestedCVResult(aucs, chosen)
