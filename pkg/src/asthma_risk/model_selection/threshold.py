"""F1-maximizing decision threshold chosen by cross-validation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..metrics import f1_curve
from .folds import StratificationError, stratified_folds


@dataclass(frozen=True)
class ThresholdPolicy:
    grid_lo: float = 0.05
    grid_hi: float = 0.99
    grid_step: float = 0.01
    chosen_threshold: float | None = None
    fold_winners: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if not (0.0 <= self.grid_lo <= self.grid_hi <= 1.0 and self.grid_step > 0):
            raise ValueError("invalid threshold grid")
        if self.chosen_threshold is not None and not (
            self.grid_lo - 1e-12 <= self.chosen_threshold <= self.grid_hi + 1e-12
        ):
            raise ValueError("chosen threshold outside the grid")

    @property
    def n_points(self) -> int:
        return int(round((self.grid_hi - self.grid_lo) / self.grid_step)) + 1

    def grid(self) -> np.ndarray:
        # decimal-rounded so grid values print and compare as written
        k = np.arange(self.n_points)
        return np.round(self.grid_lo + k * self.grid_step, 10)

    def snap(self, value: float) -> float:
        """Nearest grid point; halves round up."""
        k = math.floor((value - self.grid_lo) / self.grid_step + 0.5 + 1e-9)
        k = min(max(k, 0), self.n_points - 1)
        return float(self.grid()[k])

    def to_dict(self) -> dict:
        return {
            "grid_lo": self.grid_lo,
            "grid_hi": self.grid_hi,
            "grid_step": self.grid_step,
            "chosen_threshold": self.chosen_threshold,
            "fold_winners": list(self.fold_winners),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdPolicy":
        return cls(d["grid_lo"], d["grid_hi"], d["grid_step"], d["chosen_threshold"],
                   tuple(d.get("fold_winners", ())))


def f1_optimal_threshold(scores, labels, policy: ThresholdPolicy = ThresholdPolicy()) -> tuple[float, float]:
    """Grid threshold with the highest F1; ties go to the lowest threshold."""
    grid = policy.grid()
    f1 = f1_curve(scores, labels, grid)
    k = int(np.argmax(f1))
    return float(grid[k]), float(f1[k])


def threshold_from_folds(
    fold_scores: Sequence[np.ndarray],
    fold_labels: Sequence[np.ndarray],
    policy: ThresholdPolicy = ThresholdPolicy(),
) -> ThresholdPolicy:
    winners = []
    for s, y in zip(fold_scores, fold_labels):
        if np.sum(y) == 0:
            raise StratificationError("stratification failed: a fold has no positive labels")
        winners.append(f1_optimal_threshold(s, y, policy)[0])
    chosen = policy.snap(float(np.mean(winners)))
    return replace(policy, chosen_threshold=chosen, fold_winners=tuple(winners))


def select_threshold(
    labels,
    fit_predict: Callable[[np.ndarray, np.ndarray], np.ndarray],
    *,
    n_folds: int = 5,
    seed=0,
    policy: ThresholdPolicy = ThresholdPolicy(),
    folds: Sequence[tuple[np.ndarray, np.ndarray]] | None = None,
) -> ThresholdPolicy:
    """Per fold, ``fit_predict(train_idx, test_idx)`` returns scores for the
    held-out rows; each fold's F1-best grid threshold is recorded and the
    chosen threshold is their mean snapped to the grid."""
    y = np.asarray(labels).astype(int)
    if folds is None:
        folds = stratified_folds(y, n_folds, seed)
    scores, ys = [], []
    for tr, te in folds:
        scores.append(np.asarray(fit_predict(tr, te), dtype=float))
        ys.append(y[te])
    return threshold_from_folds(scores, ys, policy)
