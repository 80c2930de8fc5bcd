"""Sequential model-based hyperparameter search.

A Gaussian process with a Matern 5/2 kernel on the unit-scaled search space
is refit after every trial; the next trial maximizes expected improvement
over a seeded candidate pool. The first quarter of the budget is random.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm

from ..gbdt import GbdtHyperparams
from .cv import cross_validate
from .folds import stratified_folds

MIN_BUDGET = 10
_NOISE = 1e-6
_LENGTH_SCALES = (0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2, 2.0)


@dataclass(frozen=True)
class Dimension:
    name: str
    low: float
    high: float
    integer: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high)) or self.low > self.high:
            raise ValueError(f"bad bounds for {self.name}")

    def from_unit(self, u: float):
        v = self.low + float(np.clip(u, 0.0, 1.0)) * (self.high - self.low)
        return int(math.floor(v + 0.5)) if self.integer else v

    def to_unit(self, v) -> float:
        return 0.0 if self.high == self.low else (float(v) - self.low) / (self.high - self.low)


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dimension, ...]

    @classmethod
    def default(cls) -> "SearchSpace":
        return cls((
            Dimension("log_learning_rate", math.log(0.005), math.log(0.3)),
            Dimension("max_depth", 1, 12, True),
            Dimension("num_leaves", 2, 64, True),
            Dimension("min_data_in_leaf", 1, 100, True),
            Dimension("early_stopping_rounds", 5, 50, True),
            Dimension("encode", 0, 1, True),
            Dimension("rebalance", 0, 1, True),
        ))

    def decode(self, u: np.ndarray) -> dict:
        return {d.name: d.from_unit(x) for d, x in zip(self.dims, u)}

    def encode(self, point: dict) -> np.ndarray:
        return np.array([d.to_unit(point[d.name]) for d in self.dims])

    def snap(self, u: np.ndarray) -> np.ndarray:
        """Unit vector of the point that ``u`` actually decodes to."""
        return self.encode(self.decode(u))

    def key(self, point: dict) -> tuple:
        return tuple(point[d.name] for d in self.dims)


@dataclass
class Trial:
    index: int
    point: dict
    fold_scores: tuple[float, ...]
    mean: float
    random: bool


@dataclass
class TuneResult:
    best_params: GbdtHyperparams
    best_trial: Trial
    trials: list[Trial] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(self.trials[0].point) if self.trials else []
        n_folds = max((len(t.fold_scores) for t in self.trials), default=0)
        w.writerow(["trial", *names, *[f"fold{i + 1}" for i in range(n_folds)], "mean", "phase"])
        for t in self.trials:
            w.writerow([t.index, *[t.point[k] for k in names], *[repr(x) for x in t.fold_scores],
                        repr(t.mean), "random" if t.random else "gp-ei"])
        return buf.getvalue()


def _matern52(A: np.ndarray, B: np.ndarray, ls: float) -> np.ndarray:
    d = np.sqrt(np.maximum(((A[:, None, :] - B[None, :, :]) ** 2).sum(-1), 0.0)) / ls
    s5 = math.sqrt(5.0)
    return (1.0 + s5 * d + 5.0 / 3.0 * d**2) * np.exp(-s5 * d)


class _GP:
    def __init__(self, X: np.ndarray, y: np.ndarray):
        self.X = X
        self.mu, self.sd = float(y.mean()), float(y.std())
        self.sd = self.sd if self.sd > 0 else 1.0
        z = (y - self.mu) / self.sd
        best = None
        for ls in _LENGTH_SCALES:
            K = _matern52(X, X, ls) + (_NOISE + 1e-8) * np.eye(len(X))
            try:
                cf = cho_factor(K, lower=True)
            except np.linalg.LinAlgError:
                continue
            alpha = cho_solve(cf, z)
            lml = -0.5 * z @ alpha - np.log(np.diag(cf[0])).sum()
            if best is None or lml > best[0]:
                best = (lml, ls, cf, alpha)
        _, self.ls, self.cf, self.alpha = best

    def predict(self, Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        Ks = _matern52(Xs, self.X, self.ls)
        mean = Ks @ self.alpha
        v = cho_solve(self.cf, Ks.T)
        var = np.maximum(1.0 - np.sum(Ks * v.T, axis=1), 1e-12)
        return mean * self.sd + self.mu, np.sqrt(var) * self.sd


def expected_improvement(mean, std, best, xi: float = 0.01):
    imp = mean - best - xi
    z = imp / std
    return imp * norm.cdf(z) + std * norm.pdf(z)


def bayes_optimize(
    evaluate: Callable[[dict], Sequence[float]],
    space: SearchSpace,
    budget: int,
    seed=0,
    *,
    n_candidates: int = 2048,
) -> tuple[Trial, list[Trial]]:
    """Maximize the mean of ``evaluate(point)`` over ``budget`` trials.

    Re-proposed points reuse their cached evaluation. Ties in the mean keep
    the earliest trial.
    """
    if budget < MIN_BUDGET:
        raise ValueError(f"budget must be >= {MIN_BUDGET} trials for the surrogate")
    rng = np.random.default_rng(seed)
    n_random = math.ceil(budget / 4)
    M = len(space.dims)
    cache: dict[tuple, tuple[float, ...]] = {}
    trials: list[Trial] = []
    best: Trial | None = None

    for i in range(budget):
        is_random = i < n_random
        if is_random:
            u = space.snap(rng.random(M))
        else:
            u = _propose(space, trials, rng, n_candidates, cache)
        point = space.decode(u)
        k = space.key(point)
        if k not in cache:
            cache[k] = tuple(float(x) for x in evaluate(point))
        scores = cache[k]
        t = Trial(i, point, scores, float(np.mean(scores)), is_random)
        trials.append(t)
        if best is None or t.mean > best.mean:
            best = t
    return best, trials


def _propose(space, trials, rng, n_candidates, cache) -> np.ndarray:
    M = len(space.dims)
    X = np.array([space.encode(t.point) for t in trials])
    y = np.array([t.mean for t in trials])
    top = X[int(np.argmax(y))]
    cands = np.vstack([
        rng.random((n_candidates, M)),
        np.clip(top + 0.05 * rng.standard_normal((n_candidates // 8, M)), 0.0, 1.0),
    ])
    cands = np.array([space.snap(c) for c in cands])
    fresh = np.array([space.key(space.decode(c)) not in cache for c in cands])
    if not fresh.any():
        return top
    cands = cands[fresh]
    if y.std() == 0:
        return cands[0]
    gp = _GP(X, y)
    mean, std = gp.predict(cands)
    return cands[int(np.argmax(expected_improvement(mean, std, y.max())))]


def bayes_tune(
    cohort,
    space: SearchSpace | None = None,
    folds: int = 5,
    budget: int = 30,
    objective: str = "auc",
    seed=0,
    *,
    base_params: GbdtHyperparams = GbdtHyperparams(),
    workers: int = 1,
) -> TuneResult:
    """Tune on mean cross-fold ``objective`` (``auc`` or ``f1``)."""
    space = space or SearchSpace.default()
    fold_idx = stratified_folds(cohort.y, folds, seed)
    X, y = cohort.X, cohort.y

    def params_for(point: dict) -> GbdtHyperparams:
        return replace(base_params, **{k: (bool(v) if k in ("encode", "rebalance") else v)
                                       for k, v in point.items()})

    def evaluate(point):
        res = cross_validate(X, y, cohort.schema, params_for(point), fold_idx,
                             objective=objective, workers=workers)
        return res.fold_objective

    best, trials = bayes_optimize(evaluate, space, budget, seed)
    return TuneResult(params_for(best.point), best, trials)
