"""Kernel SHAP attributions, an exact Shapley oracle, global feature ranking
and top-k model reduction.

Masked features are imputed by averaging the model output over a background
sample, so the value of a coalition S is ``mean_b f(x_S, b_notS)``.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data_io import Cohort
from .gbdt import GbdtHyperparams, sigmoid
from .model_selection import SearchSpace, apply_calibration
from .pipeline import RiskModel, TrainResult, train_risk_model, tune_and_train

MAX_FULL_FEATURES = 25
MAX_EXACT_FEATURES = 12
DEFAULT_BACKGROUND = 100

ModelFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Explanation:
    base_value: float
    phi: np.ndarray
    output: float
    feature_names: tuple[str, ...] = ()

    @property
    def efficiency_gap(self) -> float:
        return float(self.base_value + self.phi.sum() - self.output)


def shapley_kernel_weight(M: int, k: int) -> float:
    """(M-1) / (C(M,k) k (M-k)); infinite at the endpoints, which are handled
    by the efficiency constraint instead."""
    if k <= 0 or k >= M:
        return math.inf
    return (M - 1) / (math.comb(M, k) * k * (M - k))


def _as_arrays(record, background) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(record, dtype=float).ravel()
    bg = np.asarray(background, dtype=float)
    if bg.ndim == 1:
        bg = bg[None, :]
    if bg.shape[0] == 0:
        raise ValueError("background set is empty")
    if bg.shape[1] != x.size:
        raise ValueError("record and background widths differ")
    return x, bg


def _coalition_values(model_fn: ModelFn, x: np.ndarray, bg: np.ndarray, masks: np.ndarray,
                      chunk_rows: int = 200_000) -> np.ndarray:
    """Mean model output over the background for each boolean mask row."""
    B = bg.shape[0]
    out = np.empty(masks.shape[0])
    per = max(1, chunk_rows // B)
    for start in range(0, masks.shape[0], per):
        m = masks[start:start + per]
        Z = np.where(m[:, None, :], x[None, None, :], bg[None, :, :]).reshape(-1, x.size)
        out[start:start + per] = np.asarray(model_fn(Z), dtype=float).reshape(m.shape[0], B).mean(1)
    return out


def _full_masks(M: int) -> tuple[np.ndarray, np.ndarray]:
    codes = np.arange(1, 2**M - 1)
    masks = ((codes[:, None] >> np.arange(M)[None, :]) & 1).astype(bool)
    k = masks.sum(1)
    w = np.array([shapley_kernel_weight(M, int(s)) for s in range(M + 1)])[k]
    return masks, w


def _sampled_masks(M: int, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Enumerate whole coalition sizes (paired with their complements) while
    the budget covers them, then sample the rest from the kernel's size
    distribution with complement pairing."""
    n_sizes = math.ceil((M - 1) / 2)
    n_paired = (M - 1) // 2
    size_w = np.array([(M - 1) / (k * (M - k)) for k in range(1, n_sizes + 1)])
    size_w[:n_paired] *= 2
    size_w /= size_w.sum()
    masks, weights = [], []
    remaining = n
    n_full = 0
    left = size_w.copy()
    for i, k in enumerate(range(1, n_sizes + 1)):
        count = math.comb(M, k) * (2 if i < n_paired else 1)
        if remaining * left[i] / count < 1 - 1e-8:
            break
        n_full += 1
        remaining -= count
        per = size_w[i] / count
        for combo in itertools.combinations(range(M), k):
            m = np.zeros(M, dtype=bool)
            m[list(combo)] = True
            masks.append(m)
            weights.append(per)
            if i < n_paired:
                masks.append(~m)
                weights.append(per)
        if left[i + 1:].sum() > 0:
            left[i + 1:] /= left[i + 1:].sum()
    if n_full < n_sizes and remaining > 0:
        rest = size_w[n_full:] / size_w[n_full:].sum()
        drawn: dict[bytes, list] = {}
        taken = 0
        while taken < remaining:
            k = n_full + 1 + int(rng.choice(rest.size, p=rest))
            m = np.zeros(M, dtype=bool)
            m[rng.permutation(M)[:k]] = True
            for mm in ([m, ~m] if k - 1 < n_paired else [m]):
                key = mm.tobytes()
                if key in drawn:
                    drawn[key][1] += 1.0
                else:
                    drawn[key] = [mm, 1.0]
                taken += 1
        mass = size_w[n_full:].sum()
        total = sum(v[1] for v in drawn.values())
        for mm, c in drawn.values():
            masks.append(mm)
            weights.append(mass * c / total)
    return np.array(masks, dtype=bool).reshape(-1, M), np.array(weights)


def _solve_constrained(masks: np.ndarray, y: np.ndarray, w: np.ndarray, delta: float) -> np.ndarray:
    """Weighted least squares for phi with sum(phi) = delta (last coordinate
    eliminated)."""
    Z = masks.astype(float)
    M = Z.shape[1]
    if M == 1:
        return np.array([delta])
    A = Z[:, :-1] - Z[:, -1:]
    b = y - Z[:, -1] * delta
    sw = np.sqrt(w)
    head, *_ = np.linalg.lstsq(A * sw[:, None], b * sw, rcond=None)
    return np.append(head, delta - head.sum())


def kernel_shap(
    model_fn: ModelFn,
    record,
    background,
    n_coalitions: int | str = "full",
    seed=0,
    feature_names: Sequence[str] = (),
) -> Explanation:
    """Kernel SHAP for one encoded record against an encoded background."""
    x, bg = _as_arrays(record, background)
    M = x.size
    fx = float(np.asarray(model_fn(x[None, :]), dtype=float)[0])
    base = float(np.mean(model_fn(bg)))
    if M == 1:
        return Explanation(base, np.array([fx - base]), fx, tuple(feature_names))
    if n_coalitions == "full":
        if M > MAX_FULL_FEATURES:
            raise ValueError(f"enumeration infeasible for M={M} features")
        masks, w = _full_masks(M)
    else:
        n = int(n_coalitions)
        if n < 2 * M:
            raise ValueError(f"n_coalitions must be >= 2*M = {2 * M}")
        masks, w = _sampled_masks(M, n, np.random.default_rng(seed))
    v = _coalition_values(model_fn, x, bg, masks)
    phi = _solve_constrained(masks, v - base, w, fx - base)
    return Explanation(base, phi, fx, tuple(feature_names))


def exact_shapley(model_fn: ModelFn, record, background, feature_names: Sequence[str] = ()) -> Explanation:
    """Direct Shapley sum over every coalition; ground truth for small M."""
    x, bg = _as_arrays(record, background)
    M = x.size
    if M > MAX_EXACT_FEATURES:
        raise ValueError(f"exact Shapley limited to M <= {MAX_EXACT_FEATURES}, got {M}")
    codes = np.arange(2**M)
    masks = ((codes[:, None] >> np.arange(M)[None, :]) & 1).astype(bool)
    v = _coalition_values(model_fn, x, bg, masks)
    size = masks.sum(1)
    coef = np.array([math.factorial(s) * math.factorial(M - s - 1) / math.factorial(M)
                     if s < M else 0.0 for s in range(M + 1)])
    phi = np.zeros(M)
    for i in range(M):
        without = ~masks[:, i]
        phi[i] = np.sum(coef[size[without]] * (v[codes[without] | (1 << i)] - v[without]))
    return Explanation(float(v[0]), phi, float(v[-1]), tuple(feature_names))


# --------------------------------------------------------------------------
# model-level wrappers


def model_output_fn(model: RiskModel, output: str = "probability") -> ModelFn:
    """Calibrated probability (default) or raw margin of a fitted model."""
    ens = model.ensemble
    if output == "margin":
        return ens.margin_matrix
    if output == "probability":
        return lambda X: apply_calibration(model.calibration, sigmoid(ens.margin_matrix(X)))
    raise ValueError("output must be 'probability' or 'margin'")


def sample_background(cohort: Cohort, size: int = DEFAULT_BACKGROUND, seed=0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = len(cohort)
    idx = np.sort(rng.choice(n, size=min(size, n), replace=False))
    return cohort.X[idx]


@dataclass
class FeatureRanking:
    entries: list[tuple[str, float]]
    plot_rows: list[tuple[str, str, float, float]] = field(default_factory=list)

    @property
    def features(self) -> list[str]:
        return [f for f, _ in self.entries]

    def top(self, k: int) -> list[str]:
        return self.features[:k]

    def to_csv(self, top_k: int | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "feature", "mean_abs_phi"])
        for r, (f, v) in enumerate(self.entries[:top_k], start=1):
            w.writerow([r, f, repr(v)])
        return buf.getvalue()

    def plot_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["record_id", "feature", "value", "phi"])
        for rid, f, x, p in self.plot_rows:
            w.writerow([rid, f, "" if np.isnan(x) else repr(x), repr(p)])
        return buf.getvalue()


def rank_features(
    model: RiskModel,
    sample: Cohort,
    background: np.ndarray,
    seed=0,
    *,
    n_coalitions: int | str | None = None,
    output: str = "probability",
) -> FeatureRanking:
    """Mean |phi| per feature over ``sample``; ties keep schema order."""
    if len(sample) == 0:
        raise ValueError("sample is empty")
    fn = model_output_fn(model, output)
    names = model.schema.names
    M = len(names)
    X = model.ensemble.encode(sample.schema, sample.records, getattr(sample, "_X", None))
    if n_coalitions is None:
        n_coalitions = "full" if M <= 10 else 2 * M + 512
    ss = np.random.SeedSequence(seed if not isinstance(seed, (list, tuple)) else list(seed))
    seeds = ss.spawn(len(sample))
    phis = np.empty((len(sample), M))
    rows = []
    for i, rec in enumerate(sample.records):
        e = kernel_shap(fn, X[i], background, n_coalitions, seeds[i])
        phis[i] = e.phi
        rows.extend((rec.patient_id, names[j], float(X[i, j]), float(e.phi[j])) for j in range(M))
    mean_abs = np.abs(phis).mean(0)
    order = np.argsort(-mean_abs, kind="stable")
    return FeatureRanking([(names[j], float(mean_abs[j])) for j in order], rows)


@dataclass
class ReducedModel:
    features: list[str]
    train: TrainResult
    report: object | None = None

    @property
    def model(self) -> RiskModel:
        return self.train.model


def reduce_and_retrain(
    cohort: Cohort,
    ranking: FeatureRanking,
    k: int,
    params: GbdtHyperparams | None = None,
    objective: str = "auc",
    *,
    valid: Cohort | None = None,
    budget: int = 30,
    space: SearchSpace | None = None,
    base_params: GbdtHyperparams = GbdtHyperparams(),
    seed=0,
    workers: int = 1,
) -> ReducedModel:
    """Retrain on the top-``k`` ranked features. With ``params`` the tuning
    step is skipped; with ``valid`` an evaluation report is attached."""
    M = len(cohort.schema)
    if not 1 <= k <= M:
        raise ValueError(f"k must lie in [1, {M}], got {k}")
    keep = ranking.top(k)
    sub = cohort.restrict(keep)
    if params is None:
        result, _ = tune_and_train(sub, space=space, budget=budget, objective=objective, seed=seed,
                                   base_params=base_params, workers=workers)
    else:
        result = train_risk_model(sub, params, seed=seed, workers=workers)
    report = None
    if valid is not None:
        from .evaluation import evaluate_on_validation

        report = evaluate_on_validation(result.model, valid.restrict(keep), seed=seed,
                                        baseline_cohort=valid)
    return ReducedModel(sub.schema.names, result, report)
