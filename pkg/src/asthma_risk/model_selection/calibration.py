"""Beta calibration of boosted-tree pseudo-probabilities.

The map is ``mu(s) = sigmoid(a*ln(s) - b*ln(1-s) + c)`` with ``a, b >= 0``,
fit by maximum likelihood as a logistic regression on the covariates
``ln(s)`` and ``-ln(1-s)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

S_CLIP = 1e-6


@dataclass(frozen=True)
class CalibrationParams:
    a: float = 1.0
    b: float = 1.0
    c: float = 0.0

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("beta calibration needs a >= 0 and b >= 0")
        if not all(np.isfinite([self.a, self.b, self.c])):
            raise ValueError("calibration parameters must be finite")

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c}


IDENTITY = CalibrationParams()


def _covariates(s) -> tuple[np.ndarray, np.ndarray]:
    s = np.clip(np.asarray(s, dtype=float), S_CLIP, 1.0 - S_CLIP)
    return np.log(s), -np.log1p(-s)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def apply_calibration(params: CalibrationParams, s):
    """Calibrated probability for score(s) ``s``; scalar in, scalar out."""
    ln_s, ln_1ms = _covariates(s)
    if params.a == 1.0 and params.b == 1.0 and params.c == 0.0:
        # identity map: return the (clipped) input bit-for-bit
        out = np.clip(np.asarray(s, dtype=float), S_CLIP, 1.0 - S_CLIP)
    else:
        out = _sigmoid(params.a * ln_s + params.b * ln_1ms + params.c)
    return float(out) if np.ndim(out) == 0 else out


def log_likelihood(params: CalibrationParams, scores, labels) -> float:
    ln_s, ln_1ms = _covariates(scores)
    z = params.a * ln_s + params.b * ln_1ms + params.c
    y = np.asarray(labels, dtype=float)
    return float(-np.sum(np.logaddexp(0.0, np.where(y == 1, -z, z))))


def _logistic_mle(D: np.ndarray, y: np.ndarray, max_iter: int = 200) -> np.ndarray:
    """Unpenalized logistic regression by damped Newton steps."""
    theta = np.zeros(D.shape[1])

    def nll(t):
        z = D @ t
        return float(np.sum(np.logaddexp(0.0, np.where(y == 1, -z, z))))

    f = nll(theta)
    for _ in range(max_iter):
        p = _sigmoid(D @ theta)
        grad = D.T @ (p - y)
        hess = (D * (p * (1 - p))[:, None]).T @ D + 1e-10 * np.eye(D.shape[1])
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while True:
            cand = theta - t * step
            fc = nll(cand)
            if fc <= f - 1e-4 * t * float(grad @ step) or t < 1e-10:
                break
            t *= 0.5
        if fc > f:
            break
        converged = f - fc <= 1e-12 * (1.0 + abs(f))
        theta, f = cand, fc
        if converged:
            break
    return theta


def fit_beta_calibration(scores, labels) -> CalibrationParams:
    """Maximum-likelihood beta calibration restricted to ``a, b >= 0``.

    When the unconstrained fit has a negative coefficient, the optimum of the
    concave likelihood lies on a face of the feasible quadrant: each face is
    refit with that covariate dropped and the better feasible fit is kept.
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(float)
    if scores.size < 2 or scores.shape != y.shape:
        raise ValueError("need at least two scores with matching labels")
    if y.min() == y.max():
        raise ValueError("beta calibration needs both classes")
    ln_s, ln_1ms = _covariates(scores)
    one = np.ones_like(ln_s)

    a, b, c = _logistic_mle(np.column_stack([ln_s, ln_1ms, one]), y)
    if a >= 0 and b >= 0:
        return CalibrationParams(float(a), float(b), float(c))

    candidates = []
    b1, c1 = _logistic_mle(np.column_stack([ln_1ms, one]), y)
    candidates.append((0.0, float(b1), float(c1)) if b1 >= 0 else None)
    a2, c2 = _logistic_mle(np.column_stack([ln_s, one]), y)
    candidates.append((float(a2), 0.0, float(c2)) if a2 >= 0 else None)
    (c3,) = _logistic_mle(one[:, None], y)
    candidates.append((0.0, 0.0, float(c3)))
    fits = [CalibrationParams(*p) for p in candidates if p is not None]
    return max(fits, key=lambda p: log_likelihood(p, scores, y))
