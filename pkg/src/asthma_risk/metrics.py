"""Confusion counts, precision/recall/F1, exact Mann-Whitney AUC and the
evaluation report with its baseline block."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .cohort import cheo_predictions, naive_all_positive, random_baseline

REPORT_COLUMNS = ("threshold", "AUC", "Precision", "Recall", "F1")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(scores, labels, threshold: float) -> ConfusionCounts:
    """Positive prediction iff ``score >= threshold``."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise ValueError(f"length mismatch: {scores.shape[0]} scores, {labels.shape[0]} labels")
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def prf1(counts: ConfusionCounts) -> tuple[float, float, float]:
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    return precision, recall, f1_from(precision, recall)


def f1_from(precision: float, recall: float) -> float:
    denom = precision + recall
    return 2.0 * precision * recall / denom if denom > 0 else 0.0


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with midranks for ties (exact, no trapezoids)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise ValueError("length mismatch")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    ranks = rankdata(scores)
    # U statistic: sum of positive ranks minus its minimum; midranks are
    # multiples of 1/2 so the arithmetic below is exact in binary floating point
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f1_curve(scores, labels, thresholds: np.ndarray) -> np.ndarray:
    """F1 at each threshold (``score >= t`` is positive), vectorized."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    pos_scores = np.sort(scores[labels == 1])
    all_scores = np.sort(scores)
    tp = pos_scores.size - np.searchsorted(pos_scores, thresholds, side="left")
    pp = all_scores.size - np.searchsorted(all_scores, thresholds, side="left")
    n_pos = pos_scores.size
    with np.errstate(divide="ignore", invalid="ignore"):
        # 2PR/(P+R) = 2tp / (predicted positives + actual positives)
        f1 = np.where(pp + n_pos > 0, 2.0 * tp / (pp + n_pos), 0.0)
    return f1


@dataclass(frozen=True)
class MetricBlock:
    name: str
    threshold: float | None
    auc: float | None
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts

    def row(self, digits: int | None = None) -> list[str]:
        def fmt(x):
            if x is None:
                return "-"
            return f"{x:.{digits}f}" if digits is not None else repr(float(x))

        return [self.name, fmt(self.threshold), fmt(self.auc), fmt(self.precision),
                fmt(self.recall), fmt(self.f1)]


def metric_block(name: str, predictions_or_scores, labels, threshold: float | None = None,
                 with_auc: bool = True) -> MetricBlock:
    s = np.asarray(predictions_or_scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    t = 0.5 if threshold is None else threshold
    counts = confusion(s, labels, t)
    p, r, f = prf1(counts)
    a = auc(s, labels) if with_auc and 0 < labels.sum() < labels.size else None
    return MetricBlock(name, threshold, a, p, r, f, counts)


@dataclass(frozen=True)
class EvalReport:
    model: MetricBlock
    n: int
    prevalence: float
    baselines: tuple[MetricBlock, ...] = field(default=())

    @property
    def auc(self):
        return self.model.auc

    @property
    def f1(self):
        return self.model.f1

    def blocks(self) -> list[MetricBlock]:
        return [self.model, *self.baselines]

    def baseline(self, name: str) -> MetricBlock:
        for b in self.baselines:
            if b.name == name:
                return b
        raise KeyError(name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["block", *REPORT_COLUMNS, "tp", "fp", "tn", "fn", "n", "prevalence"])
        for b in self.blocks():
            c = b.counts
            w.writerow(b.row() + [c.tp, c.fp, c.tn, c.fn, self.n, repr(self.prevalence)])
        return buf.getvalue()

    def to_text(self) -> str:
        header = ["", *REPORT_COLUMNS]
        rows = [b.row(3) for b in self.blocks()]
        widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
        lines = ["  ".join(h.rjust(w) if i else h.ljust(w) for i, (h, w) in enumerate(zip(header, widths)))]
        for r in rows:
            lines.append("  ".join(x.rjust(w) if i else x.ljust(w) for i, (x, w) in enumerate(zip(r, widths))))
        lines.append(f"n={self.n} prevalence={self.prevalence:.3f}")
        return "\n".join(lines) + "\n"


def baseline_blocks(records, labels, labels_uncontaminated, which: Sequence[str] = ("cheo", "naive", "random"),
                    *, random_prob: float = 0.5, seed=0) -> list[MetricBlock]:
    """CHEO rule (scored on uncontaminated labels), all-positive and random."""
    out = []
    n = len(labels)
    for name in which:
        if name == "cheo":
            out.append(metric_block("cheo", cheo_predictions(records), labels_uncontaminated, with_auc=False))
        elif name == "naive":
            out.append(metric_block("naive", naive_all_positive(n), labels, with_auc=False))
        elif name == "random":
            out.append(metric_block("random", random_baseline(n, random_prob, seed), labels, with_auc=False))
        else:
            raise ValueError(f"unknown baseline {name!r}")
    return out


def expected_random_metrics(prevalence: float, positive_prob: float) -> tuple[float, float, float]:
    """Large-sample precision, recall and F1 of random Bernoulli predictions."""
    return prevalence, positive_prob, f1_from(prevalence, positive_prob)


def report_dict(report: EvalReport) -> dict:
    return {"n": report.n, "prevalence": report.prevalence,
            "blocks": [asdict(b) for b in report.blocks()]}
