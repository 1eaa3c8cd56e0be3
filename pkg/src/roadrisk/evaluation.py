"""Imbalance-aware evaluation: ranking curves, operating points, extrapolation.

Area under the ROC curve is the headline metric because it is insensitive to
the negative-class subsampling used during example generation. PR curves are
reported for threshold selection only; no area is computed under them, since
test-set precision at an artificial class balance does not transfer. Instead,
precision at an operating point is extrapolated to a stated real-world
prevalence from (recall, fpr), which do transfer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ScoredSet:
    """Aligned scores in [0, 1] and binary labels."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        s = np.asarray(self.scores, dtype=np.float64)
        y = np.asarray(self.labels)
        if s.ndim != 1 or y.ndim != 1 or len(s) != len(y):
            raise ValueError("scores and labels must be aligned 1-d arrays")
        if len(s) == 0:
            raise ValueError("scored set is empty")
        if not np.isfinite(s).all() or (s < 0).any() or (s > 1).any():
            raise ValueError("scores must be finite and within [0, 1]")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y.astype(np.int8))

    @property
    def n_pos(self) -> int:
        return int((self.labels == 1).sum())

    @property
    def n_neg(self) -> int:
        return int((self.labels == 0).sum())


def _grouped_counts(scored: ScoredSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds desc, cumulative tp, cumulative fp) per distinct score."""
    order = np.argsort(-scored.scores, kind="stable")
    s = scored.scores[order]
    y = scored.labels[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    last_of_group = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    return s[last_of_group], tp[last_of_group], fp[last_of_group]


def roc_curve(scored: ScoredSet) -> tuple[list[tuple[float, float, float]], float]:
    """ROC points (fpr, tpr, threshold) at descending distinct thresholds.

    Tied scores move as one group, the curve starts at (0, 0) and ends at
    (1, 1), and the returned AUC is the trapezoidal area (equivalently,
    pairwise concordance with half credit for score ties). Raises ValueError
    unless both classes are present.
    """
    P, N = scored.n_pos, scored.n_neg
    if P == 0 or N == 0:
        raise ValueError(f"ROC needs both classes; got {P} positive / {N} negative")
    thresholds, tp, fp = _grouped_counts(scored)
    points = [(0.0, 0.0, math.inf)]
    points.extend(
        (fp_i / N, tp_i / P, float(t)) for t, tp_i, fp_i in zip(thresholds, tp, fp)
    )
    auc = 0.0
    for (fpr0, tpr0, _), (fpr1, tpr1, _) in zip(points, points[1:]):
        auc += (fpr1 - fpr0) * (tpr0 + tpr1) / 2.0
    return points, auc


def pr_curve(scored: ScoredSet) -> list[tuple[float, float, float]]:
    """Precision-recall points (recall, precision, threshold), recall ascending.

    Tied scores form one point. Precision at recall 0 is defined as that of
    the highest-score group (prepended when that group already recalls a
    positive). Raises ValueError when no positives are present. No area is
    computed under this curve by design.
    """
    P = scored.n_pos
    if P == 0:
        raise ValueError("PR curve needs at least one positive")
    thresholds, tp, fp = _grouped_counts(scored)
    points = [
        (tp_i / P, tp_i / (tp_i + fp_i), float(t))
        for t, tp_i, fp_i in zip(thresholds, tp, fp)
    ]
    if points[0][0] > 0.0:
        points.insert(0, (0.0, points[0][1], points[0][2]))
    return points


def threshold_curve(scored: ScoredSet) -> list[tuple[float, float, float, float]]:
    """(threshold, recall, precision, fpr) per distinct threshold, descending."""
    P, N = scored.n_pos, scored.n_neg
    if P == 0:
        raise ValueError("threshold curve needs at least one positive")
    thresholds, tp, fp = _grouped_counts(scored)
    return [
        (
            float(t),
            tp_i / P,
            tp_i / (tp_i + fp_i),
            (fp_i / N) if N else 0.0,
        )
        for t, tp_i, fp_i in zip(thresholds, tp, fp)
    ]


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    recall: float
    precision: float
    fpr: float


def operating_point(scored: ScoredSet, target_recall: float) -> OperatingPoint:
    """Metrics at the largest threshold whose recall reaches target_recall.

    Thresholds are scanned in descending order (classify positive when
    score >= threshold); the scan stops at the first group satisfying the
    target, which keeps the flagged set as small as the target allows.
    """
    if not 0.0 <= target_recall <= 1.0:
        raise ValueError(f"target_recall must be in [0, 1], got {target_recall}")
    for threshold, recall, precision, fpr in threshold_curve(scored):
        if recall >= target_recall:
            return OperatingPoint(
                threshold=threshold, recall=recall, precision=precision, fpr=fpr
            )
    raise ValueError(f"recall {target_recall} unreachable")  # pragma: no cover


def extrapolate_precision(recall: float, fpr: float, prevalence: float) -> float:
    """Precision at a real-world prevalence from transferable (recall, fpr).

    precision = recall * prev / (recall * prev + fpr * (1 - prev)), i.e. the
    positive predictive value when the score's class-conditional behavior is
    carried to a population with the stated positive rate.
    """
    for name, v in (("recall", recall), ("fpr", fpr), ("prevalence", prevalence)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    numerator = recall * prevalence
    denominator = numerator + fpr * (1.0 - prevalence)
    if denominator == 0.0:
        raise ValueError("extrapolated precision undefined: no predicted positives")
    return numerator / denominator


def risk_ratio(precision: float, prevalence: float) -> float:
    """How many times denser in positives the flagged set is than the population."""
    if prevalence <= 0.0:
        raise ValueError(f"prevalence must be positive, got {prevalence}")
    if precision < 0.0:
        raise ValueError(f"precision must be non-negative, got {precision}")
    return precision / prevalence


@dataclass
class BaselineModel:
    """Score a cell by how collision-prone busier segments were in training.

    score(c) = positive fraction among training rows whose accident count is
    strictly greater than c; when no training count exceeds c the score falls
    back to the global positive fraction.
    """

    sorted_counts: np.ndarray
    suffix_positives: np.ndarray  # suffix_positives[j] = positives among sorted_counts[j:]
    global_fraction: float

    def score(self, counts: np.ndarray | Sequence[float] | float) -> np.ndarray | float:
        scalar = np.isscalar(counts)
        q = np.atleast_1d(np.asarray(counts, dtype=np.float64))
        j = np.searchsorted(self.sorted_counts, q, side="right")
        n_above = len(self.sorted_counts) - j
        pos_above = self.suffix_positives[j]
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(n_above > 0, pos_above / np.maximum(n_above, 1), self.global_fraction)
        return float(frac[0]) if scalar else frac

    def to_dict(self) -> dict:
        return {
            "format": "roadrisk-baseline",
            "version": 1,
            "sorted_counts": [float(c) for c in self.sorted_counts],
            "suffix_positives": [int(p) for p in self.suffix_positives[:-1]],
            "global_fraction": self.global_fraction,
        }

    @staticmethod
    def from_dict(d: dict) -> "BaselineModel":
        if d.get("format") != "roadrisk-baseline":
            raise ValueError("not a baseline model payload")
        counts = np.asarray(d["sorted_counts"], dtype=np.float64)
        suffix = np.asarray(list(d["suffix_positives"]) + [0], dtype=np.int64)
        return BaselineModel(
            sorted_counts=counts,
            suffix_positives=suffix,
            global_fraction=float(d["global_fraction"]),
        )


def fit_baseline(counts: np.ndarray | Sequence[float], labels: np.ndarray | Sequence[int]) -> BaselineModel:
    """Fit the accident-count threshold baseline on training rows."""
    c = np.asarray(counts, dtype=np.float64)
    y = np.asarray(labels)
    if c.ndim != 1 or len(c) != len(y):
        raise ValueError("counts and labels must be aligned 1-d arrays")
    if len(c) == 0:
        raise ValueError("cannot fit a baseline on no rows")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    order = np.argsort(c, kind="stable")
    cs = c[order]
    ys = (y[order] == 1).astype(np.int64)
    suffix = np.zeros(len(ys) + 1, dtype=np.int64)
    suffix[:-1] = np.cumsum(ys[::-1])[::-1]
    return BaselineModel(
        sorted_counts=cs,
        suffix_positives=suffix,
        global_fraction=float(ys.sum() / len(ys)),
    )


@dataclass
class EvalReport:
    """Everything the report stage writes about one scored test set."""

    model_kind: str
    n_test: int
    n_pos: int
    n_neg: int
    auc_roc: float
    target_recall: float
    operating: OperatingPoint
    prevalence: float
    extrapolated_precision: float
    risk_ratio: float
    roc_points: list[tuple[float, float, float]]
    pr_points: list[tuple[float, float, float]]
    threshold_points: list[tuple[float, float, float, float]]
    baseline_auc: float | None = None

    def to_dict(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "n_test": self.n_test,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "test_positive_rate": self.n_pos / self.n_test,
            "auc_roc": self.auc_roc,
            "baseline_auc": self.baseline_auc,
            "target_recall": self.target_recall,
            "operating_point": {
                "threshold": self.operating.threshold,
                "recall": self.operating.recall,
                "precision": self.operating.precision,
                "fpr": self.operating.fpr,
            },
            "prevalence": self.prevalence,
            "extrapolated_precision": self.extrapolated_precision,
            "risk_ratio": self.risk_ratio,
            "roc_points": [list(p) for p in self.roc_points],
            "pr_points": [list(p) for p in self.pr_points],
            "threshold_points": [list(p) for p in self.threshold_points],
        }


def build_report(
    scored: ScoredSet,
    target_recall: float,
    prevalence: float,
    model_kind: str,
    baseline_auc: float | None = None,
) -> EvalReport:
    """Compute all curves and the extrapolated operating point in one pass."""
    roc_points, auc = roc_curve(scored)
    op = operating_point(scored, target_recall)
    extrapolated = extrapolate_precision(op.recall, op.fpr, prevalence)
    return EvalReport(
        model_kind=model_kind,
        n_test=len(scored.scores),
        n_pos=scored.n_pos,
        n_neg=scored.n_neg,
        auc_roc=auc,
        target_recall=target_recall,
        operating=op,
        prevalence=prevalence,
        extrapolated_precision=extrapolated,
        risk_ratio=risk_ratio(extrapolated, prevalence),
        roc_points=roc_points,
        pr_points=pr_curve(scored),
        threshold_points=threshold_curve(scored),
        baseline_auc=baseline_auc,
    )
