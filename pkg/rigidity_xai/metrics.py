"""Classification metrics, threshold selection and rank correlation."""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .models import ArgumentError, UndefinedMetricError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ScoredSet:
    """Scores paired with binary labels."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        labels = np.asarray(self.labels).reshape(-1)
        if scores.shape != labels.shape:
            raise ArgumentError(
                f"scores and labels differ in length ({scores.size} vs {labels.size})"
            )
        if not np.all(np.isfinite(scores)):
            raise ArgumentError("scores must be finite")
        if not np.all((labels == 0) | (labels == 1)):
            raise ArgumentError("labels must be 0 or 1")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels.astype(np.int64))

    def __len__(self) -> int:
        return int(self.scores.size)

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())

    @property
    def n_negative(self) -> int:
        return len(self) - self.n_positive


@dataclass
class MetricsReport:
    """Threshold metrics plus ranking metrics for one scored set.

    ``auroc`` and ``auprc`` are ``None`` when undefined for the set (single
    class). Ratios with a zero denominator are reported as 0.0 and named in
    ``flags``.
    """

    accuracy: float
    auroc: Optional[float]
    auprc: Optional[float]
    f1: float
    sensitivity: float
    specificity: float
    precision: float
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    flags: List[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "auroc": self.auroc,
            "auprc": self.auprc,
            "f1": self.f1,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "precision": self.precision,
            "threshold": self.threshold,
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricsReport":
        counts = data["counts"]
        return cls(
            accuracy=data["accuracy"],
            auroc=data.get("auroc"),
            auprc=data.get("auprc"),
            f1=data["f1"],
            sensitivity=data["sensitivity"],
            specificity=data["specificity"],
            precision=data.get("precision", 0.0),
            threshold=data["threshold"],
            tp=counts["tp"],
            fp=counts["fp"],
            tn=counts["tn"],
            fn=counts["fn"],
            flags=list(data.get("flags", [])),
        )


def auroc(s: ScoredSet) -> float:
    """Mann-Whitney AUROC from average ranks; tied pairs earn half credit."""
    n_pos, n_neg = s.n_positive, s.n_negative
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC is undefined when only one class is present")
    ranks = rankdata(s.scores, method="average")
    rank_sum = float(ranks[s.labels == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auprc(s: ScoredSet) -> float:
    """Average precision over descending score groups (step integral)."""
    n_pos = s.n_positive
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC is undefined without positive labels")
    order = np.argsort(-s.scores, kind="mergesort")
    scores = s.scores[order]
    labels = s.labels[order]
    # last index of each tie group in descending order
    group_ends = np.flatnonzero(np.diff(scores) != 0.0)
    group_ends = np.append(group_ends, scores.size - 1)
    tp = np.cumsum(labels)[group_ends]
    predicted = group_ends + 1
    precision = tp / predicted
    recall_step = np.diff(np.concatenate(([0], tp))) / n_pos
    return float(np.sum(recall_step * precision))


def _ratio(num: float, den: float, name: str, flags: List[str]) -> float:
    if den == 0:
        flags.append(f"{name}_undefined")
        return 0.0
    return num / den


def confusion_metrics(s: ScoredSet, threshold: float) -> MetricsReport:
    """Predict positive iff score >= threshold and derive all metrics."""
    if len(s) == 0:
        raise ArgumentError("cannot compute metrics on an empty set")
    predicted = s.scores >= threshold
    positive = s.labels == 1
    tp = int(np.sum(predicted & positive))
    fp = int(np.sum(predicted & ~positive))
    fn = int(np.sum(~predicted & positive))
    tn = int(np.sum(~predicted & ~positive))

    flags: List[str] = []
    sensitivity = _ratio(tp, tp + fn, "sensitivity", flags)
    specificity = _ratio(tn, tn + fp, "specificity", flags)
    precision = _ratio(tp, tp + fp, "precision", flags)
    f1 = _ratio(2 * tp, 2 * tp + fp + fn, "f1", flags)

    roc: Optional[float] = None
    pr: Optional[float] = None
    if s.n_positive and s.n_negative:
        roc = auroc(s)
    else:
        flags.append("auroc_undefined")
    if s.n_positive:
        pr = auprc(s)
    else:
        flags.append("auprc_undefined")

    return MetricsReport(
        accuracy=(tp + tn) / len(s),
        auroc=roc,
        auprc=pr,
        f1=f1,
        sensitivity=sensitivity,
        specificity=specificity,
        precision=precision,
        threshold=float(threshold),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        flags=flags,
    )


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """-inf, midpoints between consecutive distinct scores, +inf."""
    distinct = np.unique(scores)
    lower, upper = distinct[:-1], distinct[1:]
    mids = lower + (upper - lower) / 2.0
    # a midpoint that rounds onto the lower score would also admit it
    mids = np.where(mids > lower, mids, upper)
    return np.concatenate(([-np.inf], mids, [np.inf]))


def optimal_threshold(val: ScoredSet) -> float:
    """Threshold maximizing validation F1.

    Ties go to the higher sensitivity, then to the lower threshold.
    """
    if val.n_positive == 0 or val.n_negative == 0:
        raise UndefinedMetricError("threshold selection needs both classes")
    thresholds = candidate_thresholds(val.scores)
    pos_scores = np.sort(val.scores[val.labels == 1])
    neg_scores = np.sort(val.scores[val.labels == 0])
    # counts of scores >= t
    tp = pos_scores.size - np.searchsorted(pos_scores, thresholds, side="left")
    fp = neg_scores.size - np.searchsorted(neg_scores, thresholds, side="left")
    fn = pos_scores.size - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    sensitivity = tp / pos_scores.size
    # lexsort uses the last key as primary
    best = np.lexsort((thresholds, -sensitivity, -f1))[0]
    logger.debug("Selected threshold %.6g with F1 %.4f", thresholds[best], f1[best])
    return float(thresholds[best])


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Tie-aware Spearman correlation (Pearson on average ranks)."""
    x = np.asarray(a, dtype=np.float64).reshape(-1)
    y = np.asarray(b, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise ArgumentError(f"vectors differ in length ({x.size} vs {y.size})")
    if x.size < 3:
        raise ArgumentError("spearman needs at least 3 values")
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    sx = float(np.sqrt(np.sum(rx * rx)))
    sy = float(np.sqrt(np.sum(ry * ry)))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedMetricError("spearman is undefined for a constant ranking")
    rho = float(np.sum(rx * ry) / (sx * sy))
    return min(1.0, max(-1.0, rho))
