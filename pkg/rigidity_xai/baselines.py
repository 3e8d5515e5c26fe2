"""Logistic-regression baseline and model-agnostic attributions.

Score functions used here take a raw value matrix of shape ``(n, d)`` in
schema order and return one score per row. Attributions are computed on
whatever scale the score function returns; the harness passes predicted
probabilities so that every algorithm is attributed on the same scale.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from math import comb, factorial
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import yaml

from .diffcore import sigmoid
from .metrics import ScoredSet, auroc, confusion_metrics
from .models import (
    ArgumentError,
    CapabilityError,
    ConfigError,
    Dataset,
    FeatureKind,
    FeatureSchema,
    NormalizationStats,
    NumericError,
    Record,
    UndefinedMetricError,
)

logger = logging.getLogger(__name__)

ScoreFn = Callable[[np.ndarray], np.ndarray]

DEFAULT_D_MAX = 12
DEFAULT_BACKGROUND_SIZE = 100
GRADIENT_TOLERANCE = 1e-6
# composite rows evaluated per score_fn call
_CHUNK_ROWS = 200_000


class AttributionMethod(Enum):
    """How an AttributionResult was produced."""

    EXACT_SHAPLEY = "exact_shapley"
    SAMPLED_SHAPLEY = "sampled_shapley"
    PERMUTATION = "permutation"


@dataclass
class AttributionResult:
    """Per-feature attribution values in schema order."""

    values: np.ndarray
    method: AttributionMethod
    baseline: str
    feature_names: Optional[List[str]] = None
    spread: Optional[np.ndarray] = None

    def to_dict(self) -> Dict[str, Any]:
        names = self.feature_names or [f"x{i}" for i in range(len(self.values))]
        data: Dict[str, Any] = {
            "method": self.method.value,
            "baseline": self.baseline,
            "values": {name: float(v) for name, v in zip(names, self.values)},
        }
        if self.spread is not None:
            data["spread"] = {name: float(v) for name, v in zip(names, self.spread)}
        return data


# Logistic regression


class ExpansionMap:
    """Maps schema features to columns of the one-hot-expanded design matrix.

    Binary features use their 0/1 value, continuous features their z-score,
    categorical features one indicator column per category.
    """

    def __init__(self, schema: FeatureSchema):
        self.schema = schema
        self.columns: Dict[str, List[int]] = {}
        offset = 0
        for spec in schema.features:
            width = spec.cardinality if spec.kind is FeatureKind.CATEGORICAL else 1
            self.columns[spec.name] = list(range(offset, offset + width))
            offset += width
        self.width = offset

    def expand(self, values: np.ndarray, stats: Optional[NormalizationStats]) -> np.ndarray:
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if values.shape[1] != len(self.schema):
            raise ArgumentError(
                f"values have {values.shape[1]} columns, schema has {len(self.schema)} features"
            )
        out = np.zeros((values.shape[0], self.width))
        for idx, spec in enumerate(self.schema.features):
            cols = self.columns[spec.name]
            column = values[:, idx]
            if spec.kind is FeatureKind.CATEGORICAL:
                out[np.arange(values.shape[0]), cols[0] + column.astype(np.int64)] = 1.0
            elif spec.kind is FeatureKind.CONTINUOUS and stats is not None:
                out[:, cols[0]] = (column - stats.mean[spec.name]) / stats.std[spec.name]
            else:
                out[:, cols[0]] = column
        return out


@dataclass(eq=False)
class LogisticModel:
    """L2-regularized, class-weighted logistic regression over expanded columns."""

    schema: FeatureSchema
    weights: np.ndarray
    bias: float
    l2_lambda: float
    normalization_stats: Optional[NormalizationStats] = None
    threshold: float = 0.5
    objective_history: List[float] = field(default_factory=list)
    converged: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.expansion_map.width,):
            raise ArgumentError("weights do not match the schema's expanded width")
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.bias):
            raise NumericError("logistic weights must be finite")

    @property
    def expansion_map(self) -> ExpansionMap:
        return ExpansionMap(self.schema)

    @property
    def expansion(self) -> Dict[str, List[int]]:
        return self.expansion_map.columns

    def decision_function(self, values: np.ndarray) -> np.ndarray:
        design = self.expansion_map.expand(values, self.normalization_stats)
        return design @ self.weights + self.bias

    def predict_proba(self, values: np.ndarray) -> np.ndarray:
        return sigmoid(self.decision_function(values))

    def column_contributions(self, x: Sequence[float], background: np.ndarray) -> np.ndarray:
        """Logit-scale contribution of every expanded column at ``x``.

        For a linear logit these are the exact interventional Shapley values
        of the columns: ``w_c * (phi(x)_c - mean_b phi(b)_c)``.
        """
        expand = self.expansion_map.expand
        at_x = expand(np.asarray(x, dtype=np.float64).reshape(1, -1), self.normalization_stats)[0]
        mean_bg = expand(_as_matrix(background), self.normalization_stats).mean(axis=0)
        return self.weights * (at_x - mean_bg)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "algorithm": "logistic",
            "schema": self.schema.to_dict(),
            "schema_hash": self.schema.schema_hash(),
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "l2_lambda": self.l2_lambda,
            "normalization_stats": (
                self.normalization_stats.to_dict() if self.normalization_stats else None
            ),
            "threshold": float(self.threshold),
            "objective_history": [float(v) for v in self.objective_history],
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LogisticModel":
        stats = data.get("normalization_stats")
        return cls(
            schema=FeatureSchema.from_dict(data["schema"]),
            weights=np.array(data["weights"], dtype=np.float64),
            bias=float(data["bias"]),
            l2_lambda=float(data["l2_lambda"]),
            normalization_stats=NormalizationStats.from_dict(stats) if stats else None,
            threshold=float(data.get("threshold", 0.5)),
            objective_history=list(data.get("objective_history", [])),
            converged=bool(data.get("converged", False)),
        )


def resum_columns(column_values: Sequence[float], expansion: Dict[str, List[int]]) -> np.ndarray:
    """Fold expanded-column attributions back to one value per feature."""
    column_values = np.asarray(column_values, dtype=np.float64)
    return np.array([column_values[cols].sum() for cols in expansion.values()])


def save_logistic(model: LogisticModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(model.to_dict(), f, sort_keys=False)
    return path


def load_logistic(path: Union[str, Path]) -> LogisticModel:
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict) or data.get("algorithm") != "logistic":
        raise ConfigError(f"{path}: not a logistic checkpoint")
    return LogisticModel.from_dict(data)


def train_logistic(
    train: Dataset,
    l2_lambda: float = 1e-3,
    max_iters: int = 1000,
    tolerance: float = GRADIENT_TOLERANCE,
) -> LogisticModel:
    """Full-batch gradient descent with backtracking line search.

    Minimizes the mean class-weighted negative log-likelihood plus
    ``l2_lambda / 2 * ||w||^2`` (bias unpenalized). Class weights are
    ``n / (2 * n_c)``. Stops when the gradient norm drops below ``tolerance``
    or after ``max_iters`` accepted steps.
    """
    if l2_lambda < 0:
        raise ArgumentError(f"l2_lambda must be >= 0, got {l2_lambda}")
    if max_iters < 1:
        raise ArgumentError(f"max_iters must be positive, got {max_iters}")
    y = train.labels.astype(np.float64)
    n = y.size
    n_pos = int(y.sum())
    if n == 0 or n_pos == 0 or n_pos == n:
        raise ArgumentError("logistic regression needs both classes in the training data")

    stats = train.normalization_stats or NormalizationStats.fit(train.values, train.schema)
    expansion = ExpansionMap(train.schema)
    design = expansion.expand(train.values, stats)
    sample_weight = np.where(y == 1.0, n / (2.0 * n_pos), n / (2.0 * (n - n_pos)))

    def objective(w: np.ndarray, b: float) -> float:
        z = design @ w + b
        nll = y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)
        value = float(np.mean(sample_weight * nll) + 0.5 * l2_lambda * np.dot(w, w))
        if not np.isfinite(value):
            raise NumericError("logistic objective became non-finite")
        return value

    def gradient(w: np.ndarray, b: float):
        r = sample_weight * (sigmoid(design @ w + b) - y) / n
        return design.T @ r + l2_lambda * w, float(r.sum())

    w = np.zeros(expansion.width)
    b = 0.0
    f = objective(w, b)
    history = [f]
    step = 1.0
    converged = False
    for _ in range(max_iters):
        gw, gb = gradient(w, b)
        sq_norm = float(np.dot(gw, gw) + gb * gb)
        if np.sqrt(sq_norm) < tolerance:
            converged = True
            break
        step = min(step * 2.0, 1e6)
        while True:
            w_new, b_new = w - step * gw, b - step * gb
            f_new = objective(w_new, b_new)
            if f_new <= f - 0.5 * step * sq_norm:
                break
            step *= 0.5
            if step < 1e-20:
                break
        if step < 1e-20 or f_new > f:
            logger.debug("Line search stalled at objective %.10g", f)
            break
        w, b, f = w_new, b_new, f_new
        history.append(f)

    logger.debug(
        "Logistic fit: %d steps, objective %.6g, converged=%s", len(history) - 1, f, converged
    )
    return LogisticModel(
        schema=train.schema,
        weights=w,
        bias=b,
        l2_lambda=l2_lambda,
        normalization_stats=stats,
        objective_history=history,
        converged=converged,
    )


def predict_logistic(model: LogisticModel, record: Union[Record, Sequence[float]]) -> float:
    values = record.values if isinstance(record, Record) else record
    return float(model.predict_proba(np.asarray(values, dtype=np.float64).reshape(1, -1))[0])


# Shapley values


def coalition_masks(d: int) -> np.ndarray:
    """Boolean membership matrix of shape ``(2**d, d)``; row S holds the bits of S."""
    masks = np.arange(2**d, dtype=np.int64)
    return ((masks[:, None] >> np.arange(d)) & 1).astype(bool)


def shapley_from_coalition_values(values: np.ndarray, d: int) -> np.ndarray:
    """Exact Shapley values from ``values[S]`` for every coalition bitmask ``S``."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (2**d,):
        raise ArgumentError(f"expected {2 ** d} coalition values, got {values.shape}")
    masks = np.arange(2**d, dtype=np.int64)
    sizes = coalition_masks(d).sum(axis=1)
    kernel = np.array([factorial(s) * factorial(d - s - 1) / factorial(d) for s in range(d)])
    phi = np.zeros(d)
    for i in range(d):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        phi[i] = np.sum(kernel[sizes[without]] * (values[without | bit] - values[without]))
    return phi


def _as_matrix(data: Union[Dataset, np.ndarray]) -> np.ndarray:
    if isinstance(data, Dataset):
        return np.asarray(data.values, dtype=np.float64)
    return np.atleast_2d(np.asarray(data, dtype=np.float64))


def coalition_values(
    score_fn: ScoreFn, background: np.ndarray, x: np.ndarray, members: np.ndarray
) -> np.ndarray:
    """Mean score over background rows with coalition features taken from ``x``."""
    n_bg = background.shape[0]
    per_chunk = max(1, _CHUNK_ROWS // n_bg)
    out = np.empty(members.shape[0])
    for start in range(0, members.shape[0], per_chunk):
        chunk = members[start : start + per_chunk]
        composite = np.where(chunk[:, None, :], x[None, None, :], background[None, :, :])
        scores = np.asarray(score_fn(composite.reshape(-1, x.size)), dtype=np.float64)
        out[start : start + chunk.shape[0]] = scores.reshape(chunk.shape[0], n_bg).mean(axis=1)
    return out


def _prepare(background: Union[Dataset, np.ndarray], x: Any):
    bg = _as_matrix(background)
    if bg.shape[0] == 0:
        raise ArgumentError("background must not be empty")
    x = np.asarray(x.values if isinstance(x, Record) else x, dtype=np.float64).reshape(-1)
    if x.size != bg.shape[1]:
        raise ArgumentError(f"record has {x.size} values, background has {bg.shape[1]} columns")
    return bg, x


def exact_shapley(
    score_fn: ScoreFn,
    background: Union[Dataset, np.ndarray],
    x: Union[Record, Sequence[float]],
    d_max: int = DEFAULT_D_MAX,
) -> AttributionResult:
    """Interventional Shapley values by full coalition enumeration.

    Raises:
        CapabilityError: more than ``d_max`` features.
    """
    bg, x = _prepare(background, x)
    d = x.size
    if d > d_max:
        raise CapabilityError(
            f"exact Shapley enumerates 2^d coalitions; d={d} exceeds d_max={d_max}. "
            "Use sampled_shapley instead"
        )
    values = coalition_values(score_fn, bg, x, coalition_masks(d))
    return AttributionResult(
        values=shapley_from_coalition_values(values, d),
        method=AttributionMethod.EXACT_SHAPLEY,
        baseline=f"mean over {bg.shape[0]} background rows",
    )


def _kernel_weight(d: int, size: int) -> float:
    return (d - 1) / (comb(d, size) * size * (d - size))


def _sample_masks(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` coalitions drawn from the Shapley kernel, in complementary pairs."""
    sizes = np.arange(1, d)
    size_prob = (d - 1) / (sizes * (d - sizes))
    size_prob = size_prob / size_prob.sum()
    rows = []
    while len(rows) < n:
        size = rng.choice(sizes, p=size_prob)
        member = np.zeros(d, dtype=bool)
        member[rng.choice(d, size=size, replace=False)] = True
        rows.append(member)
        if len(rows) < n:
            rows.append(~member)
    return np.array(rows)


def _constrained_wls(
    members: np.ndarray, y: np.ndarray, weights: np.ndarray, total: float
) -> Optional[np.ndarray]:
    """Weighted least squares with sum(phi) == total; None if rank deficient."""
    d = members.shape[1]
    z = members.astype(np.float64)
    target = y - z[:, -1] * total
    design = z[:, :-1] - z[:, [-1]]
    root_w = np.sqrt(weights)[:, None]
    weighted = design * root_w
    if np.linalg.matrix_rank(weighted) < d - 1:
        return None
    head, *_ = np.linalg.lstsq(weighted, target * root_w[:, 0], rcond=None)
    return np.append(head, total - head.sum())


def sampled_shapley(
    score_fn: ScoreFn,
    background: Union[Dataset, np.ndarray],
    x: Union[Record, Sequence[float]],
    n_coalitions: int,
    seed: int = 0,
    max_attempts: int = 5,
) -> AttributionResult:
    """Kernel-weighted least-squares Shapley estimate.

    The empty and full coalitions are always evaluated and enter as exact
    constraints, so the estimate satisfies efficiency. When ``n_coalitions``
    covers all ``2**d`` coalitions the design is exhaustive and the result
    equals the exact Shapley values. Otherwise ``n_coalitions - 2`` coalitions
    are drawn from the Shapley kernel in complementary pairs.
    """
    bg, x = _prepare(background, x)
    d = x.size
    if n_coalitions < 2 * d + 2:
        raise ArgumentError(f"n_coalitions must be at least 2d+2 = {2 * d + 2}, got {n_coalitions}")

    ends = coalition_values(score_fn, bg, x, np.array([np.zeros(d, bool), np.ones(d, bool)]))
    v_empty, v_full = float(ends[0]), float(ends[1])
    total = v_full - v_empty
    baseline = f"mean over {bg.shape[0]} background rows"
    if d == 1:
        return AttributionResult(np.array([total]), AttributionMethod.SAMPLED_SHAPLEY, baseline)

    if n_coalitions >= 2**d:
        members = coalition_masks(d)[1:-1]
        sizes = members.sum(axis=1)
        weights = np.array([_kernel_weight(d, int(s)) for s in sizes])
        y = coalition_values(score_fn, bg, x, members) - v_empty
        phi = _constrained_wls(members, y, weights, total)
    else:
        phi = None
        for attempt in range(max_attempts):
            rng = np.random.default_rng(seed + attempt)
            members = _sample_masks(d, n_coalitions - 2, rng)
            y = coalition_values(score_fn, bg, x, members) - v_empty
            phi = _constrained_wls(members, y, np.ones(members.shape[0]), total)
            if phi is not None:
                break
            logger.debug("Degenerate coalition design for seed %d, resampling", seed + attempt)
    if phi is None:
        raise NumericError(
            f"coalition design stayed rank deficient after {max_attempts} attempts"
        )
    return AttributionResult(phi, AttributionMethod.SAMPLED_SHAPLEY, baseline)


def shapley_importance(
    score_fn: ScoreFn,
    background: Union[Dataset, np.ndarray],
    records: np.ndarray,
    d_max: int = DEFAULT_D_MAX,
    n_coalitions: int = 2048,
    seed: int = 0,
) -> AttributionResult:
    """Mean |Shapley value| per feature over ``records``.

    Uses exact enumeration up to ``d_max`` features and the kernel estimator
    beyond that.
    """
    rows = _as_matrix(records)
    if rows.shape[0] == 0:
        raise ArgumentError("no records to attribute")
    d = rows.shape[1]
    per_record = []
    for idx, x in enumerate(rows):
        if d <= d_max:
            result = exact_shapley(score_fn, background, x, d_max=d_max)
        else:
            result = sampled_shapley(score_fn, background, x, n_coalitions, seed=seed + idx)
        per_record.append(np.abs(result.values))
    stacked = np.array(per_record)
    method = (
        AttributionMethod.EXACT_SHAPLEY if d <= d_max else AttributionMethod.SAMPLED_SHAPLEY
    )
    return AttributionResult(
        values=stacked.mean(axis=0),
        method=method,
        baseline=f"mean |phi| over {rows.shape[0]} records",
        spread=stacked.std(axis=0),
    )


def background_sample(
    ds: Dataset, size: int = DEFAULT_BACKGROUND_SIZE, seed: int = 0
) -> np.ndarray:
    """Seeded background rows drawn without replacement from ``ds``."""
    rng = np.random.default_rng(seed)
    n = len(ds)
    if n == 0:
        raise ArgumentError("cannot draw a background from an empty dataset")
    picks = np.sort(rng.choice(n, size=min(size, n), replace=False))
    return np.asarray(ds.values[picks], dtype=np.float64)


# Permutation importance


def _metric_value(metric: str, scores: np.ndarray, labels: np.ndarray, threshold: float) -> float:
    scored = ScoredSet(scores, labels)
    if metric == "auroc":
        return auroc(scored)
    return confusion_metrics(scored, threshold).f1


def permutation_importance(
    score_fn: ScoreFn,
    ds: Dataset,
    metric: str = "auroc",
    n_repeats: int = 5,
    seed: int = 0,
    threshold: float = 0.5,
) -> AttributionResult:
    """Mean metric drop when one feature column is shuffled.

    Raises:
        UndefinedMetricError: ``ds`` holds a single class.
    """
    if metric not in ("auroc", "f1"):
        raise ArgumentError(f"metric must be 'auroc' or 'f1', got {metric!r}")
    if n_repeats < 1:
        raise ArgumentError(f"n_repeats must be positive, got {n_repeats}")
    labels = ds.labels
    if labels.size == 0 or labels.min() == labels.max():
        raise UndefinedMetricError("permutation importance needs both classes")

    values = np.asarray(ds.values, dtype=np.float64)
    base = _metric_value(metric, score_fn(values), labels, threshold)
    rng = np.random.default_rng(seed)
    drops = np.zeros((values.shape[1], n_repeats))
    for j in range(values.shape[1]):
        for r in range(n_repeats):
            shuffled = values.copy()
            shuffled[:, j] = values[rng.permutation(values.shape[0]), j]
            drops[j, r] = base - _metric_value(metric, score_fn(shuffled), labels, threshold)
    return AttributionResult(
        values=drops.mean(axis=1),
        method=AttributionMethod.PERMUTATION,
        baseline=f"{metric} on intact data = {base:.6f}",
        feature_names=ds.schema.names,
        spread=drops.std(axis=1),
    )
