"""Synthetic data with planted feature effects and exact Shapley oracles.

The generative logit is multilinear in independent features::

    z(x) = bias + sum_j w_j x_j + sum_{j<k} U_jk x_j x_k

so the expectation of ``z`` given a coalition of known features is ``z``
evaluated with every unknown feature replaced by its mean. That closed form
makes the interventional Shapley oracle exact.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .baselines import coalition_masks, shapley_from_coalition_values
from .diffcore import sigmoid
from .metrics import ScoredSet, auroc
from .models import (
    ArgumentError,
    CapabilityError,
    ConfigError,
    Dataset,
    FeatureKind,
    FeatureSchema,
    FeatureSpec,
)

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).parent / "templates"
ORACLE_MAX_FEATURES = 16


class DistributionType(Enum):
    """Supported marginal distributions."""

    BERNOULLI = "bernoulli"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class FeatureDistribution:
    """Marginal of one synthetic feature."""

    type: DistributionType
    p: Optional[float] = None
    lo: Optional[float] = None
    hi: Optional[float] = None

    def __post_init__(self):
        if self.type is DistributionType.BERNOULLI:
            if self.p is None or not 0.0 < self.p < 1.0:
                raise ArgumentError(f"Bernoulli p must be in (0, 1), got {self.p}")
        elif self.lo is None or self.hi is None or not self.lo < self.hi:
            raise ArgumentError(f"uniform requires lo < hi, got [{self.lo}, {self.hi}]")

    @classmethod
    def bernoulli(cls, p: float) -> "FeatureDistribution":
        return cls(DistributionType.BERNOULLI, p=p)

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "FeatureDistribution":
        return cls(DistributionType.UNIFORM, lo=lo, hi=hi)

    @property
    def mean(self) -> float:
        if self.type is DistributionType.BERNOULLI:
            return float(self.p)
        return (self.lo + self.hi) / 2.0

    @property
    def kind(self) -> FeatureKind:
        if self.type is DistributionType.BERNOULLI:
            return FeatureKind.BINARY
        return FeatureKind.CONTINUOUS

    def sample(self, rng: np.random.Generator, size: Any) -> np.ndarray:
        if self.type is DistributionType.BERNOULLI:
            return (rng.random(size) < self.p).astype(np.float64)
        return rng.uniform(self.lo, self.hi, size=size)

    def to_dict(self) -> Dict[str, Any]:
        if self.type is DistributionType.BERNOULLI:
            return {"type": self.type.value, "p": self.p}
        return {"type": self.type.value, "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FeatureDistribution":
        kind = DistributionType(data["type"])
        if kind is DistributionType.BERNOULLI:
            return cls.bernoulli(float(data["p"]))
        return cls.uniform(float(data["lo"]), float(data["hi"]))


@dataclass(frozen=True, eq=False)
class GroundTruthModel:
    """Planted generative model: independent features, logistic label."""

    feature_names: Tuple[str, ...]
    feature_dists: Tuple[FeatureDistribution, ...]
    stage_tags: Tuple[int, ...]
    bias: float
    linear_weights: np.ndarray
    interaction_weights: Dict[Tuple[int, int], float] = field(default_factory=dict)
    label_name: str = "isRigidity"

    def __post_init__(self):
        d = len(self.feature_names)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "feature_dists", tuple(self.feature_dists))
        object.__setattr__(self, "stage_tags", tuple(int(s) for s in self.stage_tags))
        weights = np.array(self.linear_weights, dtype=np.float64).reshape(-1)
        weights.setflags(write=False)
        object.__setattr__(self, "linear_weights", weights)
        if len(self.feature_dists) != d or len(self.stage_tags) != d or weights.size != d:
            raise ArgumentError("names, distributions, stages and weights must have equal length")

        interactions: Dict[Tuple[int, int], float] = {}
        for (j, k), value in self.interaction_weights.items():
            if j == k or not (0 <= j < d and 0 <= k < d):
                raise ArgumentError(f"interaction ({j}, {k}) must reference distinct valid indices")
            key = (min(j, k), max(j, k))
            if key in interactions:
                raise ArgumentError(f"duplicate interaction {key}")
            interactions[key] = float(value)
        object.__setattr__(self, "interaction_weights", dict(sorted(interactions.items())))
        # validates names, stages and label collisions
        self.schema()

    @property
    def d(self) -> int:
        return len(self.feature_names)

    @property
    def means(self) -> np.ndarray:
        return np.array([dist.mean for dist in self.feature_dists], dtype=np.float64)

    def schema(self) -> FeatureSchema:
        return FeatureSchema(
            features=tuple(
                FeatureSpec(name=name, kind=dist.kind, stage=stage)
                for name, dist, stage in zip(
                    self.feature_names, self.feature_dists, self.stage_tags
                )
            ),
            label_name=self.label_name,
        )

    def logit(self, values: np.ndarray) -> np.ndarray:
        """``z`` for each row of ``values`` (shape ``(n, d)`` or ``(d,)``)."""
        x = np.asarray(values, dtype=np.float64)
        z = self.bias + np.sum(x * self.linear_weights, axis=-1)
        for (j, k), u in self.interaction_weights.items():
            z = z + u * x[..., j] * x[..., k]
        return z

    def sample_features(self, n: int, rng: np.random.Generator) -> np.ndarray:
        columns = [dist.sample(rng, n) for dist in self.feature_dists]
        return np.stack(columns, axis=1) if columns else np.empty((n, 0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label_name": self.label_name,
            "bias": self.bias,
            "features": [
                {
                    "name": name,
                    "stage": stage,
                    "weight": float(weight),
                    "distribution": dist.to_dict(),
                }
                for name, stage, weight, dist in zip(
                    self.feature_names, self.stage_tags, self.linear_weights, self.feature_dists
                )
            ],
            "interactions": [
                {"pair": [self.feature_names[j], self.feature_names[k]], "weight": u}
                for (j, k), u in self.interaction_weights.items()
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GroundTruthModel":
        features = data["features"]
        names = [item["name"] for item in features]
        index = {name: idx for idx, name in enumerate(names)}
        interactions: Dict[Tuple[int, int], float] = {}
        for item in data.get("interactions", []) or []:
            a, b = item["pair"]
            if a not in index or b not in index:
                raise ArgumentError(f"interaction references unknown feature in {item['pair']}")
            interactions[(index[a], index[b])] = float(item["weight"])
        return cls(
            feature_names=tuple(names),
            feature_dists=tuple(FeatureDistribution.from_dict(f["distribution"]) for f in features),
            stage_tags=tuple(int(f["stage"]) for f in features),
            bias=float(data["bias"]),
            linear_weights=np.array([float(f.get("weight", 0.0)) for f in features]),
            interaction_weights=interactions,
            label_name=data.get("label_name", "isRigidity"),
        )

    @classmethod
    def from_yaml_file(cls, yaml_path: str) -> "GroundTruthModel":
        """Load and validate a ground-truth file."""
        from .validators import validate_ground_truth_dict

        with open(yaml_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)

        report = validate_ground_truth_dict(data)
        if not report["valid"]:
            raise ConfigError(f"Invalid ground-truth file {yaml_path}", report["errors"])
        return cls.from_dict(data)

    def to_yaml_file(self, yaml_path: str) -> None:
        with open(yaml_path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)


@dataclass
class GroundTruth:
    """A ground-truth model with its derived oracle quantities."""

    model: GroundTruthModel
    planted_interaction_ranking: List[Tuple[str, str]]
    bayes_auroc: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "planted_interaction_ranking": [
                list(pair) for pair in self.planted_interaction_ranking
            ],
            "bayes_auroc": self.bayes_auroc,
        }


def planted_interaction_ranking(gt: GroundTruthModel) -> List[Tuple[str, str]]:
    """Nonzero interaction pairs by descending |weight|.

    Pairs are reported as name tuples in sorted name order and ties are broken
    by those names, so the ranking does not depend on feature indices.
    """
    pairs = []
    for (j, k), u in gt.interaction_weights.items():
        if u == 0.0:
            continue
        a, b = sorted((gt.feature_names[j], gt.feature_names[k]))
        pairs.append((-abs(u), a, b))
    return [(a, b) for _, a, b in sorted(pairs)]


def describe_ground_truth(gt: GroundTruthModel, n_mc: int = 100000, seed: int = 0) -> GroundTruth:
    return GroundTruth(
        model=gt,
        planted_interaction_ranking=planted_interaction_ranking(gt),
        bayes_auroc=bayes_auroc(gt, n_mc, seed),
    )


def generate_dataset(gt: GroundTruthModel, n: int, seed: int) -> Dataset:
    """Sample ``n`` labelled records from ``gt``."""
    if n < 1:
        raise ArgumentError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    values = gt.sample_features(n, rng)
    p = sigmoid(gt.logit(values))
    labels = (rng.random(n) < p).astype(np.int64)
    logger.debug("Generated %d records, positive rate %.4f", n, labels.mean())
    return Dataset(schema=gt.schema(), values=values, labels=labels)


def expected_logit(gt: GroundTruthModel) -> float:
    """E[z] under the feature distributions (exact by multilinearity)."""
    return float(gt.logit(gt.means))


def coalition_logits(gt: GroundTruthModel, x: Sequence[float]) -> np.ndarray:
    """E[z | x_S] for every coalition bitmask S in ``0 .. 2**d - 1``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != gt.d:
        raise ArgumentError(f"record has {x.size} values, model has {gt.d} features")
    members = coalition_masks(gt.d)
    composite = np.where(members, x, gt.means)
    return gt.logit(composite)


def oracle_shapley(gt: GroundTruthModel, x: Sequence[float]) -> np.ndarray:
    """Exact interventional Shapley values of ``z`` at ``x``.

    Raises:
        CapabilityError: more than 16 features; use sampled Shapley instead.
    """
    if gt.d > ORACLE_MAX_FEATURES:
        raise CapabilityError(
            f"exact oracle enumerates 2^d coalitions and supports d <= {ORACLE_MAX_FEATURES}; "
            f"got d={gt.d}. Use baselines.sampled_shapley for wider models"
        )
    return shapley_from_coalition_values(coalition_logits(gt, x), gt.d)


def bayes_auroc(gt: GroundTruthModel, n_mc: int = 100000, seed: int = 0) -> float:
    """Monte-Carlo AUROC of the true conditional probability as a scorer."""
    if n_mc < 1000:
        raise ArgumentError(f"n_mc must be at least 1000, got {n_mc}")
    rng = np.random.default_rng(seed)
    values = gt.sample_features(n_mc, rng)
    p = sigmoid(gt.logit(values))
    labels = (rng.random(n_mc) < p).astype(np.int64)
    return auroc(ScoredSet(p, labels))


def stage_bayes_auroc(
    gt: GroundTruthModel, model_id: int, n_mc: int = 20000, n_inner: int = 64, seed: int = 0
) -> float:
    """AUROC of the best scorer that sees only features with stage <= ``model_id``.

    The scorer is E[sigmoid(z) | visible features], estimated by averaging over
    ``n_inner`` fresh draws of the hidden features. Labels are drawn from the
    full model.
    """
    if n_mc < 1000:
        raise ArgumentError(f"n_mc must be at least 1000, got {n_mc}")
    if model_id not in (1, 2, 3, 4):
        raise ArgumentError(f"model_id must be in 1..4, got {model_id}")
    rng = np.random.default_rng(seed)
    values = gt.sample_features(n_mc, rng)
    labels = (rng.random(n_mc) < sigmoid(gt.logit(values))).astype(np.int64)

    hidden = [j for j, stage in enumerate(gt.stage_tags) if stage > model_id]
    if not hidden:
        scores = sigmoid(gt.logit(values))
    else:
        scores = np.zeros(n_mc)
        for _ in range(n_inner):
            draw = values.copy()
            for j in hidden:
                draw[:, j] = gt.feature_dists[j].sample(rng, n_mc)
            scores += sigmoid(gt.logit(draw))
        scores /= n_inner
    return auroc(ScoredSet(scores, labels))


def desk_scenario() -> GroundTruthModel:
    """Default d=12 scenario with two planted interactions.

    Informative features sit in the admission and assessment stages only; the
    code-rollup and discharge features carry no signal.
    """
    return GroundTruthModel.from_yaml_file(str(TEMPLATES_DIR / "desk_ground_truth.yaml"))


def load_ground_truth(source: str, base_dir: Optional[Path] = None) -> GroundTruthModel:
    """Resolve ``desk`` or a ground-truth file path."""
    if source == "desk":
        return desk_scenario()
    path = Path(source)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    return GroundTruthModel.from_yaml_file(str(path))
