"""Data models for feature schemas, records and datasets."""

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml


class RigidityXAIError(Exception):
    """Base class for all errors raised by this package."""

    pass


class ConfigError(RigidityXAIError):
    """Raised when a configuration or structured-text file fails validation."""

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        self.errors = list(errors or [])
        if self.errors:
            message = f"{message}: " + "; ".join(self.errors)
        super().__init__(message)


class SchemaMismatchError(RigidityXAIError):
    """Raised when data does not line up with a feature schema."""

    def __init__(self, message: str, column: Optional[str] = None):
        self.column = column
        super().__init__(message)


class DataValidationError(RigidityXAIError):
    """Raised when a cell cannot be parsed or violates its feature kind."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        super().__init__(message)


class ArgumentError(RigidityXAIError, ValueError):
    """Raised when an operation receives an out-of-range argument."""

    pass


class CapabilityError(RigidityXAIError):
    """Raised when a request exceeds what an exact algorithm can enumerate."""

    pass


class NumericError(RigidityXAIError):
    """Raised when a computation produces non-finite values."""

    pass


class UsageError(RigidityXAIError):
    """Raised when an API is called out of order (e.g. a consumed cache)."""

    pass


class UndefinedMetricError(RigidityXAIError):
    """Raised when a metric is undefined for the given inputs."""

    pass


class UndefinedProportionError(RigidityXAIError):
    """Raised when an interaction proportion has a zero-importance destination."""

    pass


class TrainingError(RigidityXAIError):
    """Raised when optimisation diverges; carries diagnostics."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class FeatureKind(Enum):
    """Supported feature value kinds."""

    BINARY = "binary"
    CATEGORICAL = "categorical"
    CONTINUOUS = "continuous"


class Stage(Enum):
    """Hospitalization stage at which a feature becomes available."""

    ADMISSION = 1
    HOSPITAL_ASSESSMENT = 2
    HOSPITAL_CODES = 3
    DISCHARGE = 4


@dataclass(frozen=True)
class FeatureSpec:
    """A single feature: name, kind and stage tag."""

    name: str
    kind: FeatureKind
    stage: int
    cardinality: Optional[int] = None

    def __post_init__(self):
        if not self.name:
            raise ArgumentError("feature name is required")
        if self.stage not in (1, 2, 3, 4):
            raise ArgumentError(f"feature {self.name}: stage must be in 1..4, got {self.stage}")
        if self.kind is FeatureKind.CATEGORICAL:
            if self.cardinality is None or self.cardinality < 2:
                raise ArgumentError(
                    f"feature {self.name}: categorical cardinality must be >= 2"
                )
        elif self.cardinality is not None:
            raise ArgumentError(f"feature {self.name}: cardinality only applies to categoricals")

    def check_value(self, value: float) -> Optional[str]:
        """Return a reason string if ``value`` is invalid for this feature."""
        if not math.isfinite(value):
            return "value is not finite"
        if self.kind is FeatureKind.BINARY and value not in (0.0, 1.0):
            return f"binary value must be 0 or 1, got {value:g}"
        if self.kind is FeatureKind.CATEGORICAL:
            if value != int(value) or not 0 <= value < self.cardinality:
                return (
                    f"categorical value must be an integer in [0, {self.cardinality}), "
                    f"got {value:g}"
                )
        return None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"name": self.name, "kind": self.kind.value}
        if self.cardinality is not None:
            data["cardinality"] = self.cardinality
        data["stage"] = self.stage
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FeatureSpec":
        return cls(
            name=data["name"],
            kind=FeatureKind(data["kind"]),
            stage=int(data["stage"]),
            cardinality=data.get("cardinality"),
        )


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature list plus the label column name.

    The order of ``features`` defines the column index of every feature in a
    Dataset and the node index of every feature in a feature graph.
    """

    features: Tuple[FeatureSpec, ...]
    label_name: str

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        seen = set()
        for spec in self.features:
            if spec.name in seen:
                raise ArgumentError(f"duplicate feature name '{spec.name}'")
            seen.add(spec.name)
        if self.label_name in seen:
            raise ArgumentError(f"label_name '{self.label_name}' collides with a feature name")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def names(self) -> List[str]:
        return [spec.name for spec in self.features]

    def index_of(self, name: str) -> int:
        for idx, spec in enumerate(self.features):
            if spec.name == name:
                return idx
        raise SchemaMismatchError(f"unknown feature '{name}'", column=name)

    def continuous_names(self) -> List[str]:
        return [s.name for s in self.features if s.kind is FeatureKind.CONTINUOUS]

    def subset(self, names: Sequence[str]) -> "FeatureSchema":
        """Schema restricted to ``names``, keeping this schema's order."""
        wanted = set(names)
        return FeatureSchema(
            features=tuple(s for s in self.features if s.name in wanted),
            label_name=self.label_name,
        )

    def schema_hash(self) -> str:
        """Stable hash of the schema content, used to pair checkpoints with data."""
        payload = yaml.safe_dump(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label_name": self.label_name,
            "features": [spec.to_dict() for spec in self.features],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FeatureSchema":
        return cls(
            features=tuple(FeatureSpec.from_dict(item) for item in data.get("features", [])),
            label_name=data["label_name"],
        )

    @classmethod
    def from_yaml_file(cls, yaml_path: str) -> "FeatureSchema":
        """Load and validate a schema file."""
        from .validators import validate_schema_dict

        with open(yaml_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)

        report = validate_schema_dict(data)
        if not report["valid"]:
            raise ConfigError(f"Invalid schema file {yaml_path}", report["errors"])
        return cls.from_dict(data)

    def to_yaml_file(self, yaml_path: str) -> None:
        with open(yaml_path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)


@dataclass(frozen=True)
class Record:
    """One row: feature values aligned to the schema order plus a binary label."""

    values: Tuple[float, ...]
    label: int

    def validate(self, schema: FeatureSchema) -> None:
        if len(self.values) != len(schema):
            raise SchemaMismatchError(
                f"record has {len(self.values)} values, schema has {len(schema)} features"
            )
        if self.label not in (0, 1):
            raise DataValidationError(f"label must be 0 or 1, got {self.label}")
        for spec, value in zip(schema.features, self.values):
            reason = spec.check_value(float(value))
            if reason:
                raise DataValidationError(f"{spec.name}: {reason}", column=spec.name)


@dataclass(frozen=True)
class NormalizationStats:
    """Per-continuous-feature mean and standard deviation."""

    mean: Dict[str, float] = field(default_factory=dict)
    std: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def fit(cls, values: np.ndarray, schema: FeatureSchema) -> "NormalizationStats":
        mean: Dict[str, float] = {}
        std: Dict[str, float] = {}
        for idx, spec in enumerate(schema.features):
            if spec.kind is not FeatureKind.CONTINUOUS:
                continue
            column = values[:, idx]
            mu = float(column.mean()) if column.size else 0.0
            sigma = float(column.std()) if column.size else 0.0
            mean[spec.name] = mu
            # Constant columns are left unscaled.
            std[spec.name] = sigma if sigma > 0.0 else 1.0
        return cls(mean=mean, std=std)

    def restrict(self, schema: FeatureSchema) -> "NormalizationStats":
        names = schema.continuous_names()
        return NormalizationStats(
            mean={n: self.mean[n] for n in names if n in self.mean},
            std={n: self.std[n] for n in names if n in self.std},
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            name: {"mean": self.mean[name], "std": self.std[name]} for name in self.mean
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NormalizationStats":
        return cls(
            mean={k: float(v["mean"]) for k, v in data.items()},
            std={k: float(v["std"]) for k, v in data.items()},
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Typed records conforming to a schema.

    Values are held as a read-only ``(n, d)`` float64 matrix in schema order,
    labels as a read-only int vector. Raw values are never normalized in place;
    ``normalization_stats`` is applied when a model encodes its inputs.
    """

    schema: FeatureSchema
    values: np.ndarray
    labels: np.ndarray
    normalization_stats: Optional[NormalizationStats] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1, len(self.schema))
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if values.shape[0] != labels.shape[0]:
            raise SchemaMismatchError(
                f"{values.shape[0]} value rows but {labels.shape[0]} labels"
            )
        values.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        if self.normalization_stats is not None:
            expected = set(self.schema.continuous_names())
            if set(self.normalization_stats.mean) != expected:
                raise SchemaMismatchError(
                    "normalization stats must cover exactly the continuous features"
                )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def records(self) -> List[Record]:
        return [self.record(i) for i in range(len(self))]

    def record(self, index: int) -> Record:
        return Record(
            values=tuple(float(v) for v in self.values[index]), label=int(self.labels[index])
        )

    @property
    def positive_rate(self) -> float:
        return float(self.labels.mean()) if len(self) else 0.0

    def take(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            schema=self.schema,
            values=self.values[idx],
            labels=self.labels[idx],
            normalization_stats=self.normalization_stats,
        )

    def with_stats(self, stats: Optional[NormalizationStats]) -> "Dataset":
        return Dataset(
            schema=self.schema,
            values=self.values,
            labels=self.labels,
            normalization_stats=stats,
        )

    @classmethod
    def from_records(
        cls, schema: FeatureSchema, records: Sequence[Record], validate: bool = True
    ) -> "Dataset":
        if validate:
            for record in records:
                record.validate(schema)
        values = np.array([r.values for r in records], dtype=np.float64).reshape(-1, len(schema))
        labels = np.array([r.label for r in records], dtype=np.int64)
        return cls(schema=schema, values=values, labels=labels)
