"""Feature-graph attention classifier with intrinsic explanations.

Every record becomes a fully connected directed graph with one node per
feature (self-loops included). Node inputs are a learned feature-identity
embedding concatenated with a value encoding. One attention layer (GATv2 or
multi-head scaled dot product) mixes the nodes, global attention pooling
produces node weights ``beta`` and a graph vector, and a small MLP predicts
the positive-class probability.

Attention matrices are indexed ``alpha[j, i]`` with ``j`` the source and
``i`` the destination; every column sums to one. The explanation of a record
is ``featimp = beta`` and ``intimp[j, i] = alpha[j, i] * beta[i]``.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .data import standardize
from .diffcore import (
    Batch,
    InitSpec,
    OptimizerState,
    ParamSet,
    Tape,
    Tensor,
    adam_step,
    backward,
    forward,
    forward_loss,
    load_params,
    save_params,
    sigmoid,
)
from .metrics import ScoredSet, auroc, optimal_threshold
from .models import (
    ArgumentError,
    DataValidationError,
    Dataset,
    FeatureKind,
    FeatureSchema,
    NormalizationStats,
    NumericError,
    Record,
    SchemaMismatchError,
    TrainingError,
    UndefinedProportionError,
)

logger = logging.getLogger(__name__)

HIDDEN_DIM = 64
HEAD_HIDDEN_DIM = 32
PREDICT_CHUNK = 512
SELF_FOCUS_JITTER = 0.1


class AttentionVariant(Enum):
    """Attention mechanism of the single message-passing layer."""

    GATV2 = "gatv2"
    DOT_PRODUCT = "dot_product"


@dataclass
class TrainingConfig:
    """Graph-model architecture and optimisation settings."""

    batch_size: int = field(default=256, metadata={"description": "Records per minibatch"})
    max_epochs: int = field(default=50, metadata={"description": "Upper bound on epochs"})
    patience: int = field(
        default=5, metadata={"description": "Epochs without validation AUROC gain before stopping"}
    )
    learning_rate: float = field(default=1e-3, metadata={"description": "Adam step size"})
    beta1: float = field(default=0.9, metadata={"description": "Adam first-moment decay"})
    beta2: float = field(default=0.999, metadata={"description": "Adam second-moment decay"})
    epsilon: float = field(default=1e-8, metadata={"description": "Adam denominator offset"})
    dropout: float = field(
        default=0.3, metadata={"description": "Dropout rate on node encoder and head"}
    )
    head_count: int = field(
        default=4, metadata={"description": "Heads of the dot-product variant; must divide 64"}
    )
    identity_dim: int = field(
        default=16, metadata={"description": "Width of the feature-identity embedding"}
    )
    category_dim: int = field(
        default=8, metadata={"description": "Width of the value encoding block"}
    )
    leaky_slope: float = field(default=0.2, metadata={"description": "LeakyReLU negative slope"})
    self_focus: float = field(
        default=6.0,
        metadata={"description": "Initial GATv2 preference for self-loops; 0 keeps plain Glorot"},
    )

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ArgumentError("batch_size, max_epochs and patience must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ArgumentError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.self_focus < 0.0:
            raise ArgumentError(f"self_focus must be non-negative, got {self.self_focus}")

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "TrainingConfig":
        data = data or {}
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ArgumentError(f"unknown training settings: {sorted(unknown)}")
        return cls(**data)


def _check_head_count(head_count: int) -> None:
    if head_count < 1 or HIDDEN_DIM % head_count != 0:
        raise ArgumentError(f"head_count must divide {HIDDEN_DIM}, got {head_count}")


# Input encoding


@dataclass
class EncodedBatch:
    """Model-ready inputs for a batch of records.

    ``scalars`` holds binary values and z-scored continuous values (zero for
    categorical nodes); ``cat_index`` points into the global category table
    and is only meaningful where ``cat_mask`` is set.
    """

    scalars: np.ndarray
    cat_index: np.ndarray
    cat_mask: np.ndarray

    def __len__(self) -> int:
        return int(self.scalars.shape[0])

    def take(self, rows: np.ndarray) -> "EncodedBatch":
        return EncodedBatch(self.scalars[rows], self.cat_index[rows], self.cat_mask[rows])


def category_offsets(schema: FeatureSchema) -> Tuple[Dict[str, int], int]:
    """Row offset of each categorical feature in the category table, and its size."""
    offsets: Dict[str, int] = {}
    total = 0
    for spec in schema.features:
        if spec.kind is FeatureKind.CATEGORICAL:
            offsets[spec.name] = total
            total += spec.cardinality
    return offsets, total


def encode_values(
    values: np.ndarray, schema: FeatureSchema, stats: Optional[NormalizationStats]
) -> EncodedBatch:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape[1] != len(schema):
        raise SchemaMismatchError(
            f"values have {values.shape[1]} columns, schema has {len(schema)} features"
        )
    stats = stats if stats is not None else NormalizationStats.fit(values, schema)
    scalars = standardize(values, schema, stats)
    cat_index = np.zeros(values.shape, dtype=np.int64)
    cat_mask = np.zeros(values.shape, dtype=bool)
    offsets, _ = category_offsets(schema)
    for idx, spec in enumerate(schema.features):
        if spec.kind is FeatureKind.CATEGORICAL:
            cat_index[:, idx] = offsets[spec.name] + values[:, idx].astype(np.int64)
            cat_mask[:, idx] = True
            scalars[:, idx] = 0.0
    return EncodedBatch(scalars=scalars, cat_index=cat_index, cat_mask=cat_mask)


# Layers


def _node_inputs(tape: Tape, p: Mapping[str, Tensor], batch: EncodedBatch) -> Tensor:
    b, d = batch.scalars.shape
    identity = p["feature_embedding"]
    ident = tape.broadcast_to(identity, (b, d, identity.shape[1]))
    width = p["encoder.weight"].shape[0] - identity.shape[1]
    block = np.zeros((b, d, width))
    block[..., 0] = batch.scalars
    value = tape.constant(block)
    if "category_embedding" in p:
        rows = tape.gather(p["category_embedding"], batch.cat_index)
        mask = tape.constant(batch.cat_mask[..., None].astype(np.float64))
        value = tape.add(value, tape.mul(rows, mask))
    return tape.concat([ident, value], axis=-1)


def _gatv2_layer(tape: Tape, h: Tensor, p: Mapping[str, Tensor]) -> Tuple[Tensor, Tensor]:
    b, d, width = h.shape
    left = tape.linear(h, p["attention.w_left"])
    right = tape.linear(h, p["attention.w_right"])
    # pair[b, j, i] = W_right h_j + W_left h_i
    pair = tape.leaky_relu(tape.pairwise_sum(right, left))
    a = tape.reshape(p["attention.a"], (width, 1))
    scores = tape.reshape(tape.linear(pair, a), (b, d, d))
    alpha = tape.softmax(scores, axis=1)
    mixed = tape.matmul(tape.transpose(alpha, (0, 2, 1)), right)
    return tape.elu(mixed), alpha


def _dot_product_layer(
    tape: Tape, h: Tensor, p: Mapping[str, Tensor], head_count: int
) -> Tuple[Tensor, Tensor]:
    _check_head_count(head_count)
    b, d, width = h.shape
    dk = width // head_count

    def split(t: Tensor) -> Tensor:
        return tape.transpose(tape.reshape(t, (b, d, head_count, dk)), (0, 2, 1, 3))

    q = split(tape.linear(h, p["attention.w_query"]))
    k = split(tape.linear(h, p["attention.w_key"]))
    v = split(tape.linear(h, p["attention.w_value"]))
    # scores[b, head, j, i] = k_j . q_i / sqrt(dk)
    scores = tape.scale(tape.matmul(k, tape.transpose(q, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
    alpha = tape.softmax(scores, axis=2)
    mixed = tape.matmul(tape.transpose(alpha, (0, 1, 3, 2)), v)
    merged = tape.reshape(tape.transpose(mixed, (0, 2, 1, 3)), (b, d, width))
    return tape.elu(merged), alpha


def _attention_pool(tape: Tape, h: Tensor, p: Mapping[str, Tensor]) -> Tuple[Tensor, Tensor]:
    b, d, width = h.shape
    gate = tape.reshape(tape.linear(h, p["pool.gate.weight"], p["pool.gate.bias"]), (b, d))
    beta = tape.softmax(gate, axis=1)
    pooled = tape.matmul(tape.reshape(beta, (b, 1, d)), h)
    return tape.reshape(pooled, (b, width)), beta


class GraphNetwork:
    """Differentiable forward pass ``(tape, leaves, EncodedBatch) -> logits``.

    After a call the tape's ``captured`` dict holds ``alpha`` (``(B, d, d)``,
    mean over heads for the dot-product variant) and ``beta`` (``(B, d)``).
    """

    def __init__(self, variant: AttentionVariant, config: TrainingConfig):
        self.variant = AttentionVariant(variant)
        self.config = config
        if self.variant is AttentionVariant.DOT_PRODUCT:
            _check_head_count(config.head_count)

    def __call__(self, tape: Tape, p: Mapping[str, Tensor], batch: EncodedBatch) -> Tensor:
        rate = self.config.dropout
        x = _node_inputs(tape, p, batch)
        h = tape.dropout(tape.elu(tape.linear(x, p["encoder.weight"], p["encoder.bias"])), rate)

        if self.variant is AttentionVariant.GATV2:
            h_prime, alpha = _gatv2_layer(tape, h, p)
            tape.captured["alpha"] = alpha.value
        else:
            h_prime, alpha = _dot_product_layer(tape, h, p, self.config.head_count)
            tape.captured["alpha"] = alpha.value.mean(axis=1)

        pooled, beta = _attention_pool(tape, h_prime, p)
        tape.captured["beta"] = beta.value

        hidden = tape.linear(pooled, p["head.hidden.weight"], p["head.hidden.bias"])
        hidden = tape.dropout(tape.elu(hidden), rate)
        out = tape.linear(hidden, p["head.out.weight"], p["head.out.bias"])
        return tape.reshape(out, (out.shape[0],))


def _leaves(
    tape: Tape, params: Mapping[str, np.ndarray], names: Sequence[str]
) -> Dict[str, Tensor]:
    return {name: tape.parameter(name, params[name]) for name in names}


def _as_node_batch(h: np.ndarray) -> Tuple[np.ndarray, bool]:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 2:
        return h[None], True
    if h.ndim != 3:
        raise ArgumentError(f"node matrix must be (d, w) or (B, d, w), got shape {h.shape}")
    return h, False


def gatv2_attention(
    h: np.ndarray, params: Mapping[str, np.ndarray], leaky_slope: float = 0.2
) -> Tuple[np.ndarray, np.ndarray]:
    """GATv2 layer on a node matrix; returns ``(h_prime, alpha)``."""
    batch, single = _as_node_batch(h)
    tape = Tape(mode="eval", leaky_slope=leaky_slope)
    p = _leaves(tape, params, ["attention.w_left", "attention.w_right", "attention.a"])
    h_prime, alpha = _gatv2_layer(tape, tape.constant(batch), p)
    if single:
        return h_prime.value[0], alpha.value[0]
    return h_prime.value, alpha.value


def dot_product_attention(
    h: np.ndarray, params: Mapping[str, np.ndarray], head_count: int = 4
) -> Tuple[np.ndarray, np.ndarray]:
    """Multi-head scaled dot-product layer; ``alpha`` is the mean over heads."""
    _check_head_count(head_count)
    batch, single = _as_node_batch(h)
    tape = Tape(mode="eval")
    p = _leaves(tape, params, ["attention.w_query", "attention.w_key", "attention.w_value"])
    h_prime, alpha = _dot_product_layer(tape, tape.constant(batch), p, head_count)
    mean_alpha = alpha.value.mean(axis=1)
    if single:
        return h_prime.value[0], mean_alpha[0]
    return h_prime.value, mean_alpha


def global_attention_pool(
    h: np.ndarray, params: Mapping[str, np.ndarray]
) -> Tuple[np.ndarray, np.ndarray]:
    """Softmax-gated pooling; returns ``(g, beta)``."""
    batch, single = _as_node_batch(h)
    tape = Tape(mode="eval")
    p = _leaves(tape, params, ["pool.gate.weight", "pool.gate.bias"])
    pooled, beta = _attention_pool(tape, tape.constant(batch), p)
    if single:
        return pooled.value[0], beta.value[0]
    return pooled.value, beta.value


# Model


def graph_param_specs(
    schema: FeatureSchema, variant: AttentionVariant, config: TrainingConfig
) -> List[InitSpec]:
    d = len(schema)
    _, n_categories = category_offsets(schema)
    specs = [InitSpec("feature_embedding", (d, config.identity_dim))]
    if n_categories:
        specs.append(InitSpec("category_embedding", (n_categories, config.category_dim)))
    specs += [
        InitSpec("encoder.weight", (config.identity_dim + config.category_dim, HIDDEN_DIM)),
        InitSpec("encoder.bias", (HIDDEN_DIM,), "zeros"),
    ]
    if AttentionVariant(variant) is AttentionVariant.GATV2:
        specs += [
            InitSpec("attention.w_left", (HIDDEN_DIM, HIDDEN_DIM)),
            InitSpec("attention.w_right", (HIDDEN_DIM, HIDDEN_DIM)),
            InitSpec("attention.a", (HIDDEN_DIM,)),
        ]
    else:
        specs += [
            InitSpec("attention.w_query", (HIDDEN_DIM, HIDDEN_DIM)),
            InitSpec("attention.w_key", (HIDDEN_DIM, HIDDEN_DIM)),
            InitSpec("attention.w_value", (HIDDEN_DIM, HIDDEN_DIM)),
        ]
    specs += [
        InitSpec("pool.gate.weight", (HIDDEN_DIM, 1)),
        InitSpec("pool.gate.bias", (1,), "zeros"),
        InitSpec("head.hidden.weight", (HIDDEN_DIM, HEAD_HIDDEN_DIM)),
        InitSpec("head.hidden.bias", (HEAD_HIDDEN_DIM,), "zeros"),
        InitSpec("head.out.weight", (HEAD_HIDDEN_DIM, 1)),
        InitSpec("head.out.bias", (1,), "zeros"),
    ]
    return specs


@dataclass(eq=False)
class GraphModel:
    """Trained (or freshly initialized) graph attention classifier."""

    variant: AttentionVariant
    schema: FeatureSchema
    config: TrainingConfig
    params: ParamSet
    normalization_stats: Optional[NormalizationStats] = None
    threshold: float = 0.5
    history: List[Dict[str, float]] = field(default_factory=list)
    seed: Optional[int] = None
    best_epoch: Optional[int] = None

    def __post_init__(self):
        self.variant = AttentionVariant(self.variant)
        self.network = GraphNetwork(self.variant, self.config)

    @property
    def d(self) -> int:
        return len(self.schema)

    def encode(self, values: np.ndarray) -> EncodedBatch:
        stats = self.normalization_stats
        if stats is None:
            stats = NormalizationStats(
                mean={n: 0.0 for n in self.schema.continuous_names()},
                std={n: 1.0 for n in self.schema.continuous_names()},
            )
        return encode_values(values, self.schema, stats)

    def batch(self, values: np.ndarray, labels: np.ndarray) -> Batch:
        return Batch(inputs=self.encode(values), labels=np.asarray(labels))

    def eval_pass(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Logits, alpha and beta for a block of raw value rows (eval mode)."""
        logits, tape = forward(
            self.params, self.network, self.encode(values), leaky_slope=self.config.leaky_slope
        )
        return logits.value, tape.captured["alpha"], tape.captured["beta"]

    def predict_proba(self, values: np.ndarray) -> np.ndarray:
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        out = np.empty(values.shape[0])
        for start in range(0, values.shape[0], PREDICT_CHUNK):
            logits, _, _ = self.eval_pass(values[start : start + PREDICT_CHUNK])
            out[start : start + PREDICT_CHUNK] = sigmoid(logits)
        return out

    def with_params(self, params: ParamSet) -> "GraphModel":
        return GraphModel(
            variant=self.variant,
            schema=self.schema,
            config=self.config,
            params=params,
            normalization_stats=self.normalization_stats,
            threshold=self.threshold,
            history=list(self.history),
            seed=self.seed,
            best_epoch=self.best_epoch,
        )


def _self_focused(params: ParamSet, scale: float) -> ParamSet:
    w_right = params["attention.w_right"]
    return params.replace(
        {
            "attention.w_left": -w_right + SELF_FOCUS_JITTER * params["attention.w_left"],
            "attention.a": -scale * np.abs(params["attention.a"]),
        }
    )


def init_model(
    schema: FeatureSchema,
    variant: Union[str, AttentionVariant] = AttentionVariant.GATV2,
    config: Optional[TrainingConfig] = None,
    seed: int = 0,
    normalization_stats: Optional[NormalizationStats] = None,
) -> GraphModel:
    """Untrained model with seeded Glorot-uniform weights and zero biases.

    With ``config.self_focus > 0`` the GATv2 attention starts self-focused:
    ``w_left`` is tied to ``-w_right`` up to a small Glorot jitter and ``a``
    is made non-positive, so a node scores itself near zero and every other
    node negatively, in proportion to how far apart their hidden states are.
    """
    config = config or TrainingConfig()
    variant = AttentionVariant(variant)
    if variant is AttentionVariant.DOT_PRODUCT:
        _check_head_count(config.head_count)
    params = ParamSet.initialize(graph_param_specs(schema, variant, config), seed)
    if variant is AttentionVariant.GATV2 and config.self_focus > 0:
        params = _self_focused(params, config.self_focus)
    return GraphModel(
        variant=variant,
        schema=schema,
        config=config,
        params=params,
        normalization_stats=normalization_stats,
        seed=seed,
    )


@dataclass(frozen=True)
class FeatureGraph:
    """Fully connected directed graph of one record."""

    feature_names: Tuple[str, ...]
    node_inputs: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature_names)

    @property
    def edge_count(self) -> int:
        return self.node_count**2

    def edges(self) -> List[Tuple[int, int]]:
        """All ordered (source, destination) pairs, self-loops included."""
        d = self.node_count
        return [(j, i) for j in range(d) for i in range(d)]


def _record_values(record: Union[Record, Sequence[float]], schema: FeatureSchema) -> np.ndarray:
    if isinstance(record, Record):
        record.validate(schema)
        return np.asarray(record.values, dtype=np.float64).reshape(1, -1)
    values = np.asarray(record, dtype=np.float64).reshape(1, -1)
    if values.shape[1] != len(schema):
        raise SchemaMismatchError(
            f"record has {values.shape[1]} values, schema has {len(schema)} features"
        )
    for spec, value in zip(schema.features, values[0]):
        reason = spec.check_value(float(value))
        if reason:
            raise DataValidationError(f"{spec.name}: {reason}", column=spec.name)
    return values


def build_feature_graph(
    record: Union[Record, Sequence[float]],
    ds_stats: Optional[NormalizationStats],
    model: GraphModel,
) -> FeatureGraph:
    """Node input encodings ``[identity embedding | value encoding]`` for one record."""
    values = _record_values(record, model.schema)
    stats = ds_stats if ds_stats is not None else model.normalization_stats
    if stats is not None and set(stats.mean) != set(model.schema.continuous_names()):
        raise SchemaMismatchError("normalization stats do not match the model's features")
    if stats is not None:
        encoded = encode_values(values, model.schema, stats)
    else:
        encoded = model.encode(values)
    tape = Tape(mode="eval")
    inputs = _node_inputs(tape, model.params.leaves(tape), encoded)
    return FeatureGraph(feature_names=tuple(model.schema.names), node_inputs=inputs.value[0])


def predict(record: Union[Record, Sequence[float]], model: GraphModel) -> float:
    """Positive-class probability of one record (eval mode)."""
    logits, _, _ = model.eval_pass(_record_values(record, model.schema))
    return float(sigmoid(logits)[0])


# Explanations


@dataclass
class Explanation:
    """Node importance ``featimp`` and edge interaction importance ``intimp``.

    ``intimp[j, i]`` is the share of the prediction flowing from source ``j``
    into destination ``i``. Construction does not enforce the simplex
    invariants; :meth:`check_invariants` reports violations.
    """

    featimp: np.ndarray
    intimp: np.ndarray
    predicted_probability: float
    feature_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        self.featimp = np.asarray(self.featimp, dtype=np.float64).reshape(-1)
        self.intimp = np.asarray(self.intimp, dtype=np.float64)
        d = self.featimp.size
        if self.intimp.shape != (d, d):
            raise ArgumentError(f"intimp must be {d}x{d}, got {self.intimp.shape}")
        if self.feature_names is not None:
            self.feature_names = tuple(self.feature_names)

    @property
    def d(self) -> int:
        return int(self.featimp.size)

    @property
    def names(self) -> Tuple[str, ...]:
        return self.feature_names or tuple(f"x{i}" for i in range(self.d))

    def index_of(self, feature: Union[int, str]) -> int:
        if isinstance(feature, str):
            try:
                return self.names.index(feature)
            except ValueError:
                raise SchemaMismatchError(f"unknown feature '{feature}'", column=feature) from None
        if not 0 <= feature < self.d:
            raise ArgumentError(f"feature index {feature} out of range for d={self.d}")
        return int(feature)

    def check_invariants(self, tol: float = 1e-6) -> List[str]:
        problems = []
        if np.any(self.featimp < 0) or np.any(self.intimp < 0):
            problems.append("negative importance")
        if abs(self.featimp.sum() - 1.0) > tol:
            problems.append(f"featimp sums to {self.featimp.sum():.9f}")
        if abs(self.intimp.sum() - 1.0) > tol:
            problems.append(f"intimp sums to {self.intimp.sum():.9f}")
        positive = self.featimp > 0
        column_share = self.intimp.sum(axis=0)[positive] / self.featimp[positive]
        if np.any(np.abs(column_share - 1.0) > tol):
            problems.append("attention columns do not sum to 1")
        return problems

    def to_dict(self) -> Dict[str, Any]:
        return {
            "predicted_probability": float(self.predicted_probability),
            "feature_names": list(self.names),
            "featimp": {name: float(v) for name, v in zip(self.names, self.featimp)},
            "intimp": [[float(v) for v in row] for row in self.intimp],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Explanation":
        names = tuple(data["feature_names"])
        return cls(
            featimp=np.array([data["featimp"][n] for n in names]),
            intimp=np.array(data["intimp"]),
            predicted_probability=float(data["predicted_probability"]),
            feature_names=names,
        )


def _explanations_from_pass(
    logits: np.ndarray, alpha: np.ndarray, beta: np.ndarray, names: Tuple[str, ...]
) -> List[Explanation]:
    probs = sigmoid(logits)
    return [
        Explanation(
            featimp=beta[b].copy(),
            intimp=alpha[b] * beta[b][None, :],
            predicted_probability=float(probs[b]),
            feature_names=names,
        )
        for b in range(logits.shape[0])
    ]


def explain(record: Union[Record, Sequence[float]], model: GraphModel) -> Explanation:
    """Prediction plus featimp/intimp from one eval-mode forward pass."""
    logits, alpha, beta = model.eval_pass(_record_values(record, model.schema))
    return _explanations_from_pass(logits, alpha, beta, tuple(model.schema.names))[0]


def explain_batch(values: Union[Dataset, np.ndarray], model: GraphModel) -> List[Explanation]:
    rows = values.values if isinstance(values, Dataset) else np.atleast_2d(values)
    names = tuple(model.schema.names)
    out: List[Explanation] = []
    for start in range(0, rows.shape[0], PREDICT_CHUNK):
        logits, alpha, beta = model.eval_pass(rows[start : start + PREDICT_CHUNK])
        out.extend(_explanations_from_pass(logits, alpha, beta, names))
    return out


def interaction_proportion(
    expl: Explanation, source: Union[int, str], destination: Union[int, str]
) -> float:
    """Fraction of destination ``i``'s importance that comes from source ``j``.

    Raises:
        UndefinedProportionError: the destination has zero importance.
    """
    j = expl.index_of(source)
    i = expl.index_of(destination)
    if expl.featimp[i] == 0.0:
        raise UndefinedProportionError(
            f"feature '{expl.names[i]}' has zero importance; proportion is undefined"
        )
    return float(expl.intimp[j, i] / expl.featimp[i])


class Edge(NamedTuple):
    source: int
    destination: int
    intimp: float


def top_k_edges(expl: Explanation, k: int, exclude_self_loops: bool = False) -> List[Edge]:
    """The ``k`` largest intimp entries; ties ordered by (source, destination)."""
    d = expl.d
    available = d * d - (d if exclude_self_loops else 0)
    if not 1 <= k <= available:
        raise ArgumentError(f"k must be in [1, {available}], got {k}")
    src, dst = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    src, dst, vals = src.ravel(), dst.ravel(), expl.intimp.ravel()
    if exclude_self_loops:
        keep = src != dst
        src, dst, vals = src[keep], dst[keep], vals[keep]
    order = np.lexsort((dst, src, -vals))[:k]
    return [Edge(int(src[o]), int(dst[o]), float(vals[o])) for o in order]


class ExplanationSummary(NamedTuple):
    mean_node_importance: np.ndarray
    mean_outward_edge: np.ndarray
    mean_intimp: np.ndarray


def aggregate_explanations(expls: Sequence[Explanation]) -> ExplanationSummary:
    """Per-feature means over records.

    ``mean_outward_edge[j]`` is the mean over records of the total intimp
    leaving ``j`` towards other features (self-loops excluded).
    """
    if not expls:
        raise ArgumentError("cannot aggregate an empty list of explanations")
    d = expls[0].d
    if any(e.d != d for e in expls):
        raise ArgumentError("explanations have different feature counts")
    featimp = np.array([e.featimp for e in expls])
    intimp = np.array([e.intimp for e in expls])
    outward = intimp.sum(axis=2) - np.diagonal(intimp, axis1=1, axis2=2)
    return ExplanationSummary(
        mean_node_importance=featimp.mean(axis=0),
        mean_outward_edge=outward.mean(axis=0),
        mean_intimp=intimp.mean(axis=0),
    )


def directed_pairs(mean_intimp: np.ndarray) -> List[Edge]:
    """Off-diagonal (source, destination) entries, largest first."""
    matrix = np.asarray(mean_intimp, dtype=np.float64)
    d = matrix.shape[0]
    return top_k_edges(Explanation(np.zeros(d), matrix, 0.0), d * d - d, exclude_self_loops=True)


@dataclass(frozen=True)
class UnorderedPair:
    """Interaction mass between two features in both directions."""

    first: int
    second: int
    forward: float
    backward: float

    @property
    def total(self) -> float:
        return self.forward + self.backward

    @property
    def dominant_direction(self) -> Tuple[int, int]:
        if self.backward > self.forward:
            return (self.second, self.first)
        return (self.first, self.second)


def collapse_unordered_pairs(mean_intimp: np.ndarray) -> List[UnorderedPair]:
    """Sum ``intimp[j, i] + intimp[i, j]`` for every ``j < i``, largest first."""
    matrix = np.asarray(mean_intimp, dtype=np.float64)
    d = matrix.shape[0]
    pairs = [
        UnorderedPair(j, i, float(matrix[j, i]), float(matrix[i, j]))
        for j in range(d)
        for i in range(j + 1, d)
    ]
    return sorted(pairs, key=lambda p: (-p.total, p.first, p.second))


# Training


class GraphTrainer:
    """Minibatch Adam on class-weighted BCE with early stopping on validation AUROC."""

    def __init__(
        self,
        variant: Union[str, AttentionVariant] = AttentionVariant.GATV2,
        config: Optional[TrainingConfig] = None,
        seed: int = 0,
    ):
        self.variant = AttentionVariant(variant)
        self.config = config or TrainingConfig()
        self.seed = seed
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    def fit(self, train: Dataset, val: Dataset) -> GraphModel:
        cfg = self.config
        n = len(train)
        n_pos = int(train.labels.sum())
        if n == 0:
            raise ArgumentError("training split is empty")
        if n_pos == 0 or n_pos == n:
            raise TrainingError(
                "training split must contain both classes",
                diagnostics={"n_records": n, "n_positive": n_pos},
            )
        if len(val) == 0 or val.labels.min() == val.labels.max():
            raise ArgumentError("validation split must contain both classes")
        if val.schema != train.schema:
            raise SchemaMismatchError("train and validation schemas differ")

        stats = train.normalization_stats or NormalizationStats.fit(train.values, train.schema)
        model = init_model(train.schema, self.variant, cfg, self.seed, stats)
        pos_weight = (n - n_pos) / n_pos
        encoded = model.encode(train.values)
        labels = train.labels
        params = model.params
        state = OptimizerState.fresh(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
        rng = np.random.default_rng(self.seed)

        best_auroc = -np.inf
        best_params = params
        best_epoch = 0
        stale = 0
        history: List[Dict[str, float]] = []
        last_loss = float("nan")
        for epoch in range(1, cfg.max_epochs + 1):
            order = rng.permutation(n)
            losses = []
            for step, start in enumerate(range(0, n, cfg.batch_size)):
                rows = order[start : start + cfg.batch_size]
                dropout_seed = int(rng.integers(0, 2**31 - 1))
                try:
                    loss, cache = forward_loss(
                        params,
                        model.network,
                        Batch(encoded.take(rows), labels[rows]),
                        mode="train",
                        dropout_seed=dropout_seed,
                        pos_weight=pos_weight,
                        leaky_slope=cfg.leaky_slope,
                    )
                    params, state = adam_step(params, backward(cache), state)
                except NumericError as e:
                    raise TrainingError(
                        f"training diverged: {e}",
                        diagnostics={
                            "epoch": epoch,
                            "step": step,
                            "last_loss": last_loss,
                            "error": str(e),
                        },
                    ) from e
                last_loss = loss
                losses.append(loss)

            val_scores = model.with_params(params).predict_proba(val.values)
            val_auroc = auroc(ScoredSet(val_scores, val.labels))
            mean_loss = float(np.mean(losses))
            history.append({"epoch": epoch, "loss": mean_loss, "val_auroc": val_auroc})
            self.logger.info(
                "epoch %d: loss %.5f, validation AUROC %.4f", epoch, mean_loss, val_auroc
            )
            if val_auroc > best_auroc:
                best_auroc, best_params, best_epoch, stale = val_auroc, params, epoch, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    self.logger.info("early stop after epoch %d (best %d)", epoch, best_epoch)
                    break

        best = model.with_params(best_params)
        best.history = history
        best.best_epoch = best_epoch
        best.threshold = optimal_threshold(ScoredSet(best.predict_proba(val.values), val.labels))
        return best


def train(
    train: Dataset,
    val: Dataset,
    config: Optional[TrainingConfig] = None,
    variant: Union[str, AttentionVariant] = AttentionVariant.GATV2,
    seed: int = 0,
) -> GraphModel:
    """Train a graph model and return the best-validation checkpoint."""
    return GraphTrainer(variant=variant, config=config, seed=seed).fit(train, val)


# Checkpoints


def save_model(model: GraphModel, path: Union[str, Path]) -> Path:
    metadata = {
        "algorithm": model.variant.value,
        "schema": model.schema.to_dict(),
        "schema_hash": model.schema.schema_hash(),
        "config": model.config.to_dict(),
        "normalization_stats": (
            model.normalization_stats.to_dict() if model.normalization_stats else None
        ),
        "threshold": float(model.threshold),
        "history": [dict(h) for h in model.history],
        "best_epoch": model.best_epoch,
    }
    return save_params(model.params, path, metadata)


def load_model(path: Union[str, Path]) -> GraphModel:
    params, meta = load_params(path)
    stats = meta.get("normalization_stats")
    schema = FeatureSchema.from_dict(meta["schema"])
    if meta.get("schema_hash") != schema.schema_hash():
        raise SchemaMismatchError(f"{path}: stored schema hash does not match stored schema")
    return GraphModel(
        variant=AttentionVariant(meta["algorithm"]),
        schema=schema,
        config=TrainingConfig.from_dict(meta.get("config")),
        params=params,
        normalization_stats=NormalizationStats.from_dict(stats) if stats else None,
        threshold=float(meta.get("threshold", 0.5)),
        history=list(meta.get("history", [])),
        seed=params.seed,
        best_epoch=meta.get("best_epoch"),
    )
