"""Minimal reverse-mode differentiation over float64 numpy arrays.

A :class:`Tape` records every operation of one forward pass as a
:class:`Tensor` node. ``Tape.backward`` walks the nodes in reverse creation
order and accumulates gradients into their parents, so the reduction order is
fixed and repeated runs are bit-identical.

Networks are plain callables ``network(tape, leaves, inputs) -> logits`` where
``leaves`` maps parameter names to tape leaves. :func:`forward_loss` wraps a
network with the weighted binary cross-entropy (or squared error) loss and
returns a one-shot cache for :func:`backward`.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .models import ArgumentError, ConfigError, NumericError, UsageError

logger = logging.getLogger(__name__)

DEFAULT_LEAKY_SLOPE = 0.2

# Parameter counts above this are checked on a seeded subsample.
FULL_CHECK_LIMIT = 2000
SUBSAMPLE_SIZE = 400
# absolute scale below which gradient differences count as rounding noise
RELATIVE_ERROR_FLOOR = 1e-8


class Tensor:
    """One node of a recorded computation."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "index", "name")

    def __init__(
        self,
        value: np.ndarray,
        parents: Tuple["Tensor", ...] = (),
        backward_fn: Optional[Callable[[np.ndarray], None]] = None,
        op: str = "constant",
        index: int = -1,
        name: Optional[str] = None,
    ):
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.index = index
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, index={self.index}, shape={self.shape})"


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tape:
    """Records operations for a single forward pass.

    Args:
        mode: ``"train"`` enables dropout, ``"eval"`` makes it the identity.
        dropout_seed: seed for dropout masks; required in train mode.
        leaky_slope: negative-side slope of :meth:`leaky_relu`.
    """

    def __init__(
        self,
        mode: str = "eval",
        dropout_seed: Optional[int] = None,
        leaky_slope: float = DEFAULT_LEAKY_SLOPE,
    ):
        if mode not in ("train", "eval"):
            raise ArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
        if mode == "train" and dropout_seed is None:
            raise ArgumentError("train mode requires a dropout_seed")
        self.mode = mode
        self.leaky_slope = leaky_slope
        self.nodes: List[Tensor] = []
        self.captured: Dict[str, np.ndarray] = {}
        # sign pattern of every piecewise activation input, in call order
        self.kink_masks: List[np.ndarray] = []
        self._rng = np.random.default_rng(dropout_seed) if mode == "train" else None

    def _record(
        self,
        value: np.ndarray,
        parents: Tuple[Tensor, ...],
        backward_fn: Optional[Callable[[np.ndarray], None]],
        op: str,
        name: Optional[str] = None,
    ) -> Tensor:
        index = len(self.nodes)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite value produced at node {index} ({op})")
        node = Tensor(value, parents, backward_fn, op, index, name)
        self.nodes.append(node)
        return node

    # leaves

    def parameter(self, name: str, value: np.ndarray) -> Tensor:
        return self._record(np.asarray(value, dtype=np.float64), (), None, "parameter", name)

    def constant(self, value: Any) -> Tensor:
        return self._record(np.asarray(value, dtype=np.float64), (), None, "constant")

    # elementwise

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        def back(g):
            a.accumulate(_unbroadcast(g, a.shape))
            b.accumulate(_unbroadcast(g, b.shape))

        return self._record(a.value + b.value, (a, b), back, "add")

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        def back(g):
            a.accumulate(_unbroadcast(g * b.value, a.shape))
            b.accumulate(_unbroadcast(g * a.value, b.shape))

        return self._record(a.value * b.value, (a, b), back, "mul")

    def scale(self, a: Tensor, factor: float) -> Tensor:
        def back(g):
            a.accumulate(g * factor)

        return self._record(a.value * factor, (a,), back, "scale")

    def leaky_relu(self, a: Tensor) -> Tensor:
        slope = self.leaky_slope
        positive = a.value >= 0
        self.kink_masks.append(positive)

        def back(g):
            a.accumulate(np.where(positive, g, slope * g))

        return self._record(np.where(positive, a.value, slope * a.value), (a,), back, "leaky_relu")

    def elu(self, a: Tensor) -> Tensor:
        positive = a.value > 0
        self.kink_masks.append(positive)
        neg_exp = np.exp(np.minimum(a.value, 0.0))
        out = np.where(positive, a.value, np.expm1(np.minimum(a.value, 0.0)))

        def back(g):
            a.accumulate(np.where(positive, g, g * neg_exp))

        return self._record(out, (a,), back, "elu")

    def softmax(self, a: Tensor, axis: int = -1) -> Tensor:
        shifted = a.value - a.value.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        s = e / e.sum(axis=axis, keepdims=True)

        def back(g):
            a.accumulate(s * (g - np.sum(g * s, axis=axis, keepdims=True)))

        return self._record(s, (a,), back, "softmax")

    def dropout(self, a: Tensor, rate: float) -> Tensor:
        """Inverted dropout; the identity in eval mode or at rate 0."""
        if not 0.0 <= rate < 1.0:
            raise ArgumentError(f"dropout rate must be in [0, 1), got {rate}")
        if self.mode == "eval" or rate == 0.0:
            return a
        keep = self._rng.random(a.shape) >= rate
        mask = keep / (1.0 - rate)

        def back(g):
            a.accumulate(g * mask)

        return self._record(a.value * mask, (a,), back, "dropout")

    # linear algebra and shape

    def linear(self, x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
        """``x @ w + b`` over the last axis of ``x``."""
        out = x.value @ w.value
        if b is not None:
            out = out + b.value
        parents = (x, w) if b is None else (x, w, b)

        def back(g):
            fan_in, fan_out = w.shape
            x.accumulate(g @ w.value.T)
            w.accumulate(x.value.reshape(-1, fan_in).T @ g.reshape(-1, fan_out))
            if b is not None:
                b.accumulate(g.reshape(-1, fan_out).sum(axis=0))

        return self._record(out, parents, back, "linear")

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        """Batched matrix product over the last two axes (equal batch shapes)."""

        def back(g):
            a.accumulate(g @ np.swapaxes(b.value, -1, -2))
            b.accumulate(np.swapaxes(a.value, -1, -2) @ g)

        return self._record(a.value @ b.value, (a, b), back, "matmul")

    def reshape(self, a: Tensor, shape: Tuple[int, ...]) -> Tensor:
        def back(g):
            a.accumulate(g.reshape(a.shape))

        return self._record(a.value.reshape(shape), (a,), back, "reshape")

    def transpose(self, a: Tensor, axes: Sequence[int]) -> Tensor:
        axes = tuple(axes)
        inverse = tuple(np.argsort(axes))

        def back(g):
            a.accumulate(np.transpose(g, inverse))

        return self._record(np.transpose(a.value, axes), (a,), back, "transpose")

    def broadcast_to(self, a: Tensor, shape: Tuple[int, ...]) -> Tensor:
        def back(g):
            a.accumulate(_unbroadcast(g, a.shape))

        return self._record(np.broadcast_to(a.value, shape).copy(), (a,), back, "broadcast_to")

    def pairwise_sum(self, rows: Tensor, cols: Tensor) -> Tensor:
        """``out[..., j, i, :] = rows[..., j, :] + cols[..., i, :]``."""
        out = rows.value[..., :, None, :] + cols.value[..., None, :, :]

        def back(g):
            rows.accumulate(g.sum(axis=-2))
            cols.accumulate(g.sum(axis=-3))

        return self._record(out, (rows, cols), back, "pairwise_sum")

    def gather(self, table: Tensor, index: np.ndarray) -> Tensor:
        """Rows of ``table`` selected by an integer index array."""
        index = np.asarray(index, dtype=np.int64)

        def back(g):
            grad = np.zeros_like(table.value)
            np.add.at(grad, index, g)
            table.accumulate(grad)

        return self._record(table.value[index], (table,), back, "gather")

    def concat(self, parts: Sequence[Tensor], axis: int = -1) -> Tensor:
        sizes = [p.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def back(g):
            for part, piece in zip(parts, np.split(g, splits, axis=axis)):
                part.accumulate(piece)

        value = np.concatenate([p.value for p in parts], axis=axis)
        return self._record(value, tuple(parts), back, "concat")

    def sum(self, a: Tensor, axis: Optional[int] = None) -> Tensor:
        def back(g):
            if axis is None:
                a.accumulate(np.broadcast_to(g, a.shape))
            else:
                a.accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape))

        return self._record(np.sum(a.value, axis=axis), (a,), back, "sum")

    # losses

    def weighted_bce(self, logits: Tensor, labels: np.ndarray, pos_weight: float = 1.0) -> Tensor:
        """Mean of ``-[w+ * y * log p + (1 - y) * log(1 - p)]`` with ``p = sigmoid(z)``."""
        y = np.asarray(labels, dtype=np.float64).reshape(logits.shape)
        z = logits.value
        n = z.size
        per_record = pos_weight * y * _softplus(-z) + (1.0 - y) * _softplus(z)
        p = sigmoid(z)

        def back(g):
            logits.accumulate(g * (pos_weight * y * (p - 1.0) + (1.0 - y) * p) / n)

        return self._record(np.asarray(per_record.mean()), (logits,), back, "weighted_bce")

    def squared_error(self, pred: Tensor, targets: np.ndarray) -> Tensor:
        """Mean of ``0.5 * (pred - target) ** 2``."""
        t = np.asarray(targets, dtype=np.float64).reshape(pred.shape)
        diff = pred.value - t
        n = diff.size

        def back(g):
            pred.accumulate(g * diff / n)

        return self._record(np.asarray(0.5 * np.mean(diff * diff)), (pred,), back, "squared_error")

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(node) into every node reachable from ``root``."""
        if root.value.size != 1:
            raise ArgumentError("backward requires a scalar root")
        root.grad = np.ones_like(root.value)
        for node in reversed(self.nodes[: root.index + 1]):
            if node.grad is None or node.backward_fn is None:
                continue
            if not np.all(np.isfinite(node.grad)):
                raise NumericError(f"non-finite gradient at node {node.index} ({node.op})")
            node.backward_fn(node.grad)


@dataclass(frozen=True)
class InitSpec:
    """Deterministic initializer for one named parameter."""

    name: str
    shape: Tuple[int, ...]
    scheme: str = "glorot_uniform"

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "shape": list(self.shape), "scheme": self.scheme}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "InitSpec":
        return cls(name=data["name"], shape=tuple(data["shape"]), scheme=data["scheme"])


def _initial_value(spec: InitSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.scheme == "zeros":
        return np.zeros(spec.shape, dtype=np.float64)
    if spec.scheme == "glorot_uniform":
        if len(spec.shape) == 1:
            fan_in, fan_out = spec.shape[0], 1
        else:
            fan_in, fan_out = spec.shape[0], int(np.prod(spec.shape[1:]))
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=spec.shape)
    raise ArgumentError(f"unknown init scheme '{spec.scheme}'")


class ParamSet:
    """Named float64 arrays with fixed shapes."""

    def __init__(
        self,
        values: Mapping[str, np.ndarray],
        init_specs: Sequence[InitSpec] = (),
        seed: Optional[int] = None,
    ):
        self._values: Dict[str, np.ndarray] = {}
        for name, value in values.items():
            array = np.array(value, dtype=np.float64, copy=True)
            if not np.all(np.isfinite(array)):
                raise NumericError(f"parameter '{name}' has non-finite entries")
            array.setflags(write=False)
            self._values[name] = array
        self.init_specs = tuple(init_specs)
        self.seed = seed

    @classmethod
    def initialize(cls, specs: Sequence[InitSpec], seed: int) -> "ParamSet":
        """Draw every parameter in ``specs`` order from one seeded generator."""
        rng = np.random.default_rng(seed)
        values = {spec.name: _initial_value(spec, rng) for spec in specs}
        return cls(values, init_specs=specs, seed=seed)

    @property
    def names(self) -> List[str]:
        return list(self._values)

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: value.shape for name, value in self._values.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def items(self) -> Iterable[Tuple[str, np.ndarray]]:
        return self._values.items()

    @property
    def size(self) -> int:
        return int(sum(v.size for v in self._values.values()))

    def replace(self, updates: Mapping[str, np.ndarray]) -> "ParamSet":
        """New ParamSet with some arrays swapped out (shapes must match)."""
        values = dict(self._values)
        for name, value in updates.items():
            if name not in values:
                raise ArgumentError(f"unknown parameter '{name}'")
            value = np.asarray(value, dtype=np.float64)
            if value.shape != values[name].shape:
                raise ArgumentError(
                    f"parameter '{name}' has shape {values[name].shape}, got {value.shape}"
                )
            values[name] = value
        return ParamSet(values, init_specs=self.init_specs, seed=self.seed)

    def leaves(self, tape: Tape) -> Dict[str, Tensor]:
        return {name: tape.parameter(name, value) for name, value in self._values.items()}


@dataclass
class GradSet:
    """Gradients keyed like the ParamSet they were computed for."""

    values: Dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    @property
    def names(self) -> List[str]:
        return list(self.values)


@dataclass
class OptimizerState:
    """Adam moment accumulators and hyperparameters."""

    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(
        cls,
        params: ParamSet,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> "OptimizerState":
        zeros = {name: np.zeros_like(value) for name, value in params.items()}
        return cls(
            m=zeros,
            v={name: np.zeros_like(value) for name, value in params.items()},
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(
    params: ParamSet, grads: GradSet, state: OptimizerState
) -> Tuple[ParamSet, OptimizerState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    for name, value in params.items():
        if name not in grads.values:
            raise ArgumentError(f"missing gradient for parameter '{name}'")
        if grads[name].shape != value.shape or state.m[name].shape != value.shape:
            raise ArgumentError(f"shape mismatch for parameter '{name}'")
        if not np.all(np.isfinite(grads[name])):
            raise NumericError(f"non-finite gradient for parameter '{name}'")

    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_values: Dict[str, np.ndarray] = {}
    new_m: Dict[str, np.ndarray] = {}
    new_v: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**step)
        v_hat = v / (1.0 - b2**step)
        new_values[name] = value - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new_m[name] = m
        new_v[name] = v

    new_state = OptimizerState(
        m=new_m,
        v=new_v,
        step=step,
        learning_rate=state.learning_rate,
        beta1=b1,
        beta2=b2,
        epsilon=state.epsilon,
    )
    return ParamSet(new_values, init_specs=params.init_specs, seed=params.seed), new_state


Network = Callable[[Tape, Dict[str, Tensor], Any], Tensor]


@dataclass
class Batch:
    """Network inputs plus per-record targets (0/1 labels for the BCE loss)."""

    inputs: Any
    labels: np.ndarray

    def __len__(self) -> int:
        return int(np.asarray(self.labels).shape[0])


@dataclass
class LossCache:
    """Opaque state linking a forward pass to its backward pass."""

    tape: Tape
    loss_node: Tensor
    leaves: Dict[str, Tensor]
    outputs: Tensor
    consumed: bool = False

    @property
    def captured(self) -> Dict[str, np.ndarray]:
        return self.tape.captured


def forward(
    params: ParamSet,
    network: Network,
    inputs: Any,
    mode: str = "eval",
    dropout_seed: Optional[int] = None,
    leaky_slope: float = DEFAULT_LEAKY_SLOPE,
) -> Tuple[Tensor, Tape]:
    """Run ``network`` without a loss; returns the output node and its tape."""
    tape = Tape(mode=mode, dropout_seed=dropout_seed, leaky_slope=leaky_slope)
    leaves = params.leaves(tape)
    return network(tape, leaves, inputs), tape


def forward_loss(
    params: ParamSet,
    network: Network,
    batch: Batch,
    mode: str = "eval",
    dropout_seed: Optional[int] = None,
    pos_weight: float = 1.0,
    loss: str = "bce",
    leaky_slope: float = DEFAULT_LEAKY_SLOPE,
) -> Tuple[float, LossCache]:
    """Evaluate the mean loss of ``network`` on ``batch``.

    Raises:
        ArgumentError: empty batch, unknown loss, or train mode without a seed.
        NumericError: a node produced a non-finite value; the message names it.
    """
    if len(batch) == 0:
        raise ArgumentError("batch must not be empty")
    tape = Tape(mode=mode, dropout_seed=dropout_seed, leaky_slope=leaky_slope)
    leaves = params.leaves(tape)
    outputs = network(tape, leaves, batch.inputs)
    if loss == "bce":
        loss_node = tape.weighted_bce(outputs, batch.labels, pos_weight)
    elif loss == "squared":
        loss_node = tape.squared_error(outputs, batch.labels)
    else:
        raise ArgumentError(f"unknown loss '{loss}'")
    cache = LossCache(tape=tape, loss_node=loss_node, leaves=leaves, outputs=outputs)
    return float(loss_node.value), cache


def backward(cache: LossCache) -> GradSet:
    """Reverse-mode gradients of the cached loss for every parameter."""
    if cache.consumed:
        raise UsageError("this forward cache has already been used for a backward pass")
    cache.consumed = True
    cache.tape.backward(cache.loss_node)
    grads: Dict[str, np.ndarray] = {}
    for name, leaf in cache.leaves.items():
        grad = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        grads[name] = grad
    return GradSet(grads)


def finite_diff_check(
    params: ParamSet,
    network: Network,
    batch: Batch,
    eps: float = 1e-5,
    pos_weight: float = 1.0,
    loss: str = "bce",
    max_entries: Optional[int] = None,
    seed: int = 0,
    leaky_slope: float = DEFAULT_LEAKY_SLOPE,
) -> float:
    """Largest relative error between backward() and central differences.

    Runs in eval mode. Every parameter entry is checked unless the model has
    more than ``max_entries`` (default FULL_CHECK_LIMIT), in which case a
    seeded subsample is used. The relative error of one entry is
    ``|g - g_fd| / max(|g|, |g_fd|, RELATIVE_ERROR_FLOOR)``.

    Entries whose ``+eps`` or ``-eps`` pass flips the sign of any leaky_relu
    or elu input are skipped: the central difference straddles a kink there
    and does not estimate the derivative.
    """
    if not 0.0 < eps <= 1e-2:
        raise ArgumentError(f"eps must be in (0, 1e-2], got {eps}")

    def run(p: ParamSet) -> Tuple[float, LossCache]:
        return forward_loss(
            p, network, batch, mode="eval", pos_weight=pos_weight, loss=loss,
            leaky_slope=leaky_slope,
        )

    def same_kinks(cache: LossCache, reference: Sequence[np.ndarray]) -> bool:
        masks = cache.tape.kink_masks
        return len(masks) == len(reference) and all(
            np.array_equal(a, b) for a, b in zip(masks, reference)
        )

    _, cache = run(params)
    reference = list(cache.tape.kink_masks)
    grads = backward(cache)

    entries = [(name, idx) for name, value in params.items() for idx in np.ndindex(value.shape)]
    limit = FULL_CHECK_LIMIT if max_entries is None else max_entries
    if len(entries) > limit:
        rng = np.random.default_rng(seed)
        size = max(min(limit, SUBSAMPLE_SIZE), 200) if max_entries is None else limit
        picks = np.sort(rng.choice(len(entries), size=min(size, len(entries)), replace=False))
        entries = [entries[i] for i in picks]

    worst = 0.0
    skipped = 0
    for name, idx in entries:
        base = params[name]
        plus = base.copy()
        plus[idx] += eps
        minus = base.copy()
        minus[idx] -= eps
        loss_plus, cache_plus = run(params.replace({name: plus}))
        loss_minus, cache_minus = run(params.replace({name: minus}))
        if not (same_kinks(cache_plus, reference) and same_kinks(cache_minus, reference)):
            skipped += 1
            continue
        fd = (loss_plus - loss_minus) / (2.0 * eps)
        g = float(grads[name][idx])
        err = abs(g - fd) / max(abs(g), abs(fd), RELATIVE_ERROR_FLOOR)
        worst = max(worst, err)
    logger.debug(
        "Gradient check over %d entries (%d skipped at kinks): max relative error %.3e",
        len(entries),
        skipped,
        worst,
    )
    return worst


def save_params(
    params: ParamSet, path: Union[str, Path], metadata: Optional[Dict[str, Any]] = None
) -> Path:
    """Write parameters and YAML metadata to an ``.npz`` checkpoint."""
    path = Path(path)
    meta = {
        "format": "rigidity-xai-params",
        "version": 1,
        "seed": params.seed,
        "names": params.names,
        "shapes": {name: list(shape) for name, shape in params.shapes().items()},
        "init_specs": [spec.to_dict() for spec in params.init_specs],
        "metadata": metadata or {},
    }
    arrays = {name: np.asarray(value) for name, value in params.items()}
    arrays["__meta__"] = np.array(yaml.safe_dump(meta, sort_keys=True))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    return path


def load_params(path: Union[str, Path]) -> Tuple[ParamSet, Dict[str, Any]]:
    """Read a checkpoint written by :func:`save_params`."""
    path = Path(path)
    with np.load(path, allow_pickle=False) as archive:
        if "__meta__" not in archive.files:
            raise ConfigError(f"{path}: not a parameter checkpoint (missing metadata)")
        meta = yaml.safe_load(str(archive["__meta__"]))
        values = {name: archive[name] for name in archive.files if name != "__meta__"}

    shapes = meta.get("shapes", {})
    if set(shapes) != set(values):
        raise ConfigError(f"{path}: parameter names do not match checkpoint metadata")
    for name, shape in shapes.items():
        if tuple(shape) != values[name].shape:
            raise ConfigError(f"{path}: parameter '{name}' has unexpected shape")
    ordered = {name: values[name] for name in meta.get("names", sorted(shapes))}
    specs = [InitSpec.from_dict(item) for item in meta.get("init_specs", [])]
    params = ParamSet(ordered, init_specs=specs, seed=meta.get("seed"))
    return params, meta.get("metadata", {})
