"""Dataset loading, writing, splitting and stage filtering."""

import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from .models import (
    ArgumentError,
    DataValidationError,
    Dataset,
    FeatureKind,
    FeatureSchema,
    NormalizationStats,
    SchemaMismatchError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def load_dataset(path: PathLike, schema: FeatureSchema) -> Dataset:
    """Load a comma-separated dataset file and validate it against ``schema``.

    The header must contain exactly the schema's feature names plus its label
    column, in any order. Row order is preserved. Missing cells are rejected.

    Raises:
        SchemaMismatchError: missing or unexpected column.
        DataValidationError: unparseable or out-of-range cell (row index is
            0-based over data rows).
    """
    path = Path(path)
    try:
        frame = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            encoding="utf-8",
            skipinitialspace=True,
        )
    except pd.errors.EmptyDataError:
        raise SchemaMismatchError(f"{path}: file has no header row") from None
    header = [str(c).strip() for c in frame.columns]
    frame.columns = header

    expected = schema.names + [schema.label_name]
    for column in expected:
        if column not in header:
            raise SchemaMismatchError(f"{path}: missing column '{column}'", column=column)
    for column in header:
        if column not in expected:
            raise SchemaMismatchError(f"{path}: unexpected column '{column}'", column=column)

    n = len(frame)
    values = np.empty((n, len(schema)), dtype=np.float64)
    for idx, spec in enumerate(schema.features):
        column = _parse_column(frame[spec.name], spec.name)
        for row, value in enumerate(column):
            reason = spec.check_value(float(value))
            if reason:
                raise DataValidationError(
                    f"{path}: row {row}, column '{spec.name}': {reason}",
                    row=row,
                    column=spec.name,
                )
        values[:, idx] = column

    labels = _parse_column(frame[schema.label_name], schema.label_name)
    bad = np.flatnonzero((labels != 0.0) & (labels != 1.0))
    if bad.size:
        row = int(bad[0])
        raise DataValidationError(
            f"{path}: row {row}, column '{schema.label_name}': label must be 0 or 1",
            row=row,
            column=schema.label_name,
        )

    logger.debug("Loaded %d records with %d features from %s", n, len(schema), path)
    return Dataset(schema=schema, values=values, labels=labels.astype(np.int64))


def _parse_column(column: pd.Series, name: str) -> np.ndarray:
    parsed = np.empty(len(column), dtype=np.float64)
    for row, text in enumerate(column):
        try:
            parsed[row] = float(str(text).strip())
        except ValueError:
            raise DataValidationError(
                f"row {row}, column '{name}': cannot parse '{text}'", row=row, column=name
            ) from None
        if not np.isfinite(parsed[row]):
            raise DataValidationError(
                f"row {row}, column '{name}': value is not finite", row=row, column=name
            )
    return parsed


def write_dataset(ds: Dataset, path: PathLike) -> Path:
    """Write ``ds`` in the comma-separated format read by :func:`load_dataset`."""
    path = Path(path)
    columns: Dict[str, np.ndarray] = {}
    for idx, spec in enumerate(ds.schema.features):
        column = ds.values[:, idx]
        if spec.kind is FeatureKind.CONTINUOUS:
            columns[spec.name] = column
        else:
            columns[spec.name] = column.astype(np.int64)
    columns[ds.schema.label_name] = ds.labels
    frame = pd.DataFrame(columns, columns=ds.schema.names + [ds.schema.label_name])
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, encoding="utf-8", float_format="%.17g", lineterminator="\n")
    return path


def split_dataset(
    ds: Dataset, test_fraction: float, val_fraction_of_train: float, seed: int
) -> Tuple[Dataset, Dataset, Dataset]:
    """Stratified train/val/test split.

    Split sizes are fixed first (``round(n * test_fraction)`` test records,
    ``round((n - n_test) * val_fraction_of_train)`` validation records) and then
    distributed over the two label classes by largest remainder, so every split
    tracks the overall positive rate as closely as integer counts allow. Records
    keep their original relative order inside each split. Normalization stats
    are fitted on train only and attached to all three splits.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ArgumentError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if not 0.0 <= val_fraction_of_train < 1.0:
        raise ArgumentError(
            f"val_fraction_of_train must be in [0, 1), got {val_fraction_of_train}"
        )
    n = len(ds)
    if n < 3:
        raise ArgumentError(f"need at least 3 records to split, got {n}")

    n_test = int(round(n * test_fraction))
    n_val = int(round((n - n_test) * val_fraction_of_train))
    n_train = n - n_test - n_val
    if n_test == 0 or n_train == 0 or (val_fraction_of_train > 0.0 and n_val == 0):
        raise ArgumentError(
            f"split would be empty (train={n_train}, val={n_val}, test={n_test})"
        )

    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(ds.labels == c) for c in (0, 1)]
    class_counts = [len(idx) for idx in by_class]
    test_alloc = _allocate(n_test, class_counts)
    remaining = [c - t for c, t in zip(class_counts, test_alloc)]
    val_alloc = _allocate(n_val, remaining)

    train_idx: List[np.ndarray] = []
    val_idx: List[np.ndarray] = []
    test_idx: List[np.ndarray] = []
    for members, n_t, n_v in zip(by_class, test_alloc, val_alloc):
        shuffled = rng.permutation(members)
        test_idx.append(shuffled[:n_t])
        val_idx.append(shuffled[n_t : n_t + n_v])
        train_idx.append(shuffled[n_t + n_v :])

    train_rows = np.sort(np.concatenate(train_idx))
    val_rows = np.sort(np.concatenate(val_idx))
    test_rows = np.sort(np.concatenate(test_idx))

    train_raw = ds.take(train_rows)
    stats = NormalizationStats.fit(train_raw.values, ds.schema)
    train = train_raw.with_stats(stats)
    val = ds.take(val_rows).with_stats(stats)
    test = ds.take(test_rows).with_stats(stats)
    logger.debug("Split %d records into %d/%d/%d", n, len(train), len(val), len(test))
    return train, val, test


def _allocate(total: int, counts: List[int]) -> List[int]:
    """Distribute ``total`` over groups proportionally to ``counts`` (largest remainder)."""
    pool = sum(counts)
    if pool == 0:
        return [0 for _ in counts]
    exact = [total * c / pool for c in counts]
    alloc = [min(int(np.floor(e)), c) for e, c in zip(exact, counts)]
    order = sorted(range(len(counts)), key=lambda i: (-(exact[i] - np.floor(exact[i])), i))
    shortfall = total - sum(alloc)
    for i in order * 2:
        if shortfall == 0:
            break
        if alloc[i] < counts[i]:
            alloc[i] += 1
            shortfall -= 1
    return alloc


def select_stage_features(ds: Dataset, model_id: int) -> Dataset:
    """Keep the features available by hospitalization stage ``model_id`` (1..4)."""
    if model_id not in (1, 2, 3, 4):
        raise ArgumentError(f"model_id must be in 1..4, got {model_id}")
    keep = [idx for idx, spec in enumerate(ds.schema.features) if spec.stage <= model_id]
    schema = FeatureSchema(
        features=tuple(ds.schema.features[idx] for idx in keep),
        label_name=ds.schema.label_name,
    )
    stats = ds.normalization_stats.restrict(schema) if ds.normalization_stats else None
    return Dataset(
        schema=schema,
        values=ds.values[:, keep],
        labels=ds.labels,
        normalization_stats=stats,
    )


def align_to_schema(ds: Dataset, schema: FeatureSchema) -> Dataset:
    """Columns of ``ds`` reordered to ``schema``'s feature order.

    The result keeps ``ds``'s own feature specs, so a checkpoint can compare
    schema hashes and catch features whose kind or stage changed.
    """
    missing = [name for name in schema.names if name not in ds.schema.names]
    if missing:
        raise SchemaMismatchError(f"dataset lacks feature '{missing[0]}'", column=missing[0])
    columns = [ds.schema.index_of(name) for name in schema.names]
    aligned = FeatureSchema(
        features=tuple(ds.schema.features[idx] for idx in columns),
        label_name=ds.schema.label_name,
    )
    stats = ds.normalization_stats.restrict(aligned) if ds.normalization_stats else None
    return Dataset(
        schema=aligned, values=ds.values[:, columns], labels=ds.labels, normalization_stats=stats
    )


def standardized_values(ds: Dataset) -> np.ndarray:
    """Copy of ``ds.values`` with continuous columns z-scored by the dataset's stats."""
    stats = ds.normalization_stats or NormalizationStats.fit(ds.values, ds.schema)
    return standardize(ds.values, ds.schema, stats)


def standardize(values: np.ndarray, schema: FeatureSchema, stats: NormalizationStats) -> np.ndarray:
    out = np.array(values, dtype=np.float64, copy=True)
    for idx, spec in enumerate(schema.features):
        if spec.kind is FeatureKind.CONTINUOUS:
            out[..., idx] = (out[..., idx] - stats.mean[spec.name]) / stats.std[spec.name]
    return out
