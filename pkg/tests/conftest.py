"""
Pytest configuration and shared fixtures for rigidity_xai tests.
"""

import shutil
import tempfile
from pathlib import Path
from typing import Any, Dict

import numpy as np
import pytest
import yaml

from rigidity_xai.graph import TrainingConfig, init_model
from rigidity_xai.models import (
    Dataset,
    FeatureKind,
    FeatureSchema,
    FeatureSpec,
    NormalizationStats,
)
from rigidity_xai.synth import FeatureDistribution, GroundTruthModel, generate_dataset

# Test fixtures and utilities


@pytest.fixture
def temp_dir():
    """Create temporary directory that's cleaned up after test."""
    temp_path = tempfile.mkdtemp()
    yield Path(temp_path)
    shutil.rmtree(temp_path)


@pytest.fixture
def mixed_schema() -> FeatureSchema:
    """Five features covering every kind and stage."""
    return FeatureSchema(
        features=(
            FeatureSpec("AGE", FeatureKind.CONTINUOUS, 1),
            FeatureSpec("HTN", FeatureKind.BINARY, 1),
            FeatureSpec("APRDRG_Severity", FeatureKind.CATEGORICAL, 2, cardinality=4),
            FeatureSpec("has_diag_Eye_diseases", FeatureKind.BINARY, 3),
            FeatureSpec("LOS", FeatureKind.CONTINUOUS, 4),
        ),
        label_name="isRigidity",
    )


@pytest.fixture
def mixed_dataset(mixed_schema) -> Dataset:
    """Random records over ``mixed_schema`` with a label driven by AGE and severity."""
    rng = np.random.default_rng(11)
    n = 240
    values = np.column_stack(
        [
            rng.uniform(18, 95, n),
            rng.integers(0, 2, n),
            rng.integers(0, 4, n),
            rng.integers(0, 2, n),
            rng.uniform(1, 30, n),
        ]
    ).astype(np.float64)
    z = 0.05 * (values[:, 0] - 60) + 0.8 * (values[:, 2] - 1.5)
    labels = (rng.random(n) < 1.0 / (1.0 + np.exp(-z))).astype(np.int64)
    return Dataset(schema=mixed_schema, values=values, labels=labels)


@pytest.fixture
def small_ground_truth() -> GroundTruthModel:
    """Four features in two stages with one planted interaction."""
    return GroundTruthModel(
        feature_names=("AGE", "HTN", "NIHSS", "MT"),
        feature_dists=(
            FeatureDistribution.uniform(18, 95),
            FeatureDistribution.bernoulli(0.8),
            FeatureDistribution.uniform(0, 42),
            FeatureDistribution.bernoulli(0.3),
        ),
        stage_tags=(1, 1, 2, 2),
        bias=-2.5,
        linear_weights=np.array([0.01, 0.4, 0.05, 0.6]),
        interaction_weights={(1, 3): 1.5},
    )


@pytest.fixture
def small_synthetic(small_ground_truth) -> Dataset:
    return generate_dataset(small_ground_truth, 400, seed=3)


@pytest.fixture
def fast_training() -> TrainingConfig:
    """Tiny optimisation budget for tests that only need a trained model."""
    return TrainingConfig(batch_size=64, max_epochs=2, patience=2)


@pytest.fixture
def tiny_graph_model(mixed_dataset):
    """Untrained GATv2 model over ``mixed_schema`` with dataset statistics."""
    stats = NormalizationStats.fit(mixed_dataset.values, mixed_dataset.schema)
    return init_model(
        mixed_dataset.schema, "gatv2", TrainingConfig(), seed=5, normalization_stats=stats
    )


@pytest.fixture
def schema_data() -> Dict[str, Any]:
    """Feature schema document."""
    return {
        "label_name": "isRigidity",
        "features": [
            {"name": "NIHSS", "kind": "continuous", "stage": 2},
            {"name": "MT", "kind": "binary", "stage": 2},
            {"name": "APRDRG_Risk_Mortality", "kind": "categorical", "cardinality": 4,
             "stage": 2},
        ],
    }


@pytest.fixture
def ground_truth_data() -> Dict[str, Any]:
    """Ground-truth document."""
    return {
        "label_name": "isRigidity",
        "bias": -1.0,
        "features": [
            {"name": "HTN", "stage": 1, "weight": 0.3,
             "distribution": {"type": "bernoulli", "p": 0.8}},
            {"name": "NIHSS", "stage": 2, "weight": 0.05,
             "distribution": {"type": "uniform", "lo": 0, "hi": 42}},
            {"name": "MT", "stage": 2, "weight": 0.5,
             "distribution": {"type": "bernoulli", "p": 0.2}},
        ],
        "interactions": [{"pair": ["HTN", "MT"], "weight": 1.0}],
    }


@pytest.fixture
def experiment_data() -> Dict[str, Any]:
    """Small experiment config document on the built-in scenario."""
    return {
        "data": {"ground_truth": "desk", "n_records": 600},
        "model_ids": [2, 1],
        "algorithms": ["logistic"],
        "seeds": [0],
        "split": {"test_fraction": 0.2, "val_fraction_of_train": 0.125},
        "training": {"batch_size": 64, "max_epochs": 2, "patience": 2},
        "logistic": {"l2_lambda": 0.001, "max_iters": 300},
        "attribution": {
            "background_size": 20,
            "n_coalitions": 64,
            "explain_records": 20,
            "shapley_records": 10,
            "d_max": 12,
        },
        "output_dir": "results",
    }


@pytest.fixture
def write_yaml(temp_dir):
    """Write a document to ``temp_dir`` and return its path."""

    def _write(name: str, data: Any) -> Path:
        path = temp_dir / name
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(data, f, sort_keys=False)
        return path

    return _write
