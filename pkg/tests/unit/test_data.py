"""
Unit tests for dataset loading, splitting and stage filtering.
"""

import numpy as np
import pytest

from rigidity_xai.data import (
    align_to_schema,
    load_dataset,
    select_stage_features,
    split_dataset,
    standardized_values,
    write_dataset,
)
from rigidity_xai.models import (
    ArgumentError,
    Dataset,
    DataValidationError,
    FeatureKind,
    FeatureSchema,
    FeatureSpec,
    SchemaMismatchError,
)
from rigidity_xai.synth import TEMPLATES_DIR


@pytest.fixture
def nihss_schema() -> FeatureSchema:
    return FeatureSchema(
        features=(
            FeatureSpec("NIHSS", FeatureKind.CONTINUOUS, 2),
            FeatureSpec("MT", FeatureKind.BINARY, 2),
        ),
        label_name="isRigidity",
    )


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadDataset:
    """Test load_dataset."""

    def test_single_record(self, temp_dir, nihss_schema):
        path = _write(temp_dir / "d.csv", "NIHSS,MT,isRigidity\n19,1,1\n")
        ds = load_dataset(path, nihss_schema)
        assert len(ds) == 1
        assert ds.values[0, 0] == 19.0
        assert ds.values[0, 1] == 1.0
        assert ds.labels[0] == 1

    def test_columns_in_any_order(self, temp_dir, nihss_schema):
        path = _write(temp_dir / "d.csv", "isRigidity,MT,NIHSS\n0,1,7.5\n")
        ds = load_dataset(path, nihss_schema)
        assert ds.values.tolist() == [[7.5, 1.0]]

    def test_header_only(self, temp_dir, nihss_schema):
        path = _write(temp_dir / "d.csv", "NIHSS,MT,isRigidity\n")
        ds = load_dataset(path, nihss_schema)
        assert len(ds) == 0
        assert ds.values.shape == (0, 2)

    def test_categorical_at_cardinality(self, temp_dir):
        schema = FeatureSchema(
            features=(FeatureSpec("APRDRG_Severity", FeatureKind.CATEGORICAL, 2, cardinality=4),),
            label_name="isRigidity",
        )
        path = _write(temp_dir / "d.csv", "APRDRG_Severity,isRigidity\n3,0\n4,1\n")
        with pytest.raises(DataValidationError) as exc:
            load_dataset(path, schema)
        assert exc.value.row == 1
        assert exc.value.column == "APRDRG_Severity"

    def test_missing_column(self, temp_dir, nihss_schema):
        path = _write(temp_dir / "d.csv", "NIHSS,isRigidity\n19,1\n")
        with pytest.raises(SchemaMismatchError) as exc:
            load_dataset(path, nihss_schema)
        assert exc.value.column == "MT"

    def test_unexpected_column(self, temp_dir, nihss_schema):
        path = _write(temp_dir / "d.csv", "NIHSS,MT,TPA,isRigidity\n19,1,0,1\n")
        with pytest.raises(SchemaMismatchError):
            load_dataset(path, nihss_schema)

    def test_unparseable_cell(self, temp_dir, nihss_schema):
        path = _write(temp_dir / "d.csv", "NIHSS,MT,isRigidity\nsevere,1,1\n")
        with pytest.raises(DataValidationError) as exc:
            load_dataset(path, nihss_schema)
        assert exc.value.row == 0

    def test_bad_label(self, temp_dir, nihss_schema):
        path = _write(temp_dir / "d.csv", "NIHSS,MT,isRigidity\n19,1,2\n")
        with pytest.raises(DataValidationError):
            load_dataset(path, nihss_schema)

    def test_write_then_load(self, temp_dir, mixed_dataset):
        path = write_dataset(mixed_dataset, temp_dir / "out" / "d.csv")
        loaded = load_dataset(path, mixed_dataset.schema)
        np.testing.assert_array_equal(loaded.values, mixed_dataset.values)
        np.testing.assert_array_equal(loaded.labels, mixed_dataset.labels)


def _balanced(n_pos: int, n: int = 1000) -> Dataset:
    schema = FeatureSchema(
        features=(FeatureSpec("AGE", FeatureKind.CONTINUOUS, 1),), label_name="isRigidity"
    )
    labels = np.zeros(n, dtype=np.int64)
    labels[:n_pos] = 1
    return Dataset(schema=schema, values=np.arange(n, dtype=np.float64), labels=labels)


class TestSplitDataset:
    """Test split_dataset."""

    def test_split_sizes(self):
        train, val, test = split_dataset(_balanced(435), 0.2, 0.125, seed=7)
        assert (len(train), len(val), len(test)) == (700, 100, 200)

    def test_deterministic(self):
        first = split_dataset(_balanced(435), 0.2, 0.125, seed=7)
        second = split_dataset(_balanced(435), 0.2, 0.125, seed=7)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.values, b.values)

    def test_disjoint_and_complete(self):
        train, val, test = split_dataset(_balanced(435), 0.2, 0.125, seed=7)
        ids = np.concatenate([train.values[:, 0], val.values[:, 0], test.values[:, 0]])
        assert sorted(ids.tolist()) == list(range(1000))

    def test_stratified(self):
        for part in split_dataset(_balanced(435), 0.2, 0.125, seed=7):
            assert 0.4145 <= part.positive_rate <= 0.4545

    def test_stats_fitted_on_train(self):
        train, val, test = split_dataset(_balanced(435), 0.2, 0.125, seed=7)
        assert train.normalization_stats.mean["AGE"] == pytest.approx(train.values[:, 0].mean())
        assert val.normalization_stats is train.normalization_stats
        assert test.normalization_stats is train.normalization_stats

    def test_invalid_fraction(self):
        with pytest.raises(ArgumentError):
            split_dataset(_balanced(10, 20), 1.0, 0.1, seed=0)

    def test_too_small(self):
        with pytest.raises(ArgumentError):
            split_dataset(_balanced(1, 2), 0.5, 0.0, seed=0)


class TestSelectStageFeatures:
    """Test select_stage_features."""

    def test_stage_one(self, mixed_dataset):
        # stages are 1, 1, 2, 3, 4
        assert select_stage_features(mixed_dataset, 1).schema.names == ["AGE", "HTN"]

    def test_stage_four_is_identity(self, mixed_dataset):
        selected = select_stage_features(mixed_dataset, 4)
        assert selected.schema == mixed_dataset.schema
        np.testing.assert_array_equal(selected.values, mixed_dataset.values)

    def test_clinical_schema_model_two(self):
        schema = FeatureSchema.from_yaml_file(str(TEMPLATES_DIR / "table1_schema.yaml"))
        ds = Dataset(schema=schema, values=np.zeros((1, len(schema))), labels=[0])
        names = select_stage_features(ds, 2).schema.names
        for kept in ("AGE", "HTN", "NIHSS", "NIHSSREPORT", "MT", "TPA", "APRDRG_Severity",
                     "APRDRG_Risk_Mortality"):
            assert kept in names
        assert not any(n.startswith(("has_diag_", "has_pr_")) for n in names)
        assert "LOS" not in names

    def test_restricts_stats(self, mixed_dataset):
        _, _, test = split_dataset(mixed_dataset, 0.25, 0.0, seed=1)
        selected = select_stage_features(test, 1)
        assert set(selected.normalization_stats.mean) == {"AGE"}

    def test_invalid_model_id(self, mixed_dataset):
        with pytest.raises(ArgumentError):
            select_stage_features(mixed_dataset, 5)


class TestAlignToSchema:
    """Test align_to_schema."""

    def test_reorders_columns(self, mixed_dataset):
        features = mixed_dataset.schema.features
        target = FeatureSchema(features=(features[4], features[0]), label_name="isRigidity")
        aligned = align_to_schema(mixed_dataset, target)
        np.testing.assert_array_equal(aligned.values[:, 0], mixed_dataset.values[:, 4])
        np.testing.assert_array_equal(aligned.values[:, 1], mixed_dataset.values[:, 0])
        assert aligned.schema.schema_hash() == target.schema_hash()

    def test_missing_feature(self, mixed_dataset):
        target = FeatureSchema(
            features=(FeatureSpec("NIHSS", FeatureKind.CONTINUOUS, 2),), label_name="isRigidity"
        )
        with pytest.raises(SchemaMismatchError):
            align_to_schema(mixed_dataset, target)


def test_standardized_values(mixed_dataset):
    z = standardized_values(mixed_dataset)
    assert z[:, 0].mean() == pytest.approx(0.0, abs=1e-12)
    assert z[:, 0].std() == pytest.approx(1.0)
    np.testing.assert_array_equal(z[:, 1], mixed_dataset.values[:, 1])
