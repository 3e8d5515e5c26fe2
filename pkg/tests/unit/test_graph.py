"""
Unit tests for the feature-graph attention model and its explanations.
"""

import numpy as np
import pytest

from rigidity_xai.data import split_dataset
from rigidity_xai.graph import (
    AttentionVariant,
    Explanation,
    TrainingConfig,
    aggregate_explanations,
    build_feature_graph,
    collapse_unordered_pairs,
    directed_pairs,
    dot_product_attention,
    explain,
    explain_batch,
    gatv2_attention,
    global_attention_pool,
    init_model,
    interaction_proportion,
    load_model,
    predict,
    save_model,
    top_k_edges,
    train,
)
from rigidity_xai.metrics import ScoredSet, auroc
from rigidity_xai.models import (
    ArgumentError,
    DataValidationError,
    Dataset,
    FeatureKind,
    FeatureSchema,
    FeatureSpec,
    SchemaMismatchError,
    TrainingError,
    UndefinedProportionError,
)

RECORD = (70.0, 1.0, 2.0, 0.0, 4.0)


def binary_schema(d: int) -> FeatureSchema:
    return FeatureSchema(
        features=tuple(FeatureSpec(f"f{i}", FeatureKind.BINARY, 1) for i in range(d)),
        label_name="isRigidity",
    )


def random_explanation(d: int, seed: int = 0) -> Explanation:
    rng = np.random.default_rng(seed)
    beta = rng.dirichlet(np.ones(d))
    alpha = rng.dirichlet(np.ones(d), size=d).T
    return Explanation(featimp=beta, intimp=alpha * beta[None, :], predicted_probability=0.5)


@pytest.fixture
def gat_params():
    return init_model(binary_schema(2), "gatv2", seed=1).params


@pytest.fixture
def dot_params():
    return init_model(binary_schema(2), "dot_product", seed=2).params


class TestTrainingConfig:
    """Test TrainingConfig."""

    def test_defaults(self):
        config = TrainingConfig()
        assert (config.batch_size, config.max_epochs, config.patience) == (256, 50, 5)
        assert config.dropout == 0.3

    def test_unknown_key(self):
        with pytest.raises(ArgumentError):
            TrainingConfig.from_dict({"momentum": 0.9})

    def test_dropout_range(self):
        with pytest.raises(ArgumentError):
            TrainingConfig(dropout=1.0)

    def test_dict_round_trip(self):
        config = TrainingConfig(batch_size=32, head_count=8)
        assert TrainingConfig.from_dict(config.to_dict()) == config


class TestFeatureGraph:
    """Test build_feature_graph."""

    def test_d12_edges(self):
        model = init_model(binary_schema(12), seed=0)
        graph = build_feature_graph([1.0] * 12, None, model)
        assert graph.node_count == 12
        assert graph.edge_count == 144
        assert len(graph.edges()) == 144
        assert (3, 3) in graph.edges()

    def test_d73_edges(self):
        model = init_model(binary_schema(73), seed=0)
        assert build_feature_graph([0.0] * 73, None, model).edge_count == 5329

    def test_locality(self, tiny_graph_model):
        first = build_feature_graph(RECORD, None, tiny_graph_model).node_inputs
        changed = build_feature_graph((70.0, 0.0, 2.0, 0.0, 4.0), None, tiny_graph_model)
        differs = np.any(first != changed.node_inputs, axis=1)
        assert differs.tolist() == [False, True, False, False, False]

    def test_wrong_length(self, tiny_graph_model):
        with pytest.raises(SchemaMismatchError):
            build_feature_graph((70.0, 1.0), None, tiny_graph_model)

    def test_mismatched_stats(self, tiny_graph_model, mixed_dataset):
        stats = tiny_graph_model.normalization_stats.restrict(mixed_dataset.schema.subset(["AGE"]))
        with pytest.raises(SchemaMismatchError):
            build_feature_graph(RECORD, stats, tiny_graph_model)


class TestGatv2Attention:
    """Test gatv2_attention."""

    def test_identical_nodes(self):
        params = init_model(binary_schema(4), "gatv2", seed=3).params
        h = np.tile(np.random.default_rng(0).normal(size=64), (4, 1))
        _, alpha = gatv2_attention(h, params)
        np.testing.assert_allclose(alpha, 0.25, atol=1e-12)

    def test_single_node(self, gat_params):
        h = np.random.default_rng(1).normal(size=(1, 64))
        first, alpha = gatv2_attention(h, gat_params)
        second, _ = gatv2_attention(h, gat_params)
        assert alpha.tolist() == [[1.0]]
        np.testing.assert_array_equal(first, second)

    def test_columns_sum_to_one(self, gat_params):
        h = np.random.default_rng(2).normal(size=(5, 64))
        h_prime, alpha = gatv2_attention(h, gat_params)
        assert h_prime.shape == (5, 64)
        np.testing.assert_allclose(alpha.sum(axis=0), 1.0, atol=1e-9)

    def test_batched_matches_single(self, gat_params):
        h = np.random.default_rng(3).normal(size=(2, 3, 64))
        _, batched = gatv2_attention(h, gat_params)
        _, single = gatv2_attention(h[1], gat_params)
        np.testing.assert_allclose(batched[1], single, atol=1e-12)

    def test_bad_shape(self, gat_params):
        with pytest.raises(ArgumentError):
            gatv2_attention(np.zeros(64), gat_params)


class TestDotProductAttention:
    """Test dot_product_attention."""

    def test_identical_nodes(self, dot_params):
        h = np.tile(np.random.default_rng(4).normal(size=64), (3, 1))
        _, alpha = dot_product_attention(h, dot_params, head_count=4)
        np.testing.assert_allclose(alpha, 1.0 / 3.0, atol=1e-12)

    def test_equal_logits_two_nodes(self, dot_params):
        h = np.tile(np.random.default_rng(5).normal(size=64), (2, 1))
        _, alpha = dot_product_attention(h, dot_params, head_count=1)
        np.testing.assert_allclose(alpha, [[0.5, 0.5], [0.5, 0.5]], atol=1e-12)

    def test_mean_over_heads_column_stochastic(self, dot_params):
        h = np.random.default_rng(6).normal(size=(6, 64))
        _, alpha = dot_product_attention(h, dot_params, head_count=4)
        np.testing.assert_allclose(alpha.sum(axis=0), 1.0, atol=1e-9)

    def test_head_count_must_divide(self, dot_params):
        with pytest.raises(ArgumentError):
            dot_product_attention(np.zeros((2, 64)), dot_params, head_count=5)

    def test_init_checks_head_count(self):
        with pytest.raises(ArgumentError):
            init_model(binary_schema(2), "dot_product", TrainingConfig(head_count=3))


class TestGlobalAttentionPool:
    """Test global_attention_pool."""

    def test_identical_nodes(self, gat_params):
        row = np.random.default_rng(7).normal(size=64)
        g, beta = global_attention_pool(np.tile(row, (5, 1)), gat_params)
        np.testing.assert_allclose(beta, 0.2, atol=1e-12)
        np.testing.assert_allclose(g, row, atol=1e-12)

    def test_saturated_gate(self, gat_params):
        weight = np.zeros((64, 1))
        weight[0, 0] = 1.0
        params = gat_params.replace({"pool.gate.weight": weight})
        h = np.zeros((4, 64))
        h[2, 0] = 20.0
        _, beta = global_attention_pool(h, params)
        assert beta[2] > 0.999

    def test_weights_sum_to_one(self, gat_params):
        h = np.random.default_rng(8).normal(size=(12, 64))
        _, beta = global_attention_pool(h, gat_params)
        assert beta.sum() == pytest.approx(1.0, abs=1e-9)


class TestPredict:
    """Test predict and the model forward pass."""

    def test_zero_head(self, tiny_graph_model):
        params = tiny_graph_model.params.replace(
            {"head.out.weight": np.zeros((32, 1)), "head.out.bias": np.zeros(1)}
        )
        assert predict(RECORD, tiny_graph_model.with_params(params)) == 0.5

    def test_deterministic(self, tiny_graph_model):
        assert predict(RECORD, tiny_graph_model) == predict(RECORD, tiny_graph_model)

    def test_probability_range(self, tiny_graph_model, mixed_dataset):
        probs = tiny_graph_model.predict_proba(mixed_dataset.values)
        assert probs.shape == (240,)
        assert np.all((probs > 0.0) & (probs < 1.0))

    def test_invalid_value(self, tiny_graph_model):
        with pytest.raises(DataValidationError) as exc:
            predict((70.0, 1.0, 7.0, 0.0, 4.0), tiny_graph_model)
        assert exc.value.column == "APRDRG_Severity"

    def test_seeded_initialization(self, mixed_schema):
        first = init_model(mixed_schema, "gatv2", seed=9)
        second = init_model(mixed_schema, "gatv2", seed=9)
        for name in first.params.names:
            np.testing.assert_array_equal(first.params[name], second.params[name])

    def test_self_focused_start(self):
        d = 8
        values = np.random.default_rng(12).integers(0, 2, (64, d)).astype(np.float64)
        focused = init_model(binary_schema(d), "gatv2", seed=13)
        plain = init_model(binary_schema(d), "gatv2", TrainingConfig(self_focus=0.0), seed=13)
        _, alpha, _ = focused.eval_pass(values)
        _, plain_alpha, _ = plain.eval_pass(values)
        diagonal = np.diagonal(alpha, axis1=1, axis2=2).mean()
        assert diagonal > 0.3
        assert diagonal > np.diagonal(plain_alpha, axis1=1, axis2=2).mean()
        assert np.all(focused.params["attention.a"] <= 0.0)

    def test_self_focus_non_negative(self):
        with pytest.raises(ArgumentError):
            TrainingConfig(self_focus=-1.0)


class TestPermutationEquivariance:
    """Relabelling the features relabels the explanation the same way."""

    @pytest.mark.parametrize("variant", ["gatv2", "dot_product"])
    def test_explanation_follows_permutation(self, variant):
        schema = FeatureSchema(
            features=(
                FeatureSpec("AGE", FeatureKind.CONTINUOUS, 1),
                FeatureSpec("HTN", FeatureKind.BINARY, 1),
                FeatureSpec("NIHSS", FeatureKind.CONTINUOUS, 2),
                FeatureSpec("MT", FeatureKind.BINARY, 2),
                FeatureSpec("TPA", FeatureKind.BINARY, 2),
                FeatureSpec("LOS", FeatureKind.CONTINUOUS, 4),
            ),
            label_name="isRigidity",
        )
        rng = np.random.default_rng(21)
        values = np.column_stack(
            [
                rng.uniform(0.0, 3.0, 8),
                rng.integers(0, 2, 8),
                rng.uniform(0.0, 3.0, 8),
                rng.integers(0, 2, 8),
                rng.integers(0, 2, 8),
                rng.uniform(0.0, 3.0, 8),
            ]
        ).astype(np.float64)
        perm = np.array([3, 0, 5, 1, 4, 2])
        model = init_model(schema, variant, seed=22)
        shuffled = FeatureSchema(
            features=tuple(schema.features[i] for i in perm), label_name="isRigidity"
        )
        moved = init_model(shuffled, variant, seed=22)
        moved = moved.with_params(
            model.params.replace({"feature_embedding": model.params["feature_embedding"][perm]})
        )
        original = explain_batch(values, model)
        relabelled = explain_batch(values[:, perm], moved)
        for before, after in zip(original, relabelled):
            assert after.names == tuple(before.names[i] for i in perm)
            np.testing.assert_allclose(after.featimp, before.featimp[perm], atol=1e-12)
            np.testing.assert_allclose(
                after.intimp, before.intimp[np.ix_(perm, perm)], atol=1e-12
            )
            assert after.predicted_probability == pytest.approx(
                before.predicted_probability, abs=1e-12
            )


class TestExplain:
    """Test explain and explain_batch."""

    @pytest.mark.parametrize("variant", ["gatv2", "dot_product"])
    def test_simplex(self, variant, mixed_dataset):
        model = init_model(mixed_dataset.schema, variant, seed=4)
        for record in mixed_dataset.records[:10]:
            expl = explain(record, model)
            assert expl.featimp.sum() == pytest.approx(1.0, abs=1e-6)
            assert expl.intimp.sum() == pytest.approx(1.0, abs=1e-6)
            assert expl.check_invariants() == []

    def test_probability_from_same_pass(self, tiny_graph_model):
        expl = explain(RECORD, tiny_graph_model)
        assert expl.predicted_probability == predict(RECORD, tiny_graph_model)
        assert expl.names[0] == "AGE"

    def test_single_feature(self):
        model = init_model(binary_schema(1), seed=0)
        expl = explain([1.0], model)
        assert expl.featimp.tolist() == [1.0]
        assert expl.intimp.tolist() == [[1.0]]

    def test_identical_inputs(self):
        d = 4
        model = init_model(binary_schema(d), "gatv2", seed=6)
        model = model.with_params(
            model.params.replace({"feature_embedding": np.zeros((d, 16))})
        )
        expl = explain([1.0] * d, model)
        np.testing.assert_allclose(expl.intimp, expl.featimp[None, :] / d, atol=1e-12)

    def test_batch_matches_single(self, tiny_graph_model, mixed_dataset):
        batch = explain_batch(mixed_dataset.take(range(3)), tiny_graph_model)
        single = explain(mixed_dataset.record(2), tiny_graph_model)
        np.testing.assert_allclose(batch[2].intimp, single.intimp, atol=1e-12)

    def test_dict_round_trip(self, tiny_graph_model):
        expl = explain(RECORD, tiny_graph_model)
        restored = Explanation.from_dict(expl.to_dict())
        np.testing.assert_array_equal(restored.intimp, expl.intimp)
        assert restored.names == expl.names

    def test_shape_checked(self):
        with pytest.raises(ArgumentError):
            Explanation(featimp=np.ones(3) / 3, intimp=np.ones((2, 2)), predicted_probability=0.5)


class TestInteractionProportion:
    """Test interaction_proportion."""

    def test_reported_case(self):
        featimp = np.array([0.3, 0.10259, 0.59741])
        intimp = np.zeros((3, 3))
        intimp[0, 1] = 0.02568
        expl = Explanation(featimp, intimp, 0.874, ("MT", "NIHSS", "AGE"))
        assert interaction_proportion(expl, "MT", "NIHSS") == pytest.approx(0.2503, abs=1e-4)

    def test_uniform_attention_self_share(self):
        d = 5
        beta = np.full(d, 0.2)
        expl = Explanation(beta, np.full((d, d), 1.0 / d) * beta[None, :], 0.5)
        assert interaction_proportion(expl, 3, 3) == pytest.approx(1.0 / d)

    def test_sources_sum_to_one(self):
        expl = random_explanation(6, seed=1)
        total = sum(interaction_proportion(expl, j, 4) for j in range(6))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_zero_importance(self):
        expl = Explanation(np.array([1.0, 0.0]), np.array([[1.0, 0.0], [0.0, 0.0]]), 0.5)
        with pytest.raises(UndefinedProportionError):
            interaction_proportion(expl, 0, 1)

    def test_unknown_feature(self):
        with pytest.raises(SchemaMismatchError):
            interaction_proportion(random_explanation(3), "NIHSS", 0)


class TestTopKEdges:
    """Test top_k_edges."""

    def test_sparse_retention(self):
        expl = random_explanation(73, seed=2)
        edges = top_k_edges(expl, 11)
        assert len(edges) == 11
        assert 11 / 73**2 == pytest.approx(0.002, abs=1e-4)
        values = [e.intimp for e in edges]
        assert values == sorted(values, reverse=True)
        assert values[-1] >= np.sort(expl.intimp.ravel())[-11]

    def test_all_edges(self):
        expl = random_explanation(6, seed=3)
        edges = top_k_edges(expl, 36)
        assert sum(e.intimp for e in edges) == pytest.approx(1.0, abs=1e-6)

    def test_tie_break(self):
        intimp = np.array([[0.25, 0.25], [0.25, 0.25]])
        edges = top_k_edges(Explanation(np.array([0.5, 0.5]), intimp, 0.5), 4)
        assert [(e.source, e.destination) for e in edges] == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_exclude_self_loops(self):
        edges = top_k_edges(random_explanation(4, seed=4), 12, exclude_self_loops=True)
        assert all(e.source != e.destination for e in edges)

    @pytest.mark.parametrize("k", [0, 17])
    def test_k_range(self, k):
        with pytest.raises(ArgumentError):
            top_k_edges(random_explanation(4), k)

    def test_k_range_without_loops(self):
        with pytest.raises(ArgumentError):
            top_k_edges(random_explanation(4), 16, exclude_self_loops=True)


class TestAggregateExplanations:
    """Test aggregate_explanations and pair collapsing."""

    def test_single_is_identity(self):
        expl = random_explanation(5, seed=5)
        summary = aggregate_explanations([expl])
        np.testing.assert_array_equal(summary.mean_node_importance, expl.featimp)
        np.testing.assert_array_equal(summary.mean_intimp, expl.intimp)

    def test_outward_excludes_self_loops(self):
        expl = random_explanation(4, seed=6)
        summary = aggregate_explanations([expl])
        expected = expl.intimp.sum(axis=1) - np.diag(expl.intimp)
        np.testing.assert_allclose(summary.mean_outward_edge, expected, atol=1e-15)

    def test_mean_is_simplex(self):
        summary = aggregate_explanations([random_explanation(7, seed=s) for s in range(10)])
        assert summary.mean_node_importance.sum() == pytest.approx(1.0, abs=1e-6)

    def test_empty(self):
        with pytest.raises(ArgumentError):
            aggregate_explanations([])

    def test_mismatched_d(self):
        with pytest.raises(ArgumentError):
            aggregate_explanations([random_explanation(3), random_explanation(4)])

    def test_collapse_pairs(self):
        matrix = np.array([[0.5, 0.1, 0.0], [0.3, 0.0, 0.02], [0.05, 0.01, 0.02]])
        pairs = collapse_unordered_pairs(matrix)
        assert [(p.first, p.second) for p in pairs] == [(0, 1), (0, 2), (1, 2)]
        assert pairs[0].total == pytest.approx(0.4)
        assert pairs[0].dominant_direction == (1, 0)

    def test_directed_pairs(self):
        edges = directed_pairs(random_explanation(4, seed=7).intimp)
        assert len(edges) == 12
        assert all(e.source != e.destination for e in edges)


def _noise_dataset(mixed_schema, n: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    values = np.column_stack(
        [
            rng.uniform(18, 95, n),
            rng.integers(0, 2, n),
            rng.integers(0, 4, n),
            rng.integers(0, 2, n),
            rng.uniform(1, 30, n),
        ]
    ).astype(np.float64)
    labels = rng.integers(0, 2, n)
    return Dataset(schema=mixed_schema, values=values, labels=labels)


class TestTrain:
    """Test graph model training."""

    def test_records_history(self, mixed_dataset, fast_training):
        train_ds, val_ds, _ = split_dataset(mixed_dataset, 0.2, 0.25, seed=0)
        model = train(train_ds, val_ds, fast_training, "gatv2", seed=1)
        assert 1 <= model.best_epoch <= 2
        assert [h["epoch"] for h in model.history] == [1, 2]
        assert np.isfinite(model.threshold)
        assert model.variant is AttentionVariant.GATV2

    def test_deterministic(self, mixed_dataset, fast_training):
        train_ds, val_ds, _ = split_dataset(mixed_dataset, 0.2, 0.25, seed=0)
        first = train(train_ds, val_ds, fast_training, "dot_product", seed=2)
        second = train(train_ds, val_ds, fast_training, "dot_product", seed=2)
        assert first.history == second.history
        for name in first.params.names:
            np.testing.assert_array_equal(first.params[name], second.params[name])

    def test_no_signal(self, mixed_schema, fast_training):
        train_ds, val_ds, holdout = split_dataset(
            _noise_dataset(mixed_schema, 5000, seed=3), 0.8, 0.25, seed=0
        )
        model = train(train_ds, val_ds, fast_training, "gatv2", seed=0)
        scores = model.predict_proba(holdout.values)
        assert 0.45 <= auroc(ScoredSet(scores, holdout.labels)) <= 0.55

    def test_single_class_training_split(self, mixed_dataset, fast_training):
        positives = mixed_dataset.take(np.flatnonzero(mixed_dataset.labels == 1))
        with pytest.raises(TrainingError) as exc:
            train(positives, mixed_dataset, fast_training)
        assert exc.value.diagnostics["n_positive"] == len(positives)

    def test_single_class_validation_split(self, mixed_dataset, fast_training):
        negatives = mixed_dataset.take(np.flatnonzero(mixed_dataset.labels == 0))
        with pytest.raises(ArgumentError):
            train(mixed_dataset, negatives, fast_training)


class TestCheckpoint:
    """Test save_model and load_model."""

    def test_round_trip(self, temp_dir, tiny_graph_model, mixed_dataset):
        tiny_graph_model.threshold = 0.37
        path = save_model(tiny_graph_model, temp_dir / "model.npz")
        loaded = load_model(path)
        assert loaded.variant is AttentionVariant.GATV2
        assert loaded.threshold == 0.37
        assert loaded.seed == 5
        assert loaded.schema == tiny_graph_model.schema
        np.testing.assert_array_equal(
            loaded.predict_proba(mixed_dataset.values),
            tiny_graph_model.predict_proba(mixed_dataset.values),
        )
