"""Rigidity Graph XAI - interpretable graph-attention classifier for tabular clinical records."""

__version__ = "0.1.0"

from .baselines import (  # noqa: E402
    AttributionMethod,
    AttributionResult,
    LogisticModel,
    exact_shapley,
    permutation_importance,
    predict_logistic,
    sampled_shapley,
    train_logistic,
)
from .data import load_dataset, select_stage_features, split_dataset, write_dataset  # noqa: E402
from .diffcore import (  # noqa: E402
    OptimizerState,
    ParamSet,
    adam_step,
    backward,
    finite_diff_check,
    forward_loss,
    load_params,
    save_params,
)
from .graph import (  # noqa: E402
    AttentionVariant,
    Explanation,
    FeatureGraph,
    GraphModel,
    TrainingConfig,
    aggregate_explanations,
    build_feature_graph,
    dot_product_attention,
    explain,
    gatv2_attention,
    global_attention_pool,
    interaction_proportion,
    predict,
    top_k_edges,
    train,
)
from .harness import ExperimentConfig, ExperimentReport, run_experiment  # noqa: E402
from .metrics import (  # noqa: E402
    MetricsReport,
    ScoredSet,
    auprc,
    auroc,
    confusion_metrics,
    optimal_threshold,
    spearman,
)
from .models import (  # noqa: E402  # Core types; Exceptions
    ArgumentError,
    CapabilityError,
    ConfigError,
    Dataset,
    DataValidationError,
    FeatureKind,
    FeatureSchema,
    FeatureSpec,
    NumericError,
    Record,
    RigidityXAIError,
    SchemaMismatchError,
    TrainingError,
    UndefinedMetricError,
    UndefinedProportionError,
    UsageError,
)
from .reporting import emit_report, explain_record, explanation_to_dot  # noqa: E402
from .synth import (  # noqa: E402
    GroundTruth,
    GroundTruthModel,
    bayes_auroc,
    desk_scenario,
    generate_dataset,
    oracle_shapley,
)
from .validators import (  # noqa: E402
    ConfigValidator,
    GroundTruthValidator,
    SchemaValidator,
    validate_config_yaml,
)

__all__ = [
    # Models
    "FeatureKind",
    "FeatureSpec",
    "FeatureSchema",
    "Record",
    "Dataset",
    # Exceptions
    "RigidityXAIError",
    "ConfigError",
    "SchemaMismatchError",
    "DataValidationError",
    "ArgumentError",
    "CapabilityError",
    "NumericError",
    "UsageError",
    "UndefinedMetricError",
    "UndefinedProportionError",
    "TrainingError",
    # Data
    "load_dataset",
    "write_dataset",
    "split_dataset",
    "select_stage_features",
    # Synthetic ground truth
    "GroundTruthModel",
    "GroundTruth",
    "generate_dataset",
    "oracle_shapley",
    "bayes_auroc",
    "desk_scenario",
    # Differentiation core
    "ParamSet",
    "OptimizerState",
    "forward_loss",
    "backward",
    "adam_step",
    "finite_diff_check",
    "save_params",
    "load_params",
    # Graph model
    "AttentionVariant",
    "TrainingConfig",
    "GraphModel",
    "FeatureGraph",
    "Explanation",
    "build_feature_graph",
    "gatv2_attention",
    "dot_product_attention",
    "global_attention_pool",
    "predict",
    "train",
    "explain",
    "interaction_proportion",
    "top_k_edges",
    "aggregate_explanations",
    # Baselines
    "LogisticModel",
    "AttributionMethod",
    "AttributionResult",
    "train_logistic",
    "predict_logistic",
    "exact_shapley",
    "sampled_shapley",
    "permutation_importance",
    # Metrics
    "ScoredSet",
    "MetricsReport",
    "auroc",
    "auprc",
    "confusion_metrics",
    "optimal_threshold",
    "spearman",
    # Harness
    "ExperimentConfig",
    "ExperimentReport",
    "run_experiment",
    "emit_report",
    "explain_record",
    "explanation_to_dot",
    # Validators
    "SchemaValidator",
    "GroundTruthValidator",
    "ConfigValidator",
    "validate_config_yaml",
]
