"""Incremental stage experiment grid: stage models x algorithms x seeds."""

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from . import __version__
from .baselines import (
    LogisticModel,
    background_sample,
    save_logistic,
    shapley_importance,
    train_logistic,
)
from .data import load_dataset, select_stage_features, split_dataset
from .graph import (
    AttentionVariant,
    GraphModel,
    TrainingConfig,
    aggregate_explanations,
    collapse_unordered_pairs,
    directed_pairs,
    explain_batch,
    save_model,
    train,
)
from .metrics import MetricsReport, ScoredSet, confusion_metrics, optimal_threshold, spearman
from .models import ConfigError, Dataset, FeatureSchema, TrainingError, UndefinedMetricError
from .synth import (
    GroundTruthModel,
    bayes_auroc,
    generate_dataset,
    load_ground_truth,
    planted_interaction_ranking,
    stage_bayes_auroc,
)
from .validators import resolve_path, validate_config_dict

logger = logging.getLogger(__name__)

ALGORITHMS = ("gatv2", "dot_product", "logistic")
METRIC_NAMES = ("accuracy", "auroc", "auprc", "f1", "specificity", "sensitivity")
TOP_K = 10
ALIGNMENT_TARGET = 0.6
ORACLE_MC = 100_000
STAGE_ORACLE_MC = 20_000


@dataclass
class DataSettings:
    ground_truth: Optional[str] = None
    n_records: int = 20000
    dataset: Optional[str] = None
    schema: Optional[str] = None

    @property
    def synthetic(self) -> bool:
        return self.ground_truth is not None


@dataclass
class SplitSettings:
    test_fraction: float = 0.2
    val_fraction_of_train: float = 0.125


@dataclass
class LogisticSettings:
    l2_lambda: float = 1e-3
    max_iters: int = 1000


@dataclass
class AttributionSettings:
    background_size: int = 100
    n_coalitions: int = 2048
    explain_records: int = 500
    shapley_records: int = 50
    d_max: int = 12


@dataclass
class ExperimentConfig:
    """Parsed and validated experiment configuration."""

    data: DataSettings
    model_ids: List[int]
    algorithms: List[str]
    seeds: List[int]
    split: SplitSettings = field(default_factory=SplitSettings)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    logistic: LogisticSettings = field(default_factory=LogisticSettings)
    attribution: AttributionSettings = field(default_factory=AttributionSettings)
    output_dir: str = "results"
    base_dir: Optional[Path] = None

    @classmethod
    def from_dict(
        cls, data: Dict[str, Any], base_dir: Optional[Path] = None, check_files: bool = True
    ) -> "ExperimentConfig":
        """Validate ``data`` and build a config.

        Raises:
            ConfigError: the document fails validation; carries every error.
        """
        report = validate_config_dict(data, base_dir=base_dir, check_files=check_files)
        if not report["valid"]:
            raise ConfigError("Invalid experiment config", report["errors"])
        for warning in report["warnings"]:
            logger.warning("config: %s", warning)
        return cls(
            data=DataSettings(**data["data"]),
            model_ids=sorted(data["model_ids"]),
            algorithms=sorted(data["algorithms"], key=ALGORITHMS.index),
            seeds=list(data["seeds"]),
            split=SplitSettings(**data.get("split", {})),
            training=TrainingConfig.from_dict(data.get("training")),
            logistic=LogisticSettings(**data.get("logistic", {})),
            attribution=AttributionSettings(**data.get("attribution", {})),
            output_dir=data.get("output_dir", "results"),
            base_dir=Path(base_dir) if base_dir is not None else None,
        )

    @classmethod
    def from_yaml_file(cls, yaml_path: Union[str, Path]) -> "ExperimentConfig":
        try:
            with open(yaml_path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f)
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"Failed to load config {yaml_path}: {e}") from e
        return cls.from_dict(data, base_dir=Path(yaml_path).parent)

    def to_dict(self) -> Dict[str, Any]:
        data = {key: value for key, value in asdict(self.data).items() if value is not None}
        if self.data.dataset is not None:
            data.pop("n_records", None)
        return {
            "data": data,
            "model_ids": list(self.model_ids),
            "algorithms": list(self.algorithms),
            "seeds": list(self.seeds),
            "split": asdict(self.split),
            "training": self.training.to_dict(),
            "logistic": asdict(self.logistic),
            "attribution": asdict(self.attribution),
            "output_dir": self.output_dir,
        }

    def config_hash(self) -> str:
        payload = yaml.safe_dump(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def with_seeds(self, seeds: Sequence[int]) -> "ExperimentConfig":
        copy = ExperimentConfig(**{f: getattr(self, f) for f in self.__dataclass_fields__})
        copy.seeds = list(seeds)
        return copy

    def resolve(self, value: str) -> Path:
        return resolve_path(value, self.base_dir)


@dataclass
class CellResult:
    """Outcome of one (model_id, algorithm, seed) grid cell."""

    model_id: int
    algorithm: str
    seed: int
    status: str = "ok"
    error: Optional[str] = None
    feature_names: List[str] = field(default_factory=list)
    metrics: Optional[MetricsReport] = None
    importance: Optional[List[float]] = None
    importance_method: Optional[str] = None
    mean_intimp: Optional[List[List[float]]] = None
    mean_outward_edge: Optional[List[float]] = None
    alignment: Optional[float] = None
    best_epoch: Optional[int] = None
    checkpoint: Optional[str] = None

    @property
    def key(self) -> Tuple[int, int, int]:
        return (self.model_id, ALGORITHMS.index(self.algorithm), self.seed)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "model_id": self.model_id,
            "algorithm": self.algorithm,
            "seed": self.seed,
            "status": self.status,
        }
        if not self.ok:
            data["error"] = self.error
            return data
        data["metrics"] = self.metrics.to_dict()
        data["feature_names"] = list(self.feature_names)
        data["importance"] = {
            "method": self.importance_method,
            "values": {n: float(v) for n, v in zip(self.feature_names, self.importance)},
        }
        data["alignment_spearman"] = self.alignment
        if self.mean_outward_edge is not None:
            data["mean_outward_edge"] = {
                n: float(v) for n, v in zip(self.feature_names, self.mean_outward_edge)
            }
        if self.mean_intimp is not None:
            data["mean_intimp"] = self.mean_intimp
        if self.best_epoch is not None:
            data["best_epoch"] = self.best_epoch
        if self.checkpoint is not None:
            data["checkpoint"] = self.checkpoint
        return data


def _mean_sd(values: Sequence[float]) -> Dict[str, Optional[float]]:
    present = [v for v in values if v is not None]
    if not present:
        return {"mean": None, "sd": None, "n": 0}
    arr = np.asarray(present, dtype=np.float64)
    return {"mean": float(arr.mean()), "sd": float(arr.std()), "n": len(present)}


def _ranked(names: Sequence[str], values: np.ndarray, k: int) -> List[int]:
    """Indices of the ``k`` largest values, ties by schema position."""
    order = np.lexsort((np.arange(len(names)), -np.asarray(values)))
    return [int(i) for i in order[:k]]


@dataclass
class CellSummary:
    """Aggregate of one (model_id, algorithm) over the successful seeds."""

    model_id: int
    algorithm: str
    seeds: List[int]
    metrics: Dict[str, Dict[str, Optional[float]]]
    top_features: List[Dict[str, Any]]
    alignment: Dict[str, Optional[float]]
    top_pairs: Optional[List[Dict[str, Any]]] = None
    top_directed: Optional[List[Dict[str, Any]]] = None

    @classmethod
    def from_cells(cls, cells: Sequence[CellResult]) -> "CellSummary":
        first = cells[0]
        names = first.feature_names
        metrics = {
            name: _mean_sd([getattr(c.metrics, name) for c in cells]) for name in METRIC_NAMES
        }
        importance = np.array([c.importance for c in cells])
        mean_imp, sd_imp = importance.mean(axis=0), importance.std(axis=0)
        top_features = [
            {"feature": names[i], "mean": float(mean_imp[i]), "sd": float(sd_imp[i])}
            for i in _ranked(names, mean_imp, min(TOP_K, len(names)))
        ]
        if first.mean_outward_edge is not None:
            outward = np.array([c.mean_outward_edge for c in cells])
            for item in top_features:
                j = names.index(item["feature"])
                item["outward_edge"] = {
                    "mean": float(outward[:, j].mean()),
                    "sd": float(outward[:, j].std()),
                }
        summary = cls(
            model_id=first.model_id,
            algorithm=first.algorithm,
            seeds=[c.seed for c in cells],
            metrics=metrics,
            top_features=top_features,
            alignment=_mean_sd([c.alignment for c in cells]),
        )
        if first.mean_intimp is not None:
            mean_intimp = np.mean([np.asarray(c.mean_intimp) for c in cells], axis=0)
            pairs = collapse_unordered_pairs(mean_intimp)[:TOP_K]
            summary.top_pairs = [
                {
                    "pair": [names[p.first], names[p.second]],
                    "total": p.total,
                    "forward": p.forward,
                    "backward": p.backward,
                    "dominant": "{} -> {}".format(*(names[i] for i in p.dominant_direction)),
                }
                for p in pairs
            ]
            summary.top_directed = [
                {"source": names[e.source], "destination": names[e.destination], "intimp": e.intimp}
                for e in directed_pairs(mean_intimp)[:TOP_K]
            ]
        return summary

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "model_id": self.model_id,
            "algorithm": self.algorithm,
            "seeds": list(self.seeds),
            "metrics": self.metrics,
            "top_features": self.top_features,
            "alignment_spearman": self.alignment,
        }
        if self.top_pairs is not None:
            data["top_pairs"] = self.top_pairs
            data["top_directed"] = self.top_directed
        return data


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    cells: List[CellResult]
    summaries: List[CellSummary]
    provenance: Dict[str, Any]
    oracle: Optional[Dict[str, Any]] = None

    @property
    def failed_cells(self) -> List[CellResult]:
        return [c for c in self.cells if not c.ok]

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "provenance": self.provenance,
            "config": self.config.to_dict(),
            "notes": {
                "shapley_scale": "probability",
                "importance": (
                    "graph models: mean featimp over test records; "
                    "logistic: mean |exact Shapley| over test records"
                ),
                "alignment_target": ALIGNMENT_TARGET,
                "alignment_target_source": "acceptance target chosen for this harness",
            },
            "cells": [c.to_dict() for c in self.cells],
            "summaries": [s.to_dict() for s in self.summaries],
            "failures": [
                {"model_id": c.model_id, "algorithm": c.algorithm, "seed": c.seed, "error": c.error}
                for c in self.failed_cells
            ],
        }
        if self.oracle is not None:
            data["oracle"] = self.oracle
        return data


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _head(ds: Dataset, n: int) -> np.ndarray:
    return np.asarray(ds.values[: min(n, len(ds))])


class ExperimentRunner:
    """Runs every grid cell with failure isolation."""

    def __init__(self, config: ExperimentConfig, checkpoint_dir: Optional[Path] = None):
        self.config = config
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self._ground_truth: Optional[GroundTruthModel] = None
        self._loaded: Optional[Dataset] = None

    def ground_truth(self) -> Optional[GroundTruthModel]:
        data = self.config.data
        if data.synthetic and self._ground_truth is None:
            self._ground_truth = load_ground_truth(data.ground_truth, self.config.base_dir)
        return self._ground_truth

    def dataset_for_seed(self, seed: int) -> Dataset:
        data = self.config.data
        if data.synthetic:
            return generate_dataset(self.ground_truth(), data.n_records, seed)
        if self._loaded is None:
            schema = FeatureSchema.from_yaml_file(str(self.config.resolve(data.schema)))
            self._loaded = load_dataset(self.config.resolve(data.dataset), schema)
        return self._loaded

    def run(self) -> ExperimentReport:
        cfg = self.config
        started = _utc_now()
        cells: List[CellResult] = []
        for seed in cfg.seeds:
            try:
                splits = split_dataset(
                    self.dataset_for_seed(seed),
                    cfg.split.test_fraction,
                    cfg.split.val_fraction_of_train,
                    seed,
                )
            except Exception as e:
                self.logger.error("seed %d: data preparation failed: %s", seed, e)
                cells.extend(
                    CellResult(m, a, seed, status="failed", error=f"data: {e}")
                    for m in cfg.model_ids
                    for a in cfg.algorithms
                )
                continue
            for model_id in cfg.model_ids:
                stage_splits = tuple(select_stage_features(s, model_id) for s in splits)
                cells.extend(self._run_stage(model_id, seed, *stage_splits))

        cells.sort(key=lambda c: c.key)
        summaries = []
        for model_id in cfg.model_ids:
            for algorithm in cfg.algorithms:
                ok = [
                    c for c in cells if c.ok and (c.model_id, c.algorithm) == (model_id, algorithm)
                ]
                if ok:
                    summaries.append(CellSummary.from_cells(ok))
        provenance = {
            "package_version": __version__,
            "config_hash": cfg.config_hash(),
            "seeds": list(cfg.seeds),
            "started_at": started,
            "finished_at": _utc_now(),
        }
        return ExperimentReport(
            config=cfg,
            cells=cells,
            summaries=summaries,
            provenance=provenance,
            oracle=self._oracle(),
        )

    def _oracle(self) -> Optional[Dict[str, Any]]:
        gt = self.ground_truth()
        if gt is None:
            return None
        return {
            "bayes_auroc": bayes_auroc(gt, n_mc=ORACLE_MC, seed=0),
            "stage_bayes_auroc": {
                m: stage_bayes_auroc(gt, m, n_mc=STAGE_ORACLE_MC, seed=0)
                for m in self.config.model_ids
            },
            "planted_interactions": [list(p) for p in planted_interaction_ranking(gt)],
        }

    def _run_stage(
        self, model_id: int, seed: int, train_ds: Dataset, val: Dataset, test: Dataset
    ) -> List[CellResult]:
        cfg = self.config
        names = train_ds.schema.names
        reference: Optional[LogisticModel] = None
        reference_error: Optional[str] = None
        shap_importance: Optional[np.ndarray] = None
        try:
            reference = train_logistic(
                train_ds, l2_lambda=cfg.logistic.l2_lambda, max_iters=cfg.logistic.max_iters
            )
            shap_importance = shapley_importance(
                reference.predict_proba,
                background_sample(train_ds, cfg.attribution.background_size, seed),
                _head(test, cfg.attribution.shapley_records),
                d_max=cfg.attribution.d_max,
                n_coalitions=cfg.attribution.n_coalitions,
                seed=seed,
            ).values
        except Exception as e:
            reference_error = str(e)
            self.logger.error("model %d seed %d: logistic reference failed: %s", model_id, seed, e)

        results = []
        for algorithm in cfg.algorithms:
            self.logger.info(
                "cell model=%d algorithm=%s seed=%d started", model_id, algorithm, seed
            )
            cell = CellResult(model_id, algorithm, seed, feature_names=list(names))
            try:
                if algorithm == "logistic":
                    if reference is None:
                        raise TrainingError(f"logistic reference unavailable: {reference_error}")
                    self._fill_logistic(cell, reference, shap_importance, val, test)
                else:
                    self._fill_graph(cell, train_ds, val, test, shap_importance)
            except Exception as e:
                cell.status, cell.error = "failed", f"{type(e).__name__}: {e}"
                self.logger.error(
                    "cell model=%d algorithm=%s seed=%d failed: %s", model_id, algorithm, seed, e
                )
            else:
                self.logger.info(
                    "cell model=%d algorithm=%s seed=%d finished (test AUROC %s)",
                    model_id,
                    algorithm,
                    seed,
                    cell.metrics.auroc,
                )
            results.append(cell)
        return results

    def _checkpoint_path(self, cell: CellResult, suffix: str) -> Optional[Path]:
        if self.checkpoint_dir is None:
            return None
        name = f"model{cell.model_id}_{cell.algorithm}_seed{cell.seed}{suffix}"
        return self.checkpoint_dir / name

    def _fill_logistic(
        self,
        cell: CellResult,
        model: LogisticModel,
        shap_importance: Optional[np.ndarray],
        val: Dataset,
        test: Dataset,
    ) -> None:
        if len(val) and val.labels.min() != val.labels.max():
            model.threshold = optimal_threshold(
                ScoredSet(model.predict_proba(val.values), val.labels)
            )
        cell.metrics = confusion_metrics(
            ScoredSet(model.predict_proba(test.values), test.labels), model.threshold
        )
        cell.importance = [float(v) for v in shap_importance]
        cell.importance_method = "mean_abs_shapley"
        # the logistic importance is the Shapley reference itself
        cell.alignment = None
        path = self._checkpoint_path(cell, ".yaml")
        if path is not None:
            cell.checkpoint = str(save_logistic(model, path))

    def _fill_graph(
        self,
        cell: CellResult,
        train_ds: Dataset,
        val: Dataset,
        test: Dataset,
        shap_importance: Optional[np.ndarray],
    ) -> None:
        cfg = self.config
        model: GraphModel = train(
            train_ds, val, cfg.training, AttentionVariant(cell.algorithm), cell.seed
        )
        cell.best_epoch = model.best_epoch
        cell.metrics = confusion_metrics(
            ScoredSet(model.predict_proba(test.values), test.labels), model.threshold
        )
        explanations = explain_batch(_head(test, cfg.attribution.explain_records), model)
        summary = aggregate_explanations(explanations)
        cell.importance = [float(v) for v in summary.mean_node_importance]
        cell.importance_method = "mean_featimp"
        cell.mean_intimp = [[float(v) for v in row] for row in summary.mean_intimp]
        cell.mean_outward_edge = [float(v) for v in summary.mean_outward_edge]
        if shap_importance is not None:
            subset = explanations[: min(cfg.attribution.shapley_records, len(explanations))]
            aligned = aggregate_explanations(subset).mean_node_importance
            cell.alignment = self._alignment(aligned, shap_importance)
        path = self._checkpoint_path(cell, ".npz")
        if path is not None:
            cell.checkpoint = str(save_model(model, path))

    @staticmethod
    def _alignment(importance: np.ndarray, shapley: np.ndarray) -> Optional[float]:
        if len(importance) < 3:
            return None
        try:
            return spearman(importance, shapley)
        except UndefinedMetricError:
            return None


def run_experiment(
    config: ExperimentConfig, checkpoint_dir: Optional[Path] = None
) -> ExperimentReport:
    """Run the full grid; failed cells are recorded, never raised."""
    return ExperimentRunner(config, checkpoint_dir=checkpoint_dir).run()
