"""Explanation exports, DOT graphs and experiment report files."""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from .baselines import (
    DEFAULT_D_MAX,
    AttributionResult,
    LogisticModel,
    background_sample,
    exact_shapley,
    load_logistic,
    sampled_shapley,
)
from .data import align_to_schema
from .graph import Explanation, GraphModel, explain, load_model, top_k_edges
from .models import ArgumentError, ConfigError, Dataset, SchemaMismatchError

logger = logging.getLogger(__name__)

DEFAULT_TOP_EDGES = 11
NODE_WIDTH_SCALE = 5.0
EDGE_WIDTH_SCALE = 20.0

Checkpoint = Union[GraphModel, LogisticModel]


def _percent(share: float) -> str:
    return f"{100.0 * share:.3f}%"


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def _quote(text: str) -> str:
    return '"' + _escape(text) + '"'


def explanation_to_dot(
    expl: Explanation,
    k: int = DEFAULT_TOP_EDGES,
    exclude_self_loops: bool = False,
    graph_name: str = "explanation",
) -> str:
    """Render an explanation as a DOT digraph.

    Every feature is a node labelled with its name and featimp percentage,
    with width proportional to featimp. Only the ``k`` strongest edges are
    drawn, labelled with their intimp percentage.
    """
    edges = top_k_edges(expl, k, exclude_self_loops=exclude_self_loops)
    lines = [
        f"digraph {graph_name} {{",
        "  graph [rankdir=LR, label="
        + _quote(f"predicted probability {_percent(expl.predicted_probability)}")
        + "];",
        "  node [shape=ellipse];",
    ]
    for idx, (name, share) in enumerate(zip(expl.names, expl.featimp)):
        # DOT line break between name and share
        label = '"' + _escape(name) + "\\n" + _percent(share) + '"'
        lines.append(f"  n{idx} [label={label}, width={NODE_WIDTH_SCALE * share:.4f}];")
    for edge in edges:
        lines.append(
            f"  n{edge.source} -> n{edge.destination} "
            f"[label={_quote(_percent(edge.intimp))}, "
            f"penwidth={1.0 + EDGE_WIDTH_SCALE * edge.intimp:.4f}];"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def _write_yaml(data: Dict[str, Any], path: Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(data, f, sort_keys=False, default_flow_style=None, width=100)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e
    return path


def _write_text(text: str, path: Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e
    return path


def write_explanation(
    expl: Explanation, path: Union[str, Path], metadata: Optional[Dict[str, Any]] = None
) -> Path:
    data = {"kind": "explanation", **expl.to_dict()}
    if metadata:
        data["metadata"] = metadata
    return _write_yaml(data, Path(path))


def read_explanation(path: Union[str, Path]) -> Explanation:
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict) or data.get("kind") != "explanation":
        raise ConfigError(f"{path}: not an explanation export")
    return Explanation.from_dict(data)


def write_attribution(
    result: AttributionResult,
    path: Union[str, Path],
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write an attribution in the layout used for explanation featimp."""
    data = {"kind": "attribution", **result.to_dict()}
    if metadata:
        data["metadata"] = metadata
    return _write_yaml(data, Path(path))


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Load a graph (``.npz``) or logistic (``.yaml``) checkpoint."""
    path = Path(path)
    if path.suffix == ".npz":
        return load_model(path)
    if path.suffix in (".yaml", ".yml"):
        return load_logistic(path)
    raise ConfigError(f"{path}: unknown checkpoint format (expected .npz or .yaml)")


def explain_record(
    checkpoint: Union[str, Path, Checkpoint],
    dataset: Dataset,
    record_index: int,
    out_dir: Union[str, Path],
    k: int = DEFAULT_TOP_EDGES,
    exclude_self_loops: bool = False,
    background: Optional[Dataset] = None,
    background_size: int = 100,
    seed: int = 0,
) -> Dict[str, Path]:
    """Explain one dataset record and write the export files.

    Graph checkpoints produce ``record_<i>.explanation.yaml`` and
    ``record_<i>.dot``; logistic checkpoints produce
    ``record_<i>.attribution.yaml`` with per-feature Shapley values over
    ``background_size`` seeded rows of ``background`` (the training split;
    ``dataset`` itself when omitted).

    Raises:
        SchemaMismatchError: the dataset does not match the checkpoint schema.
        ArgumentError: ``record_index`` is out of range.
    """
    model = checkpoint if isinstance(checkpoint, (GraphModel, LogisticModel)) else None
    if model is None:
        model = load_checkpoint(checkpoint)
    aligned = align_to_schema(dataset, model.schema)
    if aligned.schema.schema_hash() != model.schema.schema_hash():
        raise SchemaMismatchError(
            f"schema hash mismatch: checkpoint {model.schema.schema_hash()}, "
            f"data {aligned.schema.schema_hash()}"
        )
    if not 0 <= record_index < len(aligned):
        raise ArgumentError(f"record index {record_index} out of range for {len(aligned)} records")

    out_dir = Path(out_dir)
    record = aligned.record(record_index)
    stem = f"record_{record_index}"
    meta = {"record_index": record_index, "label": record.label}

    if isinstance(model, LogisticModel):
        if background is None:
            logger.warning(
                "no background dataset; sampling the Shapley background from %d explained records",
                len(aligned),
            )
            source = aligned
        else:
            source = align_to_schema(background, model.schema)
            if source.schema.schema_hash() != model.schema.schema_hash():
                raise SchemaMismatchError("background schema does not match the checkpoint")
        rows = background_sample(source, background_size, seed)
        x = record.values
        if len(x) <= DEFAULT_D_MAX:
            result = exact_shapley(model.predict_proba, rows, x)
        else:
            result = sampled_shapley(model.predict_proba, rows, x, 2048, seed=seed)
        result.feature_names = list(model.schema.names)
        meta["predicted_probability"] = float(model.predict_proba([x])[0])
        path = write_attribution(result, out_dir / f"{stem}.attribution.yaml", meta)
        return {"attribution": path}

    expl = explain(record, model)
    available = expl.d * expl.d - (expl.d if exclude_self_loops else 0)
    if k > available:
        logger.warning("k=%d exceeds the %d available edges; exporting all of them", k, available)
        k = available
    meta["top_k"] = k
    return {
        "explanation": write_explanation(expl, out_dir / f"{stem}.explanation.yaml", meta),
        "dot": _write_text(
            explanation_to_dot(expl, k, exclude_self_loops), out_dir / f"{stem}.dot"
        ),
    }


# Experiment reports


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def _fmt_stat(stat: Dict[str, Optional[float]]) -> str:
    if stat.get("mean") is None:
        return "n/a"
    return f"{stat['mean']:.4f} ± {stat['sd']:.4f}"


def _table(header: List[str], rows: List[List[str]]) -> List[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines.extend("| " + " | ".join(row) + " |" for row in rows)
    return lines


def render_tables(report: Dict[str, Any]) -> str:
    """Markdown tables derived only from the machine-readable report."""
    content = ["# Incremental Stage Experiment", ""]
    provenance = report["provenance"]
    content.append(f"**Config hash:** `{provenance['config_hash']}`")
    content.append(f"**Seeds:** {', '.join(str(s) for s in provenance['seeds'])}")
    content.append(
        f"**Shapley scale:** {report['notes']['shapley_scale']}; "
        f"alignment target ρ ≥ {report['notes']['alignment_target']} "
        f"({report['notes']['alignment_target_source']})"
    )
    content.append("")

    summaries = report["summaries"]
    content.append("## Test Metrics by Stage Model")
    content.append("")
    metric_names = ["accuracy", "auroc", "auprc", "f1", "specificity", "sensitivity"]
    rows = [
        [f"Model {s['model_id']}", s["algorithm"], str(len(s["seeds"]))]
        + [_fmt_stat(s["metrics"][m]) for m in metric_names]
        for s in summaries
    ]
    content.extend(_table(["Features", "Algorithm", "Seeds"] + metric_names, rows))
    content.append("")

    content.append("## Top Contributing Features")
    content.append("")
    for s in summaries:
        content.append(f"### Model {s['model_id']} / {s['algorithm']}")
        content.append("")
        content.append(f"Spearman ρ vs logistic Shapley: {_fmt_stat(s['alignment_spearman'])}")
        content.append("")
        header = ["Rank", "Feature", "Mean importance", "SD"]
        rows = [
            [str(rank), item["feature"], _fmt(item["mean"]), _fmt(item["sd"])]
            for rank, item in enumerate(s["top_features"], start=1)
        ]
        if all("outward_edge" in item for item in s["top_features"]):
            header.append("Average Outward Edge Attention")
            for row, item in zip(rows, s["top_features"]):
                row.append(_fmt_stat(item["outward_edge"]))
        content.extend(_table(header, rows))
        content.append("")

    graph_summaries = [s for s in summaries if "top_pairs" in s]
    if graph_summaries:
        content.append("## Top Contributing Feature Interactions")
        content.append("")
    for s in graph_summaries:
        content.append(f"### Model {s['model_id']} / {s['algorithm']}")
        content.append("")
        rows = [
            [str(rank), " / ".join(p["pair"]), _fmt(p["total"]), p["dominant"]]
            for rank, p in enumerate(s["top_pairs"], start=1)
        ]
        content.extend(_table(["Rank", "Pair", "Mean intimp (both directions)", "Dominant"], rows))
        content.append("")
        rows = [
            [str(rank), e["source"], e["destination"], _fmt(e["intimp"])]
            for rank, e in enumerate(s["top_directed"], start=1)
        ]
        content.extend(_table(["Rank", "Source", "Destination", "Mean intimp"], rows))
        content.append("")

    oracle = report.get("oracle")
    if oracle:
        content.append("## Oracle")
        content.append("")
        content.append(f"- **Bayes AUROC:** {_fmt(oracle['bayes_auroc'])}")
        for model_id, value in oracle["stage_bayes_auroc"].items():
            content.append(f"- **Model {model_id} Bayes AUROC:** {_fmt(value)}")
        pairs = ", ".join(" / ".join(p) for p in oracle["planted_interactions"])
        content.append(f"- **Planted interactions:** {pairs or 'none'}")
        content.append("")

    if report["failures"]:
        content.append("## Failed Cells")
        content.append("")
        rows = [
            [f"Model {f['model_id']}", f["algorithm"], str(f["seed"]), f["error"]]
            for f in report["failures"]
        ]
        content.extend(_table(["Features", "Algorithm", "Seed", "Error"], rows))
        content.append("")

    return "\n".join(content)


def emit_report(report: Any, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write ``report.yaml`` and ``tables.md`` into ``out_dir``.

    ``report`` is an ExperimentReport or its dictionary form.
    """
    data = report if isinstance(report, dict) else report.to_dict()
    out_dir = Path(out_dir)
    paths = {
        "report": _write_yaml(data, out_dir / "report.yaml"),
        "tables": _write_text(render_tables(data), out_dir / "tables.md"),
    }
    logger.info("Report written to %s", out_dir)
    return paths
