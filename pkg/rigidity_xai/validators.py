"""Validation utilities for schema, ground-truth and experiment files."""

import json
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from jsonschema import Draft7Validator

SCHEMA_DIR = Path(__file__).parent / "schemas"


@lru_cache(maxsize=None)
def _load_json_schema(name: str) -> Draft7Validator:
    with open(SCHEMA_DIR / f"{name}.schema.json", "r", encoding="utf-8") as f:
        schema = json.load(f)
    Draft7Validator.check_schema(schema)
    return Draft7Validator(schema)


def _schema_errors(name: str, data: Any) -> List[str]:
    validator = _load_json_schema(name)
    errors = []
    for error in sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path)):
        location = ".".join(str(p) for p in error.absolute_path) or "<root>"
        errors.append(f"{location}: {error.message}")
    return errors


class _ReportingValidator:
    """Shared error/warning bookkeeping."""

    def __init__(self):
        self.errors: List[str] = []
        self.warnings: List[str] = []

    def _reset(self) -> None:
        self.errors.clear()
        self.warnings.clear()

    def get_validation_report(self) -> Dict[str, Any]:
        """Get detailed validation report."""
        return {
            "valid": len(self.errors) == 0,
            "errors": self.errors.copy(),
            "warnings": self.warnings.copy(),
            "error_count": len(self.errors),
            "warning_count": len(self.warnings),
        }


class SchemaValidator(_ReportingValidator):
    """Validates feature schema documents."""

    def validate(self, data: Any) -> bool:
        self._reset()
        self.errors.extend(_schema_errors("feature_schema", data))
        if self.errors:
            return False

        names = [item["name"] for item in data["features"]]
        seen = set()
        for name in names:
            if name in seen:
                self.errors.append(f"features: duplicate feature name '{name}'")
            seen.add(name)
        if data["label_name"] in seen:
            self.errors.append(f"label_name '{data['label_name']}' collides with a feature name")
        if not names:
            self.warnings.append("features: schema declares no features")
        return len(self.errors) == 0


class GroundTruthValidator(_ReportingValidator):
    """Validates synthetic ground-truth documents."""

    def validate(self, data: Any) -> bool:
        self._reset()
        self.errors.extend(_schema_errors("ground_truth", data))
        if self.errors:
            return False

        names = [item["name"] for item in data["features"]]
        if len(set(names)) != len(names):
            self.errors.append("features: feature names must be unique")
        for item in data["features"]:
            dist = item["distribution"]
            if dist["type"] == "uniform" and not dist["lo"] < dist["hi"]:
                self.errors.append(f"features.{item['name']}: uniform requires lo < hi")

        pairs = set()
        for idx, interaction in enumerate(data.get("interactions", [])):
            a, b = interaction["pair"]
            if a == b:
                self.errors.append(f"interactions.{idx}: pair must reference distinct features")
            for name in (a, b):
                if name not in names:
                    self.errors.append(f"interactions.{idx}: unknown feature '{name}'")
            key = frozenset((a, b))
            if key in pairs:
                self.errors.append(f"interactions.{idx}: duplicate pair {a}/{b}")
            pairs.add(key)

        if len(names) > 16:
            self.warnings.append("more than 16 features: exact Shapley oracle will be unavailable")
        return len(self.errors) == 0


class ConfigValidator(_ReportingValidator):
    """Validates experiment configuration documents."""

    def validate(
        self, data: Any, base_dir: Optional[Path] = None, check_files: bool = True
    ) -> bool:
        """Validate an experiment config.

        Args:
            data: Parsed config document.
            base_dir: Directory relative paths are resolved against.
            check_files: Whether referenced files must exist.

        Returns:
            True if valid, False otherwise
        """
        self._reset()
        self.errors.extend(_schema_errors("experiment", data))
        if self.errors:
            return False

        self._validate_data(data["data"], base_dir, check_files)
        self._validate_training(data.get("training", {}))
        self._validate_attribution(data.get("attribution", {}), data["algorithms"])
        return len(self.errors) == 0

    def _validate_data(self, data: Dict[str, Any], base_dir: Optional[Path], check_files: bool):
        if "ground_truth" in data and "n_records" not in data:
            self.warnings.append("data.n_records not set, using the default")
        if not check_files:
            return
        for key in ("ground_truth", "dataset", "schema"):
            if key not in data or (key == "ground_truth" and data[key] == "desk"):
                continue
            path = resolve_path(data[key], base_dir)
            if not path.exists():
                self.errors.append(f"data.{key}: file not found: {path}")

    def _validate_training(self, training: Dict[str, Any]) -> None:
        head_count = training.get("head_count")
        if head_count is not None and 64 % head_count != 0:
            self.errors.append(f"training.head_count: {head_count} does not divide 64")
        if training.get("max_epochs", 50) < training.get("patience", 5):
            self.warnings.append("training.patience exceeds max_epochs; early stopping never fires")

    def _validate_attribution(self, attribution: Dict[str, Any], algorithms: List[str]) -> None:
        n_coalitions = attribution.get("n_coalitions")
        d_max = attribution.get("d_max", 12)
        if n_coalitions is not None and n_coalitions < 2 * d_max + 2:
            self.warnings.append(
                f"attribution.n_coalitions {n_coalitions} is below 2*d_max+2; "
                "sampled Shapley will reject wide feature sets"
            )
        if attribution and algorithms == ["logistic"] and "explain_records" in attribution:
            self.warnings.append("attribution.explain_records is unused without graph algorithms")


def resolve_path(value: str, base_dir: Optional[Path]) -> Path:
    path = Path(value)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    return path


def _failed_report(message: str) -> Dict[str, Any]:
    return {
        "valid": False,
        "errors": [message],
        "warnings": [],
        "error_count": 1,
        "warning_count": 0,
    }


def validate_schema_dict(data: Any) -> Dict[str, Any]:
    """Validate a feature schema document.

    Returns:
        Validation report dictionary
    """
    validator = SchemaValidator()
    validator.validate(data)
    return validator.get_validation_report()


def validate_ground_truth_dict(data: Any) -> Dict[str, Any]:
    """Validate a ground-truth document.

    Returns:
        Validation report dictionary
    """
    validator = GroundTruthValidator()
    validator.validate(data)
    return validator.get_validation_report()


def validate_config_dict(
    data: Any, base_dir: Optional[Path] = None, check_files: bool = True
) -> Dict[str, Any]:
    """Validate an experiment config document.

    Returns:
        Validation report dictionary
    """
    validator = ConfigValidator()
    validator.validate(data, base_dir=base_dir, check_files=check_files)
    return validator.get_validation_report()


def validate_config_yaml(yaml_path: str) -> Dict[str, Any]:
    """Validate an experiment config file.

    Args:
        yaml_path: Path to the experiment YAML file

    Returns:
        Validation report dictionary
    """
    try:
        with open(yaml_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        return _failed_report(f"Failed to load config: {e}")
    return validate_config_dict(data, base_dir=Path(yaml_path).parent)
