"""Command-line interface for the rigidity graph XAI toolkit."""

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import yaml

from .baselines import save_logistic, train_logistic
from .data import align_to_schema, load_dataset, select_stage_features, split_dataset, write_dataset
from .graph import AttentionVariant, save_model, train
from .harness import ALGORITHMS, ExperimentConfig, ExperimentRunner, run_experiment
from .metrics import ScoredSet, confusion_metrics, optimal_threshold
from .models import (
    ArgumentError,
    ConfigError,
    Dataset,
    FeatureSchema,
    RigidityXAIError,
    SchemaMismatchError,
)
from .reporting import DEFAULT_TOP_EDGES, emit_report, explain_record, load_checkpoint
from .synth import TEMPLATES_DIR, bayes_auroc, generate_dataset, load_ground_truth
from .validators import validate_config_yaml, validate_ground_truth_dict, validate_schema_dict

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
EXIT_IO = 3


class CLI:
    """Main CLI class for the rigidity-xai toolkit."""

    def __init__(self):
        self.parser = self._create_parser()

    def _create_parser(self) -> argparse.ArgumentParser:
        """Create the main argument parser."""
        parser = argparse.ArgumentParser(
            description="Rigidity Graph XAI - staged graph-attention experiments and explanations",
            prog="rigidity-xai",
        )
        parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

        subparsers = parser.add_subparsers(dest="command", help="Available commands")

        # Synth command
        synth_parser = subparsers.add_parser("synth", help="Write a synthetic dataset")
        synth_parser.add_argument(
            "--config", default="desk", help="Ground-truth file, or 'desk' for the built-in one"
        )
        synth_parser.add_argument("--n-records", type=int, default=20000, help="Records to draw")
        synth_parser.add_argument("--seed", type=int, default=0, help="Sampling seed")
        synth_parser.add_argument("--out", default="synth_data", help="Output directory")
        synth_parser.add_argument(
            "--oracle", action="store_true", help="Also print the Bayes AUROC of the ground truth"
        )

        # Train command
        train_parser = subparsers.add_parser("train", help="Train one stage model")
        train_parser.add_argument("--config", required=True, help="Experiment config file")
        train_parser.add_argument(
            "--model-id", type=int, choices=[1, 2, 3, 4], default=4, help="Stage model"
        )
        train_parser.add_argument("--algorithm", choices=ALGORITHMS, default="gatv2")
        train_parser.add_argument("--seed", type=int, help="Seed (defaults to the first seed)")
        train_parser.add_argument("--out", help="Checkpoint directory")

        # Eval command
        eval_parser = subparsers.add_parser("eval", help="Evaluate a checkpoint on its test split")
        eval_parser.add_argument("--checkpoint", required=True, help="Checkpoint file")
        eval_parser.add_argument("--config", required=True, help="Experiment config file")
        eval_parser.add_argument("--seed", type=int, help="Split seed (defaults to the first seed)")
        eval_parser.add_argument("--out", help="Directory for metrics.yaml")

        # Explain command
        explain_parser = subparsers.add_parser("explain", help="Explain one record")
        explain_parser.add_argument("--checkpoint", required=True, help="Checkpoint file")
        explain_parser.add_argument("--config", help="Experiment config (explains a test record)")
        explain_parser.add_argument("--seed", type=int, help="Split seed with --config")
        explain_parser.add_argument("--dataset", help="Dataset file (instead of --config)")
        explain_parser.add_argument("--schema", help="Schema file for --dataset")
        explain_parser.add_argument("--record", type=int, default=0, help="Record index")
        explain_parser.add_argument(
            "--k", type=int, default=DEFAULT_TOP_EDGES, help="Edges kept in the DOT export"
        )
        explain_parser.add_argument("--exclude-self-loops", action="store_true")
        explain_parser.add_argument("--out", default="explanations", help="Output directory")

        # Experiment command
        experiment_parser = subparsers.add_parser("experiment", help="Run the experiment grid")
        experiment_parser.add_argument("--config", required=True, help="Experiment config file")
        experiment_parser.add_argument("--seed", type=int, help="Run a single seed")
        experiment_parser.add_argument("--out", help="Output directory (overrides output_dir)")

        # Init command
        init_parser = subparsers.add_parser("init", help="Write template config files")
        init_parser.add_argument("--out", default=".", help="Target directory")
        init_parser.add_argument("--force", action="store_true", help="Overwrite existing files")

        # Validate command
        validate_parser = subparsers.add_parser("validate", help="Validate a config file")
        validate_parser.add_argument("path", help="File to validate")
        validate_parser.add_argument(
            "--kind",
            choices=["experiment", "schema", "ground-truth"],
            default="experiment",
            help="File kind",
        )
        validate_parser.add_argument("--format", choices=["text", "json"], default="text")

        return parser

    def run(self, args: Optional[List[str]] = None) -> int:
        """Run the CLI with given arguments."""
        parsed_args = self.parser.parse_args(args)

        if not parsed_args.command:
            self.parser.print_help()
            return EXIT_CONFIG

        logging.basicConfig(
            level=logging.DEBUG if parsed_args.verbose else logging.WARNING,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )

        handlers = {
            "synth": self._synth,
            "train": self._train,
            "eval": self._eval,
            "explain": self._explain,
            "experiment": self._experiment,
            "init": self._init_project,
            "validate": self._validate,
        }
        try:
            return handlers[parsed_args.command](parsed_args)
        except OSError as e:
            print(f"Error: {e}")
            return EXIT_IO
        except ConfigError as e:
            print(f"Error: {e}")
            return EXIT_CONFIG
        except RigidityXAIError as e:
            print(f"Error: {type(e).__name__}: {e}")
            return EXIT_CONFIG

    # helpers

    def _load_config(self, path: str, seed: Optional[int]) -> Tuple[ExperimentConfig, int]:
        config = ExperimentConfig.from_yaml_file(path)
        return config, (config.seeds[0] if seed is None else seed)

    def _splits(self, config: ExperimentConfig, seed: int) -> Tuple[Dataset, Dataset, Dataset]:
        ds = ExperimentRunner(config).dataset_for_seed(seed)
        return split_dataset(
            ds, config.split.test_fraction, config.split.val_fraction_of_train, seed
        )

    @staticmethod
    def _matching(ds: Dataset, schema: FeatureSchema) -> Dataset:
        aligned = align_to_schema(ds, schema)
        if aligned.schema.schema_hash() != schema.schema_hash():
            raise SchemaMismatchError("dataset schema does not match the checkpoint schema")
        return aligned

    # commands

    def _synth(self, args) -> int:
        """Write dataset.csv, schema.yaml and ground_truth.yaml."""
        gt = load_ground_truth(args.config, Path.cwd())
        ds = generate_dataset(gt, args.n_records, args.seed)
        out = Path(args.out)
        write_dataset(ds, out / "dataset.csv")
        ds.schema.to_yaml_file(str(out / "schema.yaml"))
        gt.to_yaml_file(str(out / "ground_truth.yaml"))

        print(f"Wrote {len(ds)} records with {len(ds.schema)} features to {out}")
        print(f"  Positive rate: {ds.positive_rate:.4f}")
        if args.oracle:
            print(f"  Bayes AUROC: {bayes_auroc(gt, seed=args.seed):.4f}")
        return EXIT_OK

    def _train(self, args) -> int:
        config, seed = self._load_config(args.config, args.seed)
        splits = self._splits(config, seed)
        train_ds, val, _ = (select_stage_features(s, args.model_id) for s in splits)
        out = Path(args.out) if args.out else config.resolve(config.output_dir) / "checkpoints"
        stem = f"model{args.model_id}_{args.algorithm}_seed{seed}"

        print(f"Training {args.algorithm} on Model {args.model_id} features (seed {seed})")
        if args.algorithm == "logistic":
            model = train_logistic(
                train_ds, l2_lambda=config.logistic.l2_lambda, max_iters=config.logistic.max_iters
            )
            model.threshold = optimal_threshold(
                ScoredSet(model.predict_proba(val.values), val.labels)
            )
            path = save_logistic(model, out / f"{stem}.yaml")
        else:
            model = train(train_ds, val, config.training, AttentionVariant(args.algorithm), seed)
            print(f"  Best epoch: {model.best_epoch}")
            path = save_model(model, out / f"{stem}.npz")

        report = confusion_metrics(
            ScoredSet(model.predict_proba(val.values), val.labels), model.threshold
        )
        print(f"  Validation AUROC: {report.auroc:.4f}")
        print(f"  Threshold: {model.threshold:.6g}")
        print(f"Checkpoint: {path}")
        return EXIT_OK

    def _eval(self, args) -> int:
        model = load_checkpoint(args.checkpoint)
        config, seed = self._load_config(args.config, args.seed)
        _, _, test = self._splits(config, seed)
        test = self._matching(test, model.schema)

        report = confusion_metrics(
            ScoredSet(model.predict_proba(test.values), test.labels), model.threshold
        )
        data = {"checkpoint": str(args.checkpoint), "seed": seed, "metrics": report.to_dict()}
        print(yaml.safe_dump(data, sort_keys=False), end="")
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            with open(out / "metrics.yaml", "w", encoding="utf-8") as f:
                yaml.safe_dump(data, f, sort_keys=False)
        return EXIT_OK

    def _explain(self, args) -> int:
        background: Optional[Dataset] = None
        options = {}
        if args.dataset:
            if not args.schema:
                raise ArgumentError("--dataset requires --schema")
            ds = load_dataset(args.dataset, FeatureSchema.from_yaml_file(args.schema))
        elif args.config:
            config, seed = self._load_config(args.config, args.seed)
            background, _, ds = self._splits(config, seed)
            options = {"background_size": config.attribution.background_size, "seed": seed}
        else:
            raise ArgumentError("explain needs --config or --dataset/--schema")

        paths = explain_record(
            args.checkpoint,
            ds,
            args.record,
            args.out,
            k=args.k,
            exclude_self_loops=args.exclude_self_loops,
            background=background,
            **options,
        )
        for kind, path in paths.items():
            print(f"{kind}: {path}")
        return EXIT_OK

    def _experiment(self, args) -> int:
        config = ExperimentConfig.from_yaml_file(args.config)
        if args.seed is not None:
            config = config.with_seeds([args.seed])
        out = Path(args.out) if args.out else config.resolve(config.output_dir)

        report = run_experiment(config, checkpoint_dir=out / "checkpoints")
        paths = emit_report(report, out)

        total = len(report.cells)
        failed = len(report.failed_cells)
        print(f"Experiment finished: {total - failed}/{total} cells succeeded")
        for summary in report.summaries:
            auroc = summary.metrics["auroc"]
            shown = "n/a" if auroc["mean"] is None else f"{auroc['mean']:.4f} ± {auroc['sd']:.4f}"
            print(f"  Model {summary.model_id} {summary.algorithm}: test AUROC {shown}")
        for cell in report.failed_cells:
            print(f"  FAILED model {cell.model_id} {cell.algorithm} seed {cell.seed}: {cell.error}")
        print(f"Report: {paths['report']}")
        print(f"Tables: {paths['tables']}")
        return EXIT_PARTIAL if failed else EXIT_OK

    def _init_project(self, args) -> int:
        """Write template experiment and ground-truth files."""
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        targets = {
            "experiment.yaml": TEMPLATES_DIR / "experiment_template.yaml",
            "ground_truth.yaml": TEMPLATES_DIR / "desk_ground_truth.yaml",
            "schema.yaml": TEMPLATES_DIR / "table1_schema.yaml",
        }
        existing = [name for name in targets if (out / name).exists()]
        if existing and not args.force:
            print(f"Refusing to overwrite {', '.join(existing)} (use --force)")
            return EXIT_CONFIG
        for name, template in targets.items():
            shutil.copyfile(template, out / name)
            print(f"Created {out / name}")
        print("")
        print("Next steps:")
        print(f"1. Edit {out / 'experiment.yaml'} to choose stage models, algorithms and seeds")
        print(f"2. Check it with: rigidity-xai validate {out / 'experiment.yaml'}")
        print(f"3. Run it with: rigidity-xai experiment --config {out / 'experiment.yaml'}")
        return EXIT_OK

    def _validate(self, args) -> int:
        path = Path(args.path)
        if not path.is_file():
            print(f"Error: Path {path} does not exist")
            return EXIT_IO

        if args.kind == "experiment":
            result = validate_config_yaml(str(path))
        else:
            try:
                with open(path, "r", encoding="utf-8") as f:
                    data = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ConfigError(f"Failed to parse {path}: {e}") from e
            check = validate_schema_dict if args.kind == "schema" else validate_ground_truth_dict
            result = check(data)

        if args.format == "json":
            print(json.dumps({"file": str(path), **result}, indent=2))
        else:
            print(f"{'PASS' if result['valid'] else 'FAIL'} {path}")
            for error in result["errors"]:
                print(f"  Error: {error}")
            for warning in result["warnings"]:
                print(f"  Warning: {warning}")
        return EXIT_OK if result["valid"] else EXIT_CONFIG


def main():
    """Main CLI entry point."""
    cli = CLI()
    sys.exit(cli.run())


if __name__ == "__main__":
    main()
