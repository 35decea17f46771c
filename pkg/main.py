"""
Command-line entry point for the GRID label-noise-robust learning project.

Verbs:
    generate-data   generate, split and corrupt a dataset and write it to disk
    train           run one experiment
    sweep           one experiment per value of a configuration axis
    evaluate        retrieval NDCG of a stored checkpoint
    emit-plot-data  per-figure data tables (and optionally an HTML report)
    count-params    trainable parameter accounting of the configured model

Configuration precedence: built-in defaults < --config YAML file < flags.
Exit status is 0 on success and 1 on any rejected input or failed run.
"""

import argparse
import logging
import os
import sys
from dataclasses import fields
from typing import Any, Dict, List, Optional

# Ensure project root is in path for imports
PROJECT_ROOT = os.path.dirname(os.path.abspath(__file__))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

import pandas as pd

from src.core.experiment import (
    build_datasets,
    data_shapes,
    emit_plot_data,
    evaluate_checkpoint,
    run_experiment,
    run_sweep,
    save_splits,
)
from src.core.grid_model import GridModel, count_parameters
from src.utils.config import (
    LOG_LEVEL,
    MODES,
    OPTIMIZERS,
    SCENARIOS,
    SPLIT_PRESETS,
    SWEEP_AXES,
    ExperimentConfig,
    configure_logging,
)
from src.utils.exceptions import ConfigError, GridError

logger = logging.getLogger("grid")

# (flag type, help) for every ExperimentConfig field exposed as a flag
CONFIG_FLAGS: Dict[str, Dict[str, Any]] = {
    "scenario": {"choices": SCENARIOS, "help": "annotation scenario"},
    "mode": {"choices": MODES, "help": "update strategy"},
    "lambda_percent": {"type": int, "help": "share k of each batch routed to generative reasoning"},
    "slnir": {"type": float, "help": "synthetic label noise injection ratio"},
    "epochs": {"type": int, "help": "training epochs"},
    "batch_size": {"type": int, "help": "mini-batch size"},
    "learning_rate": {"type": float, "help": "optimizer step size"},
    "optimizer": {"choices": OPTIMIZERS, "help": "optimizer"},
    "latent_dim": {"type": int, "help": "VAE latent size"},
    "descriptor_dim": {"type": int, "help": "backbone output width"},
    "backbone_hidden": {"type": int, "nargs": "+", "help": "backbone hidden widths"},
    "vae_hidden": {"type": int, "help": "VAE encoder hidden width"},
    "n_samples": {"type": int, "help": "generated samples before splitting"},
    "n_classes": {"type": int, "help": "number of classes"},
    "feature_dim": {"type": int, "help": "scene feature length / pixel channels"},
    "image_size": {"type": int, "help": "pixel image height and width"},
    "split_preset": {"choices": tuple(SPLIT_PRESETS), "help": "train/val/test ratios"},
    "ndcg_k": {"type": int, "help": "retrieval depth"},
    "n_queries": {"type": int, "help": "training queries for the final test NDCG"},
    "seed": {"type": int, "help": "master seed"},
    "output_dir": {"help": "directory receiving the run's files"},
}


class Application:
    """
    Main application class dispatching the command-line verbs.
    """

    def __init__(self, args: argparse.Namespace) -> None:
        """
        Initialize the application.

        Args:
            args: Parsed command-line arguments.
        """
        self.args = args

    def build_config(self) -> ExperimentConfig:
        """
        Defaults, then the YAML file, then explicit flags.

        Raises:
            ConfigError: With field-level messages if the result is invalid.
        """
        base = ExperimentConfig.from_yaml(self.args.config) if self.args.config else ExperimentConfig()
        names = {f.name for f in fields(ExperimentConfig)}
        overrides = {name: getattr(self.args, name) for name in names if hasattr(self.args, name)}
        return base.with_overrides(overrides).ensure_valid()

    def generate_data(self) -> None:
        config = self.build_config()
        splits = build_datasets(config)
        for name, path in save_splits(splits, config.output_dir).items():
            print(f"  [OK] {name}: {len(getattr(splits, name))} samples -> {path}")

    def train(self) -> None:
        result = run_experiment(self.build_config())
        print(f"  [OK] final val NDCG@{result.config.ndcg_k}: {result.final_val_ndcg:.4f}")
        print(f"  [OK] test NDCG@{result.config.ndcg_k}: {result.test_ndcg:.4f}")
        print(f"  [OK] files written to {result.output_dir}")

    def sweep(self) -> None:
        config = self.build_config()
        table = run_sweep(config, self.args.axis, self.args.values, config.output_dir, workers=self.args.workers)
        with pd.option_context("display.width", 160, "display.max_columns", None):
            print(table.drop(columns=["output_dir"]).to_string(index=False))

    def evaluate(self) -> None:
        score = evaluate_checkpoint(self.args.checkpoint, self.args.queries, self.args.archive,
                                    k=self.args.k, n_queries=self.args.n_queries)
        print(f"NDCG@{self.args.k}: {score:.6f}")

    def emit_plot_data(self) -> None:
        for name, path in emit_plot_data(self.args.metrics_dir, self.args.out_dir, html=self.args.html).items():
            print(f"  [OK] {name}: {path}")

    def count_params(self) -> None:
        config = self.build_config()
        input_shape, output_shape = data_shapes(config)
        count = count_parameters(GridModel.from_config(config, input_shape, output_shape))
        table = pd.DataFrame(
            [(name, n) for name, n in count.per_group.items()]
            + [("disc_only", count.disc_only), ("gen_only", count.gen_only), ("hybrid", count.hybrid)],
            columns=["group", "parameters"],
        )
        print(table.to_string(index=False))
        overhead = 100.0 * (count.hybrid - count.disc_only) / count.disc_only
        print(f"hybrid overhead over disc_only: {overhead:.2f}%")
        print(f"backbone share of hybrid: {count.backbone_share:.2f}%")

    def run(self) -> None:
        handlers = {
            "generate-data": self.generate_data,
            "train": self.train,
            "sweep": self.sweep,
            "evaluate": self.evaluate,
            "emit-plot-data": self.emit_plot_data,
            "count-params": self.count_params,
        }
        handlers[self.args.command]()


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML configuration file")
    for name, options in CONFIG_FLAGS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, **options)
    parser.add_argument("--checkpoint-every-epoch", dest="checkpoint_every_epoch", action="store_const",
                        const=True, default=None, help="also write a checkpoint after every epoch")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grid", description="GRID label-noise-robust learning experiments")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="logging level (default: %(default)s)")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("generate-data", "generate and store a dataset"),
                            ("train", "run one experiment"),
                            ("count-params", "report trainable parameter counts")):
        add_config_flags(commands.add_parser(name, help=help_text))

    sweep = commands.add_parser("sweep", help="one experiment per axis value")
    add_config_flags(sweep)
    sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sweep.add_argument("--values", required=True, nargs="+")
    sweep.add_argument("--workers", type=int, default=1, help="parallel sweep cells")

    evaluate = commands.add_parser("evaluate", help="retrieval NDCG of a checkpoint")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--queries", required=True, help="query dataset file (.npz)")
    evaluate.add_argument("--archive", required=True, help="archive dataset file (.npz)")
    evaluate.add_argument("--k", type=int, default=20)
    evaluate.add_argument("--n-queries", dest="n_queries", type=int, default=None)

    plots = commands.add_parser("emit-plot-data", help="write per-figure data tables")
    plots.add_argument("metrics_dir", help="a run directory or a directory of runs")
    plots.add_argument("--out-dir", dest="out_dir", default=None)
    plots.add_argument("--html", action="store_true", help="also render plots.html")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments and run one verb.

    Returns:
        0 on success, 1 on any project error.
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        Application(args).run()
    except ConfigError as e:
        logger.error("Configuration rejected: %s", e)
        return 1
    except GridError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
