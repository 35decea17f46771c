"""
Experiment runner: data preparation, the epoch loop, sweeps over one
configuration axis and emission of per-figure plot data.

Every file written here goes through a temporary file and a rename, and a
configuration is validated before any directory is created.
"""

import glob
import json
import logging
import os
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.core.data_generator import generate_dataset, inject_noise, load_dataset, save_dataset, split_dataset
from src.core.evaluation import EpochAccumulator, baseline_selectors, evaluate_retrieval
from src.core.grid_model import GridModel, count_parameters
from src.core.grid_trainer import iterate_batches, train_step
from src.core.optimizers import build_optimizer
from src.core.visualization import Visualizer
from src.database.database import RUN_COLUMNS, Database
from src.models.models import DatasetSplits, DetectionTrace, MetricsRecord, NoiseSpec, ParameterCount
from src.utils.config import METRICS_SCHEMA_VERSION, SELECTORS, SWEEP_AXES, ExperimentConfig
from src.utils.exceptions import ConfigError, EvaluationError
from src.utils.file_utils import atomic_write

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.json"
CHECKPOINT_FILE = "checkpoint.npz"
CONFIG_FILE = "config.yaml"
SWEEP_TABLE = "sweep_results.csv"
SWEEP_DB = "sweep.db"
METRICS_COLUMNS = ["epoch", "metric", "value"]

# Sub-stream indices of a run's master seed
DATA_STREAM, SPLIT_STREAM, NOISE_STREAM, BATCH_STREAM, SELECTOR_STREAM = range(5)

AXIS_FIELDS = {"lambda": "lambda_percent", "slnir": "slnir", "mode": "mode"}


def derive_seed(base_seed: int, index: int) -> int:
    """Seed of sub-stream ``index``; a pure function of its two arguments."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def data_shapes(config: ExperimentConfig) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    """Per-sample input and head output shapes of the configured scenario."""
    if config.scenario == "pixel":
        side = config.image_size
        return (side, side, config.feature_dim), (side, side, config.n_classes)
    return (config.feature_dim,), (config.n_classes,)


def build_datasets(config: ExperimentConfig) -> DatasetSplits:
    """
    Generate, split and corrupt the data of one run.

    Noise goes into the training split only; validation and test keep their
    clean annotations.
    """
    dataset = generate_dataset(config.scenario, config.n_samples, config.n_classes, config.feature_dim,
                               image_size=config.image_size, seed=derive_seed(config.seed, DATA_STREAM))
    train, val, test = split_dataset(dataset, config.split_ratios, seed=derive_seed(config.seed, SPLIT_STREAM))
    if config.slnir > 0:
        train = inject_noise(train, NoiseSpec(slnir=config.slnir, seed=derive_seed(config.seed, NOISE_STREAM)))
    return DatasetSplits(train=train, val=val, test=test)


def save_splits(splits: DatasetSplits, directory: str) -> Dict[str, str]:
    """Write train.npz, val.npz and test.npz into ``directory``."""
    paths = {}
    for name in ("train", "val", "test"):
        paths[name] = os.path.join(directory, f"{name}.npz")
        save_dataset(getattr(splits, name), paths[name])
    return paths


def write_frame(frame: pd.DataFrame, path: str) -> None:
    with atomic_write(path, "w", encoding="utf-8") as f:
        frame.to_csv(f, index=False)


def write_json(data: Dict[str, Any], path: str) -> None:
    with atomic_write(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def metrics_frame(records: Sequence[MetricsRecord]) -> pd.DataFrame:
    """Long-format metrics table, one row per epoch per metric."""
    return pd.DataFrame([row for record in records for row in record.to_rows()], columns=METRICS_COLUMNS)


def parameter_summary(count: ParameterCount) -> Dict[str, Any]:
    return {
        "per_group": dict(count.per_group),
        "disc_only": count.disc_only,
        "gen_only": count.gen_only,
        "hybrid": count.hybrid,
        "vae": count.vae,
        "backbone_share": count.backbone_share,
    }


@dataclass
class RunResult:
    """
    Outcome of one experiment.

    Attributes:
        config: The effective configuration.
        records: One MetricsRecord per epoch.
        test_ndcg: Final NDCG of training-split queries against the test archive.
        parameters: Trainable parameter counts.
        output_dir: Directory holding the run's files.
    """

    config: ExperimentConfig
    records: List[MetricsRecord]
    test_ndcg: float
    parameters: ParameterCount
    output_dir: str
    files: Dict[str, str] = field(default_factory=dict)

    @property
    def final_val_ndcg(self) -> float:
        return self.records[-1].val_ndcg if self.records else float("nan")

    def detection_trace(self) -> DetectionTrace:
        trace = DetectionTrace()
        for record in self.records:
            for selector in sorted(record.precision):
                trace.append(selector, record.precision[selector])
        return trace

    def summary(self) -> Dict[str, Any]:
        """The JSON summary written next to the metrics."""
        final = self.records[-1] if self.records else None
        return {
            "schema_version": METRICS_SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "lambda_percent": self.config.resolved_lambda_percent,
            "epochs_completed": len(self.records),
            "final": {
                "val_ndcg": self.final_val_ndcg,
                "test_ndcg": self.test_ndcg,
                "precision": dict(final.precision) if final else {},
                "recall": dict(final.recall) if final else {},
                "balanced_accuracy": dict(final.balanced_accuracy) if final else {},
            },
            "parameters": parameter_summary(self.parameters),
            "files": {name: os.path.basename(path) for name, path in sorted(self.files.items())},
        }


class ExperimentRunner:
    """
    Runs one experiment described by an ExperimentConfig.

    Args:
        config: Run settings; validated on construction.
    """

    def __init__(self, config: ExperimentConfig) -> None:
        self.config = config.ensure_valid()
        self.lambda_percent = config.resolved_lambda_percent

    def build_model(self, splits: DatasetSplits) -> GridModel:
        output_shape = (self.config.n_classes,) if self.config.scenario == "scene" else (
            *splits.train.labels.shape[1:], self.config.n_classes)
        return GridModel.from_config(self.config, splits.train.features.shape[1:], output_shape)

    def train_epoch(self, epoch: int, model: GridModel, optimizer, splits: DatasetSplits,
                    batch_rng: np.random.Generator, selector_rng: np.random.Generator) -> MetricsRecord:
        """
        One pass over the training split followed by validation retrieval.

        Detection accuracy of the GRID partition and of both baseline
        selectors is pooled over the epoch's batches; the noise flags are
        used only here.
        """
        train = splits.train
        acc = EpochAccumulator()
        for indices in iterate_batches(len(train), self.config.batch_size, batch_rng):
            result = train_step(model, train.features[indices], train.labels[indices], self.lambda_percent,
                                optimizer, mode=self.config.mode)
            flags = train.noise_flags[indices]
            acc.add(result.report, result.partition)
            acc.add_detection("grid", result.partition, flags)
            for selector, partition in baseline_selectors(result.report, result.partition.lam, selector_rng).items():
                acc.add_detection(selector, partition, flags)

        val_ndcg = evaluate_retrieval(model, splits.val, splits.test, k=self.config.ndcg_k)
        tallies = {name: acc.tallies[name] for name in SELECTORS if name in acc.tallies}
        record = MetricsRecord(
            epoch=epoch,
            val_ndcg=val_ndcg,
            mean_disc_loss=acc.mean(acc.disc),
            mean_gen_loss=acc.mean(acc.gen),
            mean_hybrid_loss=acc.mean(acc.hybrid),
            mean_recon_loss=acc.mean(acc.recon),
            mean_kl=acc.mean(acc.kl),
            mean_noisy=acc.per_batch(acc.noisy),
            mean_clean=acc.per_batch(acc.clean),
            precision={name: t.precision for name, t in tallies.items()},
            recall={name: t.recall for name, t in tallies.items()},
            balanced_accuracy={name: t.balanced_accuracy for name, t in tallies.items()},
        )
        if record.precision.get("grid") is None:
            logger.warning("Epoch %d: no sample was routed to generative reasoning", epoch)
        logger.info(
            "Epoch %d/%d: disc=%.4f gen=%.4f hybrid=%.4f val_ndcg@%d=%.4f precision(grid)=%s",
            epoch, self.config.epochs, record.mean_disc_loss, record.mean_gen_loss, record.mean_hybrid_loss,
            self.config.ndcg_k, val_ndcg,
            "n/a" if record.precision.get("grid") is None else f"{record.precision['grid']:.3f}",
        )
        return record

    def run(self, splits: Optional[DatasetSplits] = None, write: bool = True) -> RunResult:
        """
        Train for the configured epochs and, with ``write``, store metrics,
        summary, configuration and the final checkpoint in the output directory.

        Args:
            splits: Prepared data; generated from the config when omitted.
            write: Whether to write files.
        """
        config = self.config
        logger.info("Starting %s run: scenario=%s lambda=%d%% slnir=%.2f epochs=%d seed=%d",
                    config.mode, config.scenario, self.lambda_percent, config.slnir, config.epochs, config.seed)
        splits = splits or build_datasets(config)
        model = self.build_model(splits)
        optimizer = build_optimizer(config.optimizer, model.parameters(), config.learning_rate)
        batch_rng = np.random.default_rng(derive_seed(config.seed, BATCH_STREAM))
        selector_rng = np.random.default_rng(derive_seed(config.seed, SELECTOR_STREAM))

        records: List[MetricsRecord] = []
        for epoch in range(1, config.epochs + 1):
            records.append(self.train_epoch(epoch, model, optimizer, splits, batch_rng, selector_rng))
            if write and config.checkpoint_every_epoch:
                model.save_checkpoint(os.path.join(config.output_dir, "checkpoints", f"epoch_{epoch:03d}.npz"))

        queries = splits.train.subset(np.arange(min(config.n_queries, len(splits.train))))
        test_ndcg = evaluate_retrieval(model, queries, splits.test, k=config.ndcg_k)
        logger.info("Finished: final val_ndcg@%d=%.4f test_ndcg@%d=%.4f",
                    config.ndcg_k, records[-1].val_ndcg, config.ndcg_k, test_ndcg)

        result = RunResult(config=config, records=records, test_ndcg=test_ndcg,
                           parameters=count_parameters(model), output_dir=config.output_dir)
        if write:
            self.write_outputs(result, model)
        return result

    def write_outputs(self, result: RunResult, model: GridModel) -> None:
        directory = self.config.output_dir
        result.files = {
            "metrics": os.path.join(directory, METRICS_FILE),
            "summary": os.path.join(directory, SUMMARY_FILE),
            "checkpoint": os.path.join(directory, CHECKPOINT_FILE),
            "config": os.path.join(directory, CONFIG_FILE),
        }
        write_frame(metrics_frame(result.records), result.files["metrics"])
        model.save_checkpoint(result.files["checkpoint"])
        self.config.to_yaml(result.files["config"])
        write_json(result.summary(), result.files["summary"])
        logger.info("Run files written to %s", directory)


def run_experiment(config: ExperimentConfig, splits: Optional[DatasetSplits] = None,
                   write: bool = True) -> RunResult:
    """Run one experiment; see ExperimentRunner.run."""
    return ExperimentRunner(config).run(splits=splits, write=write)


def coerce_axis_value(axis: str, raw: Any) -> Any:
    """Convert a sweep value (possibly text from the command line) to the field's type."""
    if axis == "lambda":
        return int(raw)
    if axis == "slnir":
        return float(raw)
    return str(raw)


def sweep_cells(base: ExperimentConfig, axis: str, values: Sequence[Any], output_dir: str) -> List[ExperimentConfig]:
    """
    The configuration of every sweep cell, all validated up front.

    Cell i gets seed derive_seed(base.seed, i) and its own output directory.

    Raises:
        ConfigError: For an unknown axis, no values, or any invalid cell.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"Unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if not values:
        raise ConfigError(f"Sweep over {axis} needs at least one value")
    cells, errors = [], []
    for i, raw in enumerate(values):
        try:
            value = coerce_axis_value(axis, raw)
        except (TypeError, ValueError):
            errors.append(f"{axis}[{i}]: cannot interpret {raw!r}")
            continue
        cell = base.with_overrides({
            AXIS_FIELDS[axis]: value,
            "seed": derive_seed(base.seed, i),
            "output_dir": os.path.join(output_dir, f"cell_{i:02d}_{axis}_{value}"),
        })
        errors.extend(f"{axis}[{i}] {message}" for message in cell.validate())
        cells.append(cell)
    if errors:
        raise ConfigError("Invalid sweep", errors)
    return cells


def _run_cell(config_data: Dict[str, Any]) -> Dict[str, Any]:
    """Worker entry point: run one cell and return picklable results."""
    config = ExperimentConfig.from_dict(config_data)
    result = run_experiment(config)
    return {"summary": result.summary(), "rows": [row for r in result.records for row in r.to_rows()]}


def run_sweep(base: ExperimentConfig, axis: str, values: Sequence[Any], output_dir: str,
              workers: int = 1) -> pd.DataFrame:
    """
    One run per axis value, then a results table of final NDCG per cell.

    Cells run in a process pool when ``workers`` > 1; the table is assembled
    in cell order either way. The table goes to sweep_results.csv and, with
    every per-epoch metric, to the SQLite store sweep.db.

    Raises:
        ConfigError: If any cell is invalid (before anything runs).
    """
    cells = sweep_cells(base, axis, values, output_dir)
    payloads = [cell.to_dict() for cell in cells]
    logger.info("Sweeping %s over %d cells with %d worker(s)", axis, len(cells), workers)
    if workers > 1:
        with Pool(processes=workers) as pool:
            outcomes = pool.map(_run_cell, payloads)
    else:
        outcomes = [_run_cell(payload) for payload in payloads]

    os.makedirs(output_dir, exist_ok=True)
    database = Database(os.path.join(output_dir, SWEEP_DB))
    database.init_db()
    rows = []
    try:
        for i, (cell, outcome) in enumerate(zip(cells, outcomes)):
            final = outcome["summary"]["final"]
            row = {
                "cell": i,
                "axis": axis,
                "value": str(getattr(cell, AXIS_FIELDS[axis])),
                "scenario": cell.scenario,
                "mode": cell.mode,
                "lambda_percent": cell.resolved_lambda_percent,
                "slnir": cell.slnir,
                "seed": cell.seed,
                "final_val_ndcg": final["val_ndcg"],
                "test_ndcg": final["test_ndcg"],
                "output_dir": cell.output_dir,
            }
            database.record_run(row, outcome["rows"])
            for selector in SELECTORS:
                row[f"final_precision_{selector}"] = final["precision"].get(selector)
            rows.append(row)
    finally:
        database.close()
    table = pd.DataFrame(rows, columns=[*RUN_COLUMNS, *(f"final_precision_{s}" for s in SELECTORS)])
    write_frame(table, os.path.join(output_dir, SWEEP_TABLE))
    logger.info("Sweep table written to %s", os.path.join(output_dir, SWEEP_TABLE))
    return table


def find_runs(metrics_dir: str) -> Dict[str, str]:
    """
    Completed runs under ``metrics_dir``: the directory itself or its
    immediate subdirectories, keyed by run name.

    Raises:
        EvaluationError: If the directory is missing or holds no metrics file.
    """
    if not os.path.isdir(metrics_dir):
        raise EvaluationError(f"Metrics directory not found: {metrics_dir}")
    own = os.path.join(metrics_dir, METRICS_FILE)
    if os.path.isfile(own):
        return {os.path.basename(os.path.normpath(metrics_dir)): own}
    runs = {
        os.path.basename(os.path.dirname(path)): path
        for path in sorted(glob.glob(os.path.join(metrics_dir, "*", METRICS_FILE)))
    }
    if not runs:
        raise EvaluationError(f"No completed runs ({METRICS_FILE}) found under {metrics_dir}")
    return runs


def load_metrics(path: str) -> pd.DataFrame:
    """
    Read one metrics file.

    Raises:
        EvaluationError: If the file cannot be parsed or lacks columns.
    """
    try:
        frame = pd.read_csv(path)
    except Exception as e:
        raise EvaluationError(f"Error loading metrics file {path}: {str(e)}") from e
    missing = set(METRICS_COLUMNS) - set(frame.columns)
    if missing:
        raise EvaluationError(f"Missing columns: {missing}. Expected: {METRICS_COLUMNS}")
    return frame


def emit_plot_data(metrics_dir: str, out_dir: Optional[str] = None, html: bool = False) -> Dict[str, str]:
    """
    Tidy per-figure tables from completed runs.

    Writes ``detection_<selector>.csv`` (run, epoch, selector, precision) for
    every selector present, ``loss_curves.csv`` (run, epoch, curve, value) and
    ``ndcg.csv`` (run, epoch, ndcg); with ``html`` also ``plots.html``.

    Returns:
        Paths written, keyed by table name.

    Raises:
        EvaluationError: If no completed run is found.
    """
    runs = find_runs(metrics_dir)
    out_dir = out_dir or os.path.join(metrics_dir, "plot_data")
    combined = pd.concat(
        [load_metrics(path).assign(run=run) for run, path in runs.items()], ignore_index=True
    )

    written: Dict[str, str] = {}
    traces: Dict[str, pd.DataFrame] = {}
    for selector in SELECTORS:
        part = combined[combined["metric"] == f"precision_{selector}"]
        if part.empty:
            continue
        traces[selector] = pd.DataFrame({
            "run": part["run"].values,
            "epoch": part["epoch"].values,
            "selector": selector,
            "precision": part["value"].values,
        })
        written[f"detection_{selector}"] = os.path.join(out_dir, f"detection_{selector}.csv")
        write_frame(traces[selector], written[f"detection_{selector}"])

    losses = combined[combined["metric"].str.startswith("loss_")]
    curves = pd.DataFrame({
        "run": losses["run"].values,
        "epoch": losses["epoch"].values,
        "curve": losses["metric"].str.slice(len("loss_")).values,
        "value": losses["value"].values,
    })
    written["loss_curves"] = os.path.join(out_dir, "loss_curves.csv")
    write_frame(curves, written["loss_curves"])

    val = combined[combined["metric"] == "val_ndcg"]
    ndcg = pd.DataFrame({"run": val["run"].values, "epoch": val["epoch"].values, "ndcg": val["value"].values})
    written["ndcg"] = os.path.join(out_dir, "ndcg.csv")
    write_frame(ndcg, written["ndcg"])

    if html:
        visualizer = Visualizer(os.path.join(out_dir, "plots.html"))
        visualizer.plot_ndcg(ndcg)
        visualizer.plot_detection_traces(traces)
        visualizer.plot_loss_curves(curves)
        written["html"] = visualizer.save_visualizations()
    logger.info("Plot data for %d run(s) written to %s", len(runs), out_dir)
    return written


def evaluate_checkpoint(checkpoint_path: str, query_path: str, archive_path: str, k: int = 20,
                        n_queries: Optional[int] = None) -> float:
    """NDCG@k of a stored model retrieving an archive file for a query file."""
    model = GridModel.from_checkpoint(checkpoint_path)
    queries = load_dataset(query_path)
    if n_queries is not None:
        queries = queries.subset(np.arange(min(n_queries, len(queries))))
    return evaluate_retrieval(model, queries, load_dataset(archive_path), k=k)

