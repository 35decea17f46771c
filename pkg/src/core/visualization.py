"""
Visualization module using Bokeh for the GRID project.

This module renders the tidy plot-data tables (detection traces, loss curves,
validation NDCG) into a single static HTML report.
"""

import logging
from pathlib import Path
from typing import Dict, List

import pandas as pd
from bokeh.layouts import column
from bokeh.models import ColumnDataSource, HoverTool
from bokeh.palettes import Category10_10
from bokeh.plotting import figure, output_file, save

from src.utils.exceptions import VisualizationError

logger = logging.getLogger(__name__)


class Visualizer:
    """
    Collects Bokeh figures built from plot-data frames and saves them as HTML.
    """

    def __init__(self, output_path: str = "plots.html") -> None:
        """
        Initialize the visualizer.

        Args:
            output_path: Path for the output HTML file.
        """
        self.output_path = output_path
        self.plots: List = []

    def _line_figure(self, title: str, y_label: str, frame: pd.DataFrame, group: str, y: str):
        p = figure(
            title=title,
            x_axis_label="Epoch",
            y_axis_label=y_label,
            width=800,
            height=400,
            toolbar_location="right",
        )
        for i, (name, part) in enumerate(frame.groupby(group, sort=True)):
            source = ColumnDataSource(part.sort_values("epoch"))
            p.line("epoch", y, source=source, line_width=2, color=Category10_10[i % 10], legend_label=str(name))
        p.add_tools(HoverTool(tooltips=[("Epoch", "@epoch"), (y_label, f"@{y}"), (group, f"@{group}")]))
        p.legend.click_policy = "hide"
        return p

    def plot_detection_traces(self, traces: Dict[str, pd.DataFrame]) -> None:
        """
        One figure per selector: detection precision per epoch, a line per run.

        Raises:
            VisualizationError: If plot creation fails.
        """
        try:
            for selector in sorted(traces):
                self.plots.append(self._line_figure(
                    f"Noisy sample detection precision ({selector})", "Precision", traces[selector], "run", "precision"
                ))
        except Exception as e:
            raise VisualizationError(f"Error creating detection plot: {str(e)}") from e

    def plot_loss_curves(self, curves: pd.DataFrame) -> None:
        """
        One figure per run: the mean loss curves per epoch.

        Raises:
            VisualizationError: If plot creation fails.
        """
        try:
            for run, part in curves.groupby("run", sort=True):
                self.plots.append(self._line_figure(f"Loss curves ({run})", "Mean loss", part, "curve", "value"))
        except Exception as e:
            raise VisualizationError(f"Error creating loss curve plot: {str(e)}") from e

    def plot_ndcg(self, ndcg: pd.DataFrame) -> None:
        """
        Validation NDCG per epoch, a line per run.

        Raises:
            VisualizationError: If plot creation fails.
        """
        try:
            self.plots.append(self._line_figure("Validation NDCG", "NDCG", ndcg, "run", "ndcg"))
        except Exception as e:
            raise VisualizationError(f"Error creating NDCG plot: {str(e)}") from e

    def save_visualizations(self) -> str:
        """
        Save all plots to the HTML file.

        Returns:
            The absolute path written.

        Raises:
            VisualizationError: If there is nothing to save or saving fails.
        """
        if not self.plots:
            raise VisualizationError("No plots to save")
        try:
            file_path = Path(self.output_path).resolve()
            output_file(str(file_path), title="GRID report")
            save(column(*self.plots))
        except Exception as e:
            raise VisualizationError(f"Error saving visualizations: {str(e)}") from e
        logger.info("Plots written to %s", file_path)
        return str(file_path)

    def clear_plots(self) -> None:
        """Clear all stored plots."""
        self.plots = []
