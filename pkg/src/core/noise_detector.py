"""
Noisy-sample detection from the gap between discriminative and generative
task losses.

Detection is a value-level computation: it reads loss values and never
touches the computation tape.
"""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from src.models.models import BatchLossReport, LambdaSpec, Partition
from src.utils.exceptions import InvalidDataError, TrainingError

logger = logging.getLogger(__name__)


@dataclass
class RankedDifferences:
    """
    Normalized loss differences of one batch.

    Attributes:
        differences: d_i per sample, in batch order.
        order: Batch positions sorted by descending d_i, ties by lower position.
    """

    differences: np.ndarray
    order: np.ndarray

    @property
    def sorted_values(self) -> np.ndarray:
        return self.differences[self.order]

    def __len__(self) -> int:
        return len(self.differences)


def min_max_normalize(values: np.ndarray) -> np.ndarray:
    """
    Scale ``values`` affinely onto [0, 1].

    A constant input maps to all zeros.

    Raises:
        InvalidDataError: If ``values`` is empty.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InvalidDataError("min_max_normalize needs at least one value")
    low, high = values.min(), values.max()
    if high == low:
        return np.zeros_like(values)
    return (values - low) / (high - low)


def rank_loss_differences(
    report: Union[BatchLossReport, None] = None,
    disc_losses: np.ndarray = None,
    gen_losses: np.ndarray = None,
) -> RankedDifferences:
    """
    Sort the per-sample differences of the min-max normalized disc and gen losses.

    Either a report or both raw loss arrays must be given. Each head's losses
    are normalized independently within the batch.
    """
    if report is not None:
        disc_losses = report.disc_task_loss.numpy()
        gen_losses = report.gen_task_loss.numpy()
    disc_losses = np.asarray(disc_losses, dtype=np.float64)
    gen_losses = np.asarray(gen_losses, dtype=np.float64)
    if disc_losses.shape != gen_losses.shape or disc_losses.ndim != 1:
        raise InvalidDataError(
            f"disc and gen losses must be equal-length vectors, got {disc_losses.shape} and {gen_losses.shape}"
        )
    if np.ptp(disc_losses) == 0 or np.ptp(gen_losses) == 0:
        logger.warning("Constant loss vector in batch of %d; its normalized values are all zero", len(disc_losses))
    differences = min_max_normalize(disc_losses) - min_max_normalize(gen_losses)
    order = np.argsort(-differences, kind="stable")
    return RankedDifferences(differences=differences, order=order)


def resolve_lambda(percent: float, batch_size: int) -> int:
    """Number of samples to route to generative reasoning in a batch."""
    return LambdaSpec(percent=percent, batch_size=batch_size).count


def partition_batch(ranked: RankedDifferences, lam: Union[LambdaSpec, int]) -> Partition:
    """
    Put the ``lam`` largest differences in W and the rest in C.

    Raises:
        TrainingError: If ``lam`` exceeds the batch size.
    """
    count = lam.count if isinstance(lam, LambdaSpec) else int(lam)
    if count < 0 or count > len(ranked):
        raise TrainingError(f"lambda = {count} must lie in [0, {len(ranked)}]")
    return Partition(noisy_indices=ranked.order[:count], clean_indices=ranked.order[count:], lam=count)


def detect_noisy(report: BatchLossReport, percent: float) -> Partition:
    """Rank and partition one batch for a λ given as a percentage."""
    ranked = rank_loss_differences(report)
    return partition_batch(ranked, LambdaSpec(percent=percent, batch_size=len(ranked)))
