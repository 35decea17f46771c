"""
Per-sample loss functions for both reasoning branches and both annotation
scenarios, plus the two training objectives.

Every loss reduces over the trailing (per-sample) axes only: a single sample
gives a scalar tensor, a batch gives a (B,) tensor. Batch means are taken by
the objectives.
"""

from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np

from src.core.tensor import (
    Tensor,
    as_tensor,
    clip,
    exp,
    gather,
    log,
    log_softmax,
    mean,
    stop_gradient,
    sum_,
    take_along_axis,
)
from src.models.models import BatchLossReport, ForwardOutputs
from src.utils.config import PROB_CLAMP
from src.utils.exceptions import InvalidDataError, ShapeError


def bce_multilabel(pred: Tensor, target: Union[np.ndarray, Tensor]) -> Tensor:
    """
    Binary cross entropy averaged over classes.

    Args:
        pred: Class probabilities, shape (..., C).
        target: Multi-hot targets of the same shape.

    Returns:
        Loss per sample, shape (...).

    Raises:
        ShapeError: If the shapes differ.
    """
    y = as_tensor(np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64))
    if pred.shape != y.shape:
        raise ShapeError(f"bce_multilabel: prediction shape {pred.shape} does not match target shape {y.shape}")
    p = clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = y * log(p) + (1.0 - y) * log(1.0 - p)
    return -mean(terms, axis=-1)


def pixel_ce(logits: Tensor, target: np.ndarray) -> Tensor:
    """
    Pixel-wise cross entropy averaged over pixels.

    Args:
        logits: Class scores, shape (..., H, W, C).
        target: Class indices, shape (..., H, W).

    Returns:
        Loss per sample, shape (...).

    Raises:
        ShapeError: If the grids do not line up.
        InvalidDataError: If a class index lies outside [0, C).
    """
    target = np.asarray(target)
    if logits.ndim < 3 or target.shape != logits.shape[:-1]:
        raise ShapeError(f"pixel_ce: logit shape {logits.shape} does not match target shape {target.shape}")
    n_classes = logits.shape[-1]
    if target.size and (target.min() < 0 or target.max() >= n_classes):
        raise InvalidDataError(f"pixel_ce: class indices must lie in [0, {n_classes})")
    picked = take_along_axis(log_softmax(logits, axis=-1), target, axis=-1)
    return -mean(picked, axis=(-2, -1))


def mse(a: Tensor, b: Union[np.ndarray, Tensor]) -> Tensor:
    """Mean squared difference over the last axis."""
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a - b
    return mean(diff * diff, axis=-1)


def kl_to_standard_normal(mu: Tensor, log_var: Tensor) -> Tensor:
    """
    KL(N(mu, diag(exp(log_var))) || N(0, I)) summed over the latent axis.

    Returned as a non-negative penalty: 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2).
    """
    if mu.shape != log_var.shape:
        raise ShapeError(f"kl_to_standard_normal: mu shape {mu.shape} and log_var shape {log_var.shape} differ")
    return 0.5 * sum_(mu * mu + exp(log_var) - 1.0 - log_var, axis=-1)


TASK_LOSSES: Dict[str, Callable[[Tensor, np.ndarray], Tensor]] = {
    "scene": bce_multilabel,
    "pixel": pixel_ce,
}


def task_loss_for(scenario: str) -> Callable[[Tensor, np.ndarray], Tensor]:
    """The sample-wise task loss L of a scenario."""
    try:
        return TASK_LOSSES[scenario]
    except KeyError as e:
        raise InvalidDataError(f"Unknown scenario {scenario!r}; expected one of {sorted(TASK_LOSSES)}") from e


def build_report(outputs: ForwardOutputs, targets: np.ndarray, scenario: str) -> BatchLossReport:
    """
    Evaluate all four per-sample terms for a forward pass.

    The reconstruction target is the descriptor behind a gradient barrier:
    the VAE treats f as data.
    """
    task_loss = task_loss_for(scenario)
    return BatchLossReport(
        disc_task_loss=task_loss(outputs.disc_prediction, targets),
        gen_task_loss=task_loss(outputs.gen_prediction, targets),
        recon_loss=mse(outputs.reconstruction, stop_gradient(outputs.descriptor)),
        kl_term=kl_to_standard_normal(outputs.mu, outputs.log_var),
    )


def generative_objective(report: BatchLossReport) -> Tensor:
    """Batch mean of recon_loss + gen_task_loss + kl_term."""
    return mean(report.recon_loss + report.gen_task_loss + report.kl_term)


def discriminative_objective(report: BatchLossReport, subset: Optional[Sequence[int]] = None) -> Tensor:
    """
    Mean discriminative task loss over ``subset`` (the whole batch when None).

    An empty subset contributes a constant zero.
    """
    indices = np.arange(report.batch_size) if subset is None else np.asarray(subset, dtype=np.int64)
    if len(indices) == 0:
        return Tensor(0.0)
    return sum_(gather(report.disc_task_loss, indices)) * (1.0 / len(indices))


def generative_task_objective(report: BatchLossReport, subset: Optional[Sequence[int]] = None) -> Tensor:
    """Mean generative task loss over ``subset``; the ELBO task term alone."""
    indices = np.arange(report.batch_size) if subset is None else np.asarray(subset, dtype=np.int64)
    if len(indices) == 0:
        return Tensor(0.0)
    return sum_(gather(report.gen_task_loss, indices)) * (1.0 / len(indices))
