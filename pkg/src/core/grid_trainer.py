"""
Hybrid gradient routing and the GRID training step.

For every mini-batch the trainer runs one forward pass, detects noisy samples
from the loss gap between the two task heads, and then differentiates three
losses over disjoint parameter groups:

* backbone (theta): generative task loss on W plus discriminative task loss
  on C, divided by |B|; the reconstruction and KL terms never reach theta;
* discriminative head (gamma): the discriminative objective on the whole batch;
* VAE (beta_e, beta_r, beta_t): the generative objective on the whole batch.

The ablation modes reuse the same machinery with other routings.
"""

import logging
from typing import Dict, Iterator, List, Optional

import numpy as np

from src.core.grid_model import VAE_GROUPS, GridModel
from src.core.losses import (
    build_report,
    discriminative_objective,
    generative_objective,
    generative_task_objective,
)
from src.core.noise_detector import detect_noisy
from src.core.optimizers import Optimizer
from src.core.tensor import Tensor, backward, gather, sum_
from src.models.models import BatchLossReport, Partition, StepResult
from src.utils.config import MODES
from src.utils.exceptions import TrainingError

logger = logging.getLogger(__name__)


def hybrid_backbone_loss(report: BatchLossReport, partition: Partition) -> Tensor:
    """(sum of gen task loss over W + sum of disc task loss over C) / |B|."""
    parts = []
    if len(partition.noisy_indices):
        parts.append(sum_(gather(report.gen_task_loss, partition.noisy_indices)))
    if len(partition.clean_indices):
        parts.append(sum_(gather(report.disc_task_loss, partition.clean_indices)))
    if not parts:
        return Tensor(0.0)
    total = parts[0] if len(parts) == 1 else parts[0] + parts[1]
    return total * (1.0 / report.batch_size)


def hybrid_backbone_gradients(model: GridModel, report: BatchLossReport, partition: Partition) -> List[np.ndarray]:
    """Gradient of the hybrid backbone loss with respect to theta only."""
    return backward(hybrid_backbone_loss(report, partition), [model.groups["theta"]])["theta"]


def head_gradients(model: GridModel, report: BatchLossReport) -> Dict[str, List[np.ndarray]]:
    """
    Whole-batch head gradients: gamma from the discriminative objective, the
    three VAE groups from the generative objective. The partition plays no part.
    """
    grads = backward(discriminative_objective(report), [model.groups["gamma"]])
    grads.update(backward(generative_objective(report), model.group_list(VAE_GROUPS)))
    return grads


def routed_gradients(
    model: GridModel, report: BatchLossReport, partition: Partition, mode: str = "hybrid"
) -> Dict[str, List[np.ndarray]]:
    """
    Populate parameter grads for one forward pass according to ``mode``.

    * hybrid: theta from the hybrid backbone loss, heads per ``head_gradients``;
    * disc_only: theta and gamma from the discriminative objective, VAE untouched;
    * gen_only: theta from the mean generative task loss, VAE from the
      generative objective, gamma untouched;
    * standard_joint: theta from discriminative objective plus mean generative
      task loss, heads per ``head_gradients``.

    Raises:
        TrainingError: If ``mode`` is unknown.
    """
    theta = model.groups["theta"]
    if mode == "hybrid":
        grads = {"theta": hybrid_backbone_gradients(model, report, partition)}
        grads.update(head_gradients(model, report))
    elif mode == "disc_only":
        grads = backward(discriminative_objective(report), [theta, model.groups["gamma"]])
    elif mode == "gen_only":
        grads = backward(generative_task_objective(report), [theta])
        grads.update(backward(generative_objective(report), model.group_list(VAE_GROUPS)))
    elif mode == "standard_joint":
        joint = discriminative_objective(report) + generative_task_objective(report)
        grads = backward(joint, [theta])
        grads.update(head_gradients(model, report))
    else:
        raise TrainingError(f"Unknown training mode {mode!r}; expected one of {MODES}")
    return grads


def train_step(
    model: GridModel,
    inputs: np.ndarray,
    targets: np.ndarray,
    lambda_percent: float,
    optimizer: Optimizer,
    scenario: Optional[str] = None,
    mode: str = "hybrid",
    eps: Optional[np.ndarray] = None,
) -> StepResult:
    """
    One forward pass, detection, gradient routing and a single optimizer update.

    Args:
        model: The network; its parameters are updated in place.
        inputs: Batch of inputs.
        targets: Batch of (noisy) annotations.
        lambda_percent: k, the share of the batch routed to generative reasoning.
        optimizer: Optimizer over all model parameters.
        scenario: Task loss selector; defaults to the model's scenario.
        mode: One of MODES.
        eps: Optional latent noise; drawn from the model stream when omitted.

    Returns:
        StepResult with the loss report, the partition and the gradients applied.

    Raises:
        TrainingError: For an empty batch or an unknown mode.
    """
    if mode not in MODES:
        raise TrainingError(f"Unknown training mode {mode!r}; expected one of {MODES}")
    if len(inputs) == 0:
        raise TrainingError("train_step needs a non-empty batch")
    scenario = scenario or model.scenario
    optimizer.zero_grads()
    outputs = model.forward(inputs, eps=eps)
    report = build_report(outputs, targets, scenario)
    partition = detect_noisy(report, lambda_percent)
    gradients = routed_gradients(model, report, partition, mode)
    optimizer.step()
    logger.debug("Step (%s): |W|=%d |C|=%d", mode, len(partition.noisy_indices), len(partition.clean_indices))
    return StepResult(report=report, partition=partition, gradients=gradients)


def ablation_step(
    mode: str,
    model: GridModel,
    inputs: np.ndarray,
    targets: np.ndarray,
    lambda_percent: float,
    optimizer: Optimizer,
    scenario: Optional[str] = None,
    eps: Optional[np.ndarray] = None,
) -> StepResult:
    """``train_step`` under one of the ablation routings (hybrid is train_step itself)."""
    return train_step(model, inputs, targets, lambda_percent, optimizer, scenario=scenario, mode=mode, eps=eps)


def iterate_batches(n_samples: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Shuffled index batches covering ``n_samples``; the last one may be partial."""
    order = rng.permutation(n_samples)
    for start in range(0, n_samples, batch_size):
        yield order[start:start + batch_size]


class GridTrainer:
    """
    Binds a model, an optimizer and a routing mode for repeated steps.

    Args:
        model: Network to train.
        optimizer: Optimizer over ``model.parameters()``.
        mode: One of MODES.
        lambda_percent: k for the λ of every batch.
    """

    def __init__(self, model: GridModel, optimizer: Optimizer, mode: str = "hybrid",
                 lambda_percent: float = 20) -> None:
        if mode not in MODES:
            raise TrainingError(f"Unknown training mode {mode!r}; expected one of {MODES}")
        self.model = model
        self.optimizer = optimizer
        self.mode = mode
        self.lambda_percent = lambda_percent

    def step(self, inputs: np.ndarray, targets: np.ndarray, eps: Optional[np.ndarray] = None) -> StepResult:
        return train_step(self.model, inputs, targets, self.lambda_percent, self.optimizer,
                          mode=self.mode, eps=eps)
