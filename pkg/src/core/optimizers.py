"""
Gradient-descent optimizers applied after gradient routing.

Both optimizers read each parameter's accumulated ``grad``; a parameter whose
grad is None is left untouched (and so are its moment accumulators).
"""

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from src.core.tensor import Tensor
from src.utils.config import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON
from src.utils.exceptions import TrainingError


@dataclass
class OptimizerState:
    """
    Per-parameter optimizer memory.

    Attributes:
        learning_rate: Step size eta.
        first_moment: One accumulator per parameter, same shape.
        second_moment: One accumulator per parameter, same shape.
        steps: Update count per parameter (bias correction).
        beta1: First-moment decay rate.
        beta2: Second-moment decay rate.
        epsilon: Denominator offset.
    """

    learning_rate: float
    first_moment: List[np.ndarray] = field(default_factory=list)
    second_moment: List[np.ndarray] = field(default_factory=list)
    steps: List[int] = field(default_factory=list)
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON


class Optimizer:
    """Base class: owns the parameter list and its state."""

    def __init__(self, parameters: Sequence[Tensor], learning_rate: float) -> None:
        if learning_rate <= 0:
            raise TrainingError(f"learning rate must be > 0, got {learning_rate}")
        self.parameters = list(parameters)
        self.state = OptimizerState(
            learning_rate=float(learning_rate),
            first_moment=[np.zeros_like(p.data) for p in self.parameters],
            second_moment=[np.zeros_like(p.data) for p in self.parameters],
            steps=[0] * len(self.parameters),
        )

    def zero_grads(self) -> None:
        for p in self.parameters:
            p.zero_grad()

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    """Plain gradient descent: p <- p - eta * grad."""

    def step(self) -> None:
        lr = self.state.learning_rate
        for i, p in enumerate(self.parameters):
            if p.grad is None:
                continue
            p.data = p.data - lr * p.grad
            self.state.steps[i] += 1


class Adam(Optimizer):
    """Adam with bias-corrected moment estimates."""

    def step(self) -> None:
        s = self.state
        for i, p in enumerate(self.parameters):
            if p.grad is None:
                continue
            s.steps[i] += 1
            t = s.steps[i]
            s.first_moment[i] = s.beta1 * s.first_moment[i] + (1.0 - s.beta1) * p.grad
            s.second_moment[i] = s.beta2 * s.second_moment[i] + (1.0 - s.beta2) * p.grad * p.grad
            m_hat = s.first_moment[i] / (1.0 - s.beta1 ** t)
            v_hat = s.second_moment[i] / (1.0 - s.beta2 ** t)
            p.data = p.data - s.learning_rate * m_hat / (np.sqrt(v_hat) + s.epsilon)


OPTIMIZERS = {"adam": Adam, "sgd": SGD}


def build_optimizer(name: str, parameters: Sequence[Tensor], learning_rate: float) -> Optimizer:
    """Instantiate an optimizer by name ("adam" or "sgd")."""
    try:
        return OPTIMIZERS[name](parameters, learning_rate)
    except KeyError as e:
        raise TrainingError(f"Unknown optimizer {name!r}; expected one of {sorted(OPTIMIZERS)}") from e
