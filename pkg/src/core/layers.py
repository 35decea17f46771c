"""
Dense layers and layer stacks used to assemble the GRID network.
"""

import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.tensor import Tensor, matmul, relu, reshape, sigmoid
from src.utils.exceptions import ShapeError

ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "identity": lambda x: x,
}


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Dense:
    """
    Fully connected layer ``x @ W + b``.

    Attributes:
        weight: (d_in, d_out) trainable tensor.
        bias: (d_out,) trainable tensor, initialized to zero.
    """

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, name: str = "dense") -> None:
        self.d_in = d_in
        self.d_out = d_out
        self.weight = Tensor(glorot_uniform(d_in, d_out, rng), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(d_out), requires_grad=True, name=f"{name}.bias")

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"{self.weight.name}: input shape {x.shape} does not match weight shape {self.weight.shape}")
        return matmul(x, self.weight) + self.bias


class LayerStack:
    """
    Sequence of dense layers, each followed by its activation.

    Args:
        widths: Layer widths including the input width, e.g. [64, 128, 8].
        activations: One activation name per layer (len(widths) - 1 entries).
        rng: Generator for weight initialization.
        name: Prefix for parameter names.
        output_shape: Optional per-sample shape the flat output is reshaped to.
    """

    def __init__(
        self,
        widths: Sequence[int],
        activations: Sequence[str],
        rng: np.random.Generator,
        name: str,
        output_shape: Optional[Tuple[int, ...]] = None,
    ) -> None:
        if len(widths) < 2 or len(activations) != len(widths) - 1:
            raise ShapeError(f"{name}: {len(widths)} widths need {len(widths) - 1} activations, got {len(activations)}")
        unknown = [a for a in activations if a not in ACTIVATIONS]
        if unknown:
            raise ValueError(f"{name}: unknown activations {unknown}")
        if output_shape is not None and int(np.prod(output_shape)) != widths[-1]:
            raise ShapeError(f"{name}: output shape {output_shape} does not hold {widths[-1]} values")
        self.name = name
        self.widths = list(widths)
        self.activations = list(activations)
        self.output_shape = tuple(output_shape) if output_shape is not None else None
        self.layers = [
            Dense(d_in, d_out, rng, name=f"{name}.{i}")
            for i, (d_in, d_out) in enumerate(zip(widths[:-1], widths[1:]))
        ]

    def parameters(self) -> List[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def template(self) -> Tuple:
        """Architecture without the input width: hidden/output widths, activations, reshape."""
        return (tuple(self.widths[1:]), tuple(self.activations), self.output_shape)

    def __call__(self, x: Tensor) -> Tensor:
        for layer, activation in zip(self.layers, self.activations):
            x = ACTIVATIONS[activation](layer(x))
        if self.output_shape is not None:
            x = reshape(x, x.shape[:-1] + self.output_shape)
        return x
