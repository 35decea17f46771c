"""
Shared fixtures and helpers for the test suite.
"""

from typing import Callable, Sequence

import numpy as np
import pytest

from src.core.grid_model import GridModel
from src.core.tensor import ParameterGroup, Tensor, backward
from src.utils.config import ExperimentConfig

FD_STEP = 1e-5
FD_TOLERANCE = 1e-4


def numeric_gradient(f: Callable[[], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to the array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        original = x[idx]
        x[idx] = original + step
        plus = f()
        x[idx] = original - step
        minus = f()
        x[idx] = original
        grad[idx] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return float(np.linalg.norm(analytic - numeric) / max(scale, 1e-12))


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], rng: np.random.Generator) -> float:
    """
    Largest relative error between analytic and central-difference gradients
    of ``sum(fn(*inputs) * w)`` for a fixed random weighting ``w``.
    """
    leaves = [Tensor(x, requires_grad=True) for x in inputs]
    out = fn(*leaves)
    weights = rng.normal(size=out.shape)

    def value() -> float:
        return float(np.sum(fn(*[Tensor(t.data) for t in leaves]).data * weights))

    loss = (out * weights).sum()
    analytic = backward(loss, [ParameterGroup("inputs", leaves)])["inputs"]
    return max(relative_error(a, numeric_gradient(value, t.data)) for a, t in zip(analytic, leaves))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_scene_model() -> GridModel:
    """Small scene model: 6 inputs, 4 classes, D=5, J=3."""
    return GridModel(input_dim=6, output_shape=(4,), scenario="scene", descriptor_dim=5,
                     backbone_hidden=(7,), latent_dim=3, vae_hidden=4, seed=3)


@pytest.fixture
def tiny_config(tmp_path) -> ExperimentConfig:
    """A configuration that trains in well under a second."""
    return ExperimentConfig(
        scenario="scene",
        slnir=0.3,
        epochs=2,
        batch_size=16,
        latent_dim=4,
        descriptor_dim=6,
        backbone_hidden=[8],
        vae_hidden=8,
        n_samples=120,
        n_classes=4,
        feature_dim=6,
        ndcg_k=5,
        n_queries=10,
        seed=7,
        output_dir=str(tmp_path / "run"),
    )
