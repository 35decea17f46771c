"""
Unit tests for the loss functions and objectives.
"""

import numpy as np
import pytest

from src.core.losses import (
    bce_multilabel,
    build_report,
    discriminative_objective,
    generative_objective,
    generative_task_objective,
    kl_to_standard_normal,
    mse,
    pixel_ce,
    task_loss_for,
)
from src.core.tensor import Tensor, backward, mean, sigmoid
from src.utils.config import PROB_CLAMP
from src.utils.exceptions import InvalidDataError, ShapeError
from tests.conftest import FD_TOLERANCE, check_gradients

pytestmark = pytest.mark.unit

INSTANCES = 20


class TestBinaryCrossEntropy:
    """Test suite for the multi-label loss."""

    def test_hand_value(self):
        """Test p = 0.5 everywhere gives log 2 per sample."""
        loss = bce_multilabel(Tensor(np.full((2, 3), 0.5)), np.array([[1, 0, 1], [0, 0, 1]]))
        np.testing.assert_allclose(loss.data, [np.log(2.0)] * 2)

    def test_clamped_at_extremes(self):
        """Test certain wrong predictions stay finite."""
        loss = bce_multilabel(Tensor(np.array([[1.0, 0.0]])), np.array([[0, 1]]))
        np.testing.assert_allclose(loss.data, [-np.log(PROB_CLAMP)], rtol=1e-6)

    def test_shape_mismatch(self):
        """Test mismatched targets are rejected."""
        with pytest.raises(ShapeError):
            bce_multilabel(Tensor(np.full((2, 3), 0.5)), np.ones((2, 4)))

    def test_gradients(self, rng):
        """Test gradients through sigmoid probabilities."""
        for _ in range(INSTANCES):
            target = (rng.random((4, 3)) < 0.5).astype(float)
            fn = lambda logits: bce_multilabel(sigmoid(logits), target)
            assert check_gradients(fn, [rng.normal(size=(4, 3))], rng) < FD_TOLERANCE


class TestPixelCrossEntropy:
    """Test suite for the pixel-wise loss."""

    def test_uniform_logits(self):
        """Test equal logits give log C per sample."""
        loss = pixel_ce(Tensor(np.zeros((2, 3, 3, 5))), np.zeros((2, 3, 3), dtype=int))
        np.testing.assert_allclose(loss.data, [np.log(5.0)] * 2)

    def test_class_out_of_range(self):
        """Test class indices beyond C are rejected."""
        with pytest.raises(InvalidDataError):
            pixel_ce(Tensor(np.zeros((1, 2, 2, 3))), np.full((1, 2, 2), 3))

    def test_grid_mismatch(self):
        """Test a target grid of another size is rejected."""
        with pytest.raises(ShapeError):
            pixel_ce(Tensor(np.zeros((1, 2, 2, 3))), np.zeros((1, 3, 3), dtype=int))

    def test_gradients(self, rng):
        """Test gradients against finite differences."""
        for _ in range(INSTANCES):
            target = rng.integers(0, 4, size=(2, 3, 2))
            fn = lambda logits: pixel_ce(logits, target)
            assert check_gradients(fn, [rng.normal(size=(2, 3, 2, 4))], rng) < FD_TOLERANCE


class TestMeanSquaredError:
    """Test suite for the reconstruction loss."""

    def test_value(self):
        """Test the per-sample mean over the last axis."""
        loss = mse(Tensor(np.array([[1.0, 3.0], [0.0, 0.0]])), np.array([[0.0, 1.0], [0.0, 2.0]]))
        np.testing.assert_allclose(loss.data, [2.5, 2.0])

    def test_gradients(self, rng):
        """Test gradients with respect to both arguments."""
        for _ in range(INSTANCES):
            assert check_gradients(mse, [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))], rng) < FD_TOLERANCE


class TestKullbackLeibler:
    """Test suite for the KL term."""

    def test_zero_at_prior(self):
        """Test the posterior equal to the prior gives exactly zero."""
        kl = kl_to_standard_normal(Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))))
        assert np.all(kl.data == 0.0)

    def test_non_negative(self, rng):
        """Test the penalty is never negative."""
        kl = kl_to_standard_normal(Tensor(rng.normal(size=(50, 3))), Tensor(rng.normal(size=(50, 3))))
        assert np.all(kl.data >= 0)

    def test_monte_carlo_oracle(self, rng):
        """Test agreement with a 10^6-sample estimate of E_q[log q - log p]."""
        for _ in range(10):
            mu = rng.uniform(0.5, 1.5, size=3) * rng.choice([-1.0, 1.0], size=3)
            log_var = rng.uniform(-1.0, 1.0, size=3)
            eps = rng.standard_normal((1_000_000, 3))
            z = mu + np.exp(0.5 * log_var) * eps
            log_ratio = np.sum(-0.5 * eps ** 2 - 0.5 * log_var + 0.5 * z ** 2, axis=1)
            estimate = log_ratio.mean()
            exact = kl_to_standard_normal(Tensor(mu), Tensor(log_var)).item()
            assert abs(exact - estimate) / exact < 0.01

    def test_gradients(self, rng):
        """Test gradients with respect to mu and log_var."""
        for _ in range(INSTANCES):
            fn = kl_to_standard_normal
            assert check_gradients(fn, [rng.normal(size=(3, 2)), rng.normal(size=(3, 2))], rng) < FD_TOLERANCE


class TestObjectives:
    """Test suite for the report builder and the two objectives."""

    def test_report_shapes(self, tiny_scene_model, rng):
        """Test all four terms are per-sample vectors."""
        targets = (rng.random((6, 4)) < 0.5).astype(np.int8)
        report = build_report(tiny_scene_model.forward(rng.normal(size=(6, 6))), targets, "scene")
        assert report.batch_size == 6
        assert all(v.shape == (6,) for v in report.as_arrays().values())

    def test_objective_values(self, tiny_scene_model, rng):
        """Test both objectives against their defining batch means."""
        targets = (rng.random((5, 4)) < 0.5).astype(np.int8)
        report = build_report(tiny_scene_model.forward(rng.normal(size=(5, 6))), targets, "scene")
        v = report.as_arrays()
        np.testing.assert_allclose(generative_objective(report).item(),
                                   np.mean(v["recon_loss"] + v["gen_task_loss"] + v["kl_term"]))
        np.testing.assert_allclose(discriminative_objective(report).item(), v["disc_task_loss"].mean())
        np.testing.assert_allclose(discriminative_objective(report, [1, 3]).item(),
                                   v["disc_task_loss"][[1, 3]].mean())
        np.testing.assert_allclose(generative_task_objective(report).item(), v["gen_task_loss"].mean())

    def test_empty_subset_contributes_zero(self, tiny_scene_model, rng):
        """Test an empty subset gives a constant zero."""
        targets = (rng.random((3, 4)) < 0.5).astype(np.int8)
        report = build_report(tiny_scene_model.forward(rng.normal(size=(3, 6))), targets, "scene")
        assert discriminative_objective(report, []).item() == 0.0
        assert generative_task_objective(report, []).item() == 0.0

    def test_reconstruction_target_is_data(self, rng):
        """Test the descriptor enters the reconstruction loss as a constant target."""
        from src.core.grid_model import GridModel

        kwargs = dict(input_dim=6, output_shape=(4,), descriptor_dim=5, latent_dim=3, vae_hidden=4, seed=5)
        x, eps = rng.normal(size=(4, 6)), rng.normal(size=(4, 3))
        targets = np.ones((4, 4), dtype=np.int8)

        model_a = GridModel(**kwargs)
        report = build_report(model_a.forward(x, eps=eps), targets, "scene")
        via_report = backward(mean(report.recon_loss), [model_a.groups["theta"]])["theta"]

        model_b = GridModel(**kwargs)
        out = model_b.forward(x, eps=eps)
        manual = backward(mean(mse(out.reconstruction, out.descriptor.numpy())), [model_b.groups["theta"]])["theta"]
        for a, b in zip(via_report, manual):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_unknown_scenario(self):
        """Test an unknown scenario name is rejected."""
        with pytest.raises(InvalidDataError):
            task_loss_for("video")
