"""
Unit tests for the reverse-mode differentiation engine.
"""

import numpy as np
import pytest

from src.core.tensor import (
    ComputationTape,
    ParameterGroup,
    Tensor,
    add,
    backward,
    clip,
    concat,
    div,
    exp,
    gather,
    is_grad_enabled,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    sigmoid,
    slice_,
    softmax,
    stop_gradient,
    sub,
    sum_,
    take_along_axis,
)
from src.utils.exceptions import GradientError, ShapeError
from tests.conftest import FD_TOLERANCE, check_gradients

pytestmark = pytest.mark.unit

INSTANCES = 20


def away_from(values: np.ndarray, points, margin: float = 1e-2) -> np.ndarray:
    """Push entries off the kinks in ``points`` so central differences stay one-sided-free."""
    values = values.copy()
    for p in points:
        close = np.abs(values - p) < margin
        values[close] += 2 * margin
    return values


CASES = {
    "add": (lambda a, b: add(a, b), lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 4))]),
    "add_bias": (lambda a, b: add(a, b), lambda r: [r.normal(size=(3, 4)), r.normal(size=(4,))]),
    "add_scalar": (lambda a, b: add(a, b), lambda r: [r.normal(size=(3, 4)), r.normal(size=())]),
    "sub": (lambda a, b: sub(a, b), lambda r: [r.normal(size=(2, 3)), r.normal(size=(3,))]),
    "mul": (lambda a, b: mul(a, b), lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))]),
    "div": (lambda a, b: div(a, b), lambda r: [r.normal(size=(2, 3)), r.uniform(0.5, 2.0, size=(2, 3))]),
    "matmul": (lambda a, b: matmul(a, b), lambda r: [r.normal(size=(3, 4)), r.normal(size=(4, 2))]),
    "matmul_vector": (lambda a, b: matmul(a, b), lambda r: [r.normal(size=(4,)), r.normal(size=(4, 2))]),
    "neg": (lambda a: neg(a), lambda r: [r.normal(size=(5,))]),
    "relu": (lambda a: relu(a), lambda r: [away_from(r.normal(size=(3, 3)), [0.0])]),
    "sigmoid": (lambda a: sigmoid(a), lambda r: [3 * r.normal(size=(3, 3))]),
    "exp": (lambda a: exp(a), lambda r: [r.normal(size=(4,))]),
    "log": (lambda a: log(a), lambda r: [r.uniform(0.2, 3.0, size=(4,))]),
    "power": (lambda a: power(a, 3.0), lambda r: [r.uniform(0.2, 2.0, size=(4,))]),
    "clip": (lambda a: clip(a, -0.5, 0.5), lambda r: [away_from(r.normal(size=(6,)), [-0.5, 0.5])]),
    "sum_all": (lambda a: sum_(a), lambda r: [r.normal(size=(2, 3))]),
    "sum_axis": (lambda a: sum_(a, axis=-1), lambda r: [r.normal(size=(2, 3, 4))]),
    "sum_axes": (lambda a: sum_(a, axis=(-2, -1)), lambda r: [r.normal(size=(2, 3, 4))]),
    "mean_axis": (lambda a: mean(a, axis=1), lambda r: [r.normal(size=(2, 5))]),
    "reshape": (lambda a: reshape(a, (3, 2)), lambda r: [r.normal(size=(2, 3))]),
    "concat": (lambda a, b: concat([a, b], axis=1), lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 2))]),
    "slice": (lambda a: slice_(a, (slice(None), slice(1, 3))), lambda r: [r.normal(size=(2, 4))]),
    "gather_repeated": (lambda a: gather(a, [0, 2, 2, 1]), lambda r: [r.normal(size=(3, 2))]),
    "gather_axis1": (lambda a: gather(a, [1, 1], axis=1), lambda r: [r.normal(size=(2, 3))]),
    "take_along_axis": (
        lambda a: take_along_axis(a, np.array([[0, 2], [1, 1]]), axis=-1),
        lambda r: [r.normal(size=(2, 2, 3))],
    ),
    "softmax": (lambda a: softmax(a, axis=-1), lambda r: [r.normal(size=(2, 4))]),
    "log_softmax": (lambda a: log_softmax(a, axis=-1), lambda r: [r.normal(size=(2, 3, 4))]),
}


class TestPrimitiveGradients:
    """Central-difference checks of every differentiable primitive."""

    @pytest.mark.parametrize("name", sorted(CASES))
    def test_gradient_matches_finite_differences(self, name):
        """Test analytic gradients against central differences on random instances."""
        fn, make_inputs = CASES[name]
        for seed in range(INSTANCES):
            r = np.random.default_rng(seed)
            assert check_gradients(fn, make_inputs(r), r) < FD_TOLERANCE, f"{name} instance {seed}"

    def test_composite_expression(self, rng):
        """Test a chain mixing broadcasting, matmul and nonlinearities."""
        def fn(x, w, b):
            return log_softmax(sigmoid(matmul(x, w) + b) * 2.0, axis=-1)

        for _ in range(INSTANCES):
            inputs = [rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(5,))]
            assert check_gradients(fn, inputs, rng) < FD_TOLERANCE


class TestBroadcasting:
    """Test suite for the restricted broadcasting rule."""

    def test_equal_scalar_and_suffix_shapes(self):
        """Test the three conforming cases."""
        a = Tensor(np.ones((2, 3)))
        assert add(a, Tensor(np.ones((2, 3)))).shape == (2, 3)
        assert add(a, 2.0).shape == (2, 3)
        assert add(a, Tensor(np.ones(3))).shape == (2, 3)
        assert add(Tensor(np.ones(3)), a).shape == (2, 3)

    def test_non_suffix_shape_rejected(self):
        """Test that shapes sharing only a leading axis are rejected and named."""
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2,\)"):
            mul(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))

    def test_matmul_inner_mismatch(self):
        """Test matmul rejects mismatched inner dimensions."""
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_bias_gradient_sums_over_batch(self):
        """Test that a broadcast bias receives the batch-summed gradient."""
        b = Tensor(np.zeros(3), requires_grad=True)
        x = Tensor(np.ones((4, 3)))
        grads = backward(sum_(x + b), [ParameterGroup("b", [b])])
        np.testing.assert_array_equal(grads["b"][0], np.full(3, 4.0))


class TestStopGradient:
    """Test suite for the gradient barrier."""

    def test_values_pass_unchanged(self):
        """Test forward values are identical."""
        x = Tensor(np.arange(4.0), requires_grad=True)
        np.testing.assert_array_equal(stop_gradient(x).data, x.data)

    def test_gradient_is_exactly_zero(self):
        """Test nothing flows back through the barrier."""
        x = Tensor(np.arange(1.0, 4.0), requires_grad=True)
        loss = sum_(stop_gradient(x) * x)
        grads = backward(loss, [ParameterGroup("x", [x])])
        np.testing.assert_array_equal(grads["x"][0], np.arange(1.0, 4.0))

    def test_barrier_alone_gives_zero(self):
        """Test a loss reaching x only through the barrier has zero gradient."""
        x = Tensor(np.ones(3), requires_grad=True)
        grads = backward(sum_(exp(stop_gradient(x))), [ParameterGroup("x", [x])])
        np.testing.assert_array_equal(grads["x"][0], np.zeros(3))


class TestNoGrad:
    """Test suite for the recording switch."""

    def test_no_record_inside_block(self):
        """Test primitives do not record while disabled."""
        x = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            assert not is_grad_enabled()
            y = exp(x)
        assert is_grad_enabled()
        assert y._record is None
        assert not y.requires_grad


class TestBackward:
    """Test suite for the group-filtered backward pass."""

    def test_non_scalar_loss_rejected(self):
        """Test backward refuses a vector loss."""
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(GradientError, match="scalar"):
            backward(exp(x), [ParameterGroup("x", [x])])

    def test_group_member_without_grad_rejected(self):
        """Test a constant inside a group is an error."""
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(GradientError, match="does not require grad"):
            backward(sum_(x), [ParameterGroup("bad", [Tensor(np.ones(3))])])

    def test_only_requested_groups_touched(self):
        """Test parameters outside the requested groups keep grad None."""
        a = Tensor(np.ones(2), requires_grad=True)
        b = Tensor(np.full(2, 3.0), requires_grad=True)
        grads = backward(sum_(a * b), [ParameterGroup("a", [a])])
        assert set(grads) == {"a"}
        np.testing.assert_array_equal(a.grad, np.full(2, 3.0))
        assert b.grad is None

    def test_unreached_parameter_gets_zeros(self):
        """Test a requested tensor the loss does not depend on gets zeros."""
        a = Tensor(np.ones(2), requires_grad=True)
        c = Tensor(np.ones(5), requires_grad=True)
        grads = backward(sum_(a), [ParameterGroup("c", [c])])
        np.testing.assert_array_equal(grads["c"][0], np.zeros(5))

    def test_tape_is_reusable(self):
        """Test two replays of one traced tape give equal results for two losses."""
        x = Tensor(np.array([0.5, -1.0]), requires_grad=True)
        y = exp(x)
        first, second = sum_(y), sum_(y * y)
        tape = ComputationTape.trace(first, second)
        group = ParameterGroup("x", [x])
        g1 = tape.backward(first, [group])["x"][0]
        g2 = tape.backward(second, [group])["x"][0]
        g1_again = tape.backward(first, [group])["x"][0]
        np.testing.assert_array_equal(g1, np.exp(x.data))
        np.testing.assert_allclose(g2, 2 * np.exp(2 * x.data))
        np.testing.assert_array_equal(g1, g1_again)

    def test_split_group_replays_match_joint_replay(self):
        """Test backward over {A} then {B} on one tape equals one backward over {A, B}, bit for bit."""
        rng = np.random.default_rng(5)
        w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        v = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        x = rng.normal(size=(5, 3))
        loss = sum_(sigmoid(matmul(relu(matmul(x, w)), v)))
        tape = ComputationTape.trace(loss)
        group_a, group_b = ParameterGroup("a", [w]), ParameterGroup("b", [v])

        only_a = tape.backward(loss, [group_a])["a"][0].copy()
        only_b = tape.backward(loss, [group_b])["b"][0].copy()
        for t in (w, v):
            t.grad = None
        joint = tape.backward(loss, [group_a, group_b])
        np.testing.assert_array_equal(joint["a"][0], only_a)
        np.testing.assert_array_equal(joint["b"][0], only_b)

    def test_sigmoid_gradient_at_zero(self):
        """Test d sigmoid(w . x) / dw = 0.25 x where w . x = 0."""
        x = np.array([2.0, -3.0, 1.5])
        w = Tensor(np.array([1.5, 1.0, 0.0]), requires_grad=True)
        grads = backward(sum_(sigmoid(matmul(w, x.reshape(3, 1)))), [ParameterGroup("w", [w])])
        np.testing.assert_allclose(grads["w"][0], 0.25 * x, rtol=0, atol=1e-15)

    def test_gradients_accumulate(self):
        """Test repeated backward calls add into .grad."""
        x = Tensor(np.ones(2), requires_grad=True)
        group = ParameterGroup("x", [x])
        backward(sum_(x * 2.0), [group])
        backward(sum_(x * 3.0), [group])
        np.testing.assert_array_equal(x.grad, np.full(2, 5.0))
        group.zero_grads()
        assert x.grad is None

    def test_trace_in_creation_order(self):
        """Test the tape lists records in creation order."""
        x = Tensor(np.ones(2), requires_grad=True)
        y = exp(x)
        z = log(y + 1.0)
        tape = ComputationTape.trace(sum_(z))
        seqs = [node._record.seq for node in tape.nodes]
        assert seqs == sorted(seqs)
        assert len(tape) == 4

    def test_item_requires_single_element(self):
        """Test item() on a vector is a shape error."""
        with pytest.raises(ShapeError):
            Tensor(np.ones(2)).item()
