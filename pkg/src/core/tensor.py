"""
Reverse-mode automatic differentiation for the GRID project.

Every numeric primitive used by the model, the losses and the trainer is
defined here on top of NumPy float64 arrays. Each primitive applied to an
input that requires gradients appends a record to the computation tape;
``backward`` replays the records reachable from a scalar loss in strict
reverse creation order and returns gradients for the requested parameter
groups only.

Broadcasting rules (binary elementwise primitives ``add``, ``sub``, ``mul``,
``div``): two operands conform when their shapes are equal, when one of them
is a scalar (shape ``()``), or when the shape of one is a trailing suffix of
the other's (bias add over a batch). Any other pair raises ``ShapeError``.
"""

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.exceptions import GradientError, ShapeError

_SEQUENCE = itertools.count()
_STATE = threading.local()

BackwardFn = Callable[[np.ndarray, Tuple[bool, ...]], Tuple[Optional[np.ndarray], ...]]
ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


def is_grad_enabled() -> bool:
    """Whether primitives currently record onto the tape."""
    return getattr(_STATE, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block (evaluation forward passes)."""
    previous = is_grad_enabled()
    _STATE.enabled = False
    try:
        yield
    finally:
        _STATE.enabled = previous


class TapeRecord:
    """One primitive application: its inputs and local-derivative closure."""

    __slots__ = ("seq", "op", "inputs", "backward_fn")

    def __init__(self, seq: int, op: str, inputs: Tuple["Tensor", ...], backward_fn: BackwardFn) -> None:
        self.seq = seq
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    """
    N-dimensional float64 array participating in a recorded computation.

    Attributes:
        data: The values as a NumPy array of dtype float64.
        requires_grad: Whether gradients flow to this tensor.
        grad: Accumulated gradient (same shape as data) or None.
        name: Optional label used in error messages and checkpoints.
    """

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None) -> None:
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._record: Optional[TapeRecord] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def values(self) -> np.ndarray:
        """Flat view of the values."""
        return self.data.reshape(-1)

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """A copy of the values."""
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __getitem__(self, key) -> "Tensor":
        return slice_(self, key)

    def sum(self, axis=None) -> "Tensor":
        return sum_(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value: ArrayLike) -> Tensor:
    """Wrap a constant (never requires gradients) unless it already is a Tensor."""
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._record = TapeRecord(next(_SEQUENCE), op, inputs, backward_fn)
    return out


def _broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...], op: str) -> Tuple[int, ...]:
    if a == b:
        return a
    if len(a) == 0:
        return b
    if len(b) == 0:
        return a
    if len(a) > len(b) and a[len(a) - len(b):] == b:
        return a
    if len(b) > len(a) and b[len(b) - len(a):] == a:
        return b
    raise ShapeError(f"{op}: shapes {a} and {b} do not conform")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    return grad


# --- elementwise binary primitives -------------------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")

    def backward(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(g, b.shape) if needs[1] else None)

    return _make("add", a.data + b.data, (a, b), backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")

    def backward(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(-g, b.shape) if needs[1] else None)

    return _make("sub", a.data - b.data, (a, b), backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")

    def backward(g, needs):
        return (_unbroadcast(g * b.data, a.shape) if needs[0] else None,
                _unbroadcast(g * a.data, b.shape) if needs[1] else None)

    return _make("mul", a.data * b.data, (a, b), backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "div")

    def backward(g, needs):
        return (_unbroadcast(g / b.data, a.shape) if needs[0] else None,
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if needs[1] else None)

    return _make("div", a.data / b.data, (a, b), backward)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    Matrix product. ``a`` is (n, k) or (k,), ``b`` is (k, m); the contraction
    runs over the last axis of ``a`` and the first axis of ``b``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def backward(g, needs):
        ga = g @ b.data.T if needs[0] else None
        gb = None
        if needs[1]:
            gb = np.outer(a.data, g) if a.ndim == 1 else a.data.T @ g
        return ga, gb

    return _make("matmul", a.data @ b.data, (a, b), backward)


# --- elementwise unary primitives --------------------------------------------------


def neg(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _make("neg", -x.data, (x,), lambda g, needs: (-g,))


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0.0), (x,), lambda g, needs: (g * mask,))


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    s = _stable_sigmoid(x.data)
    return _make("sigmoid", s, (x,), lambda g, needs: (g * s * (1.0 - s),))


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)
    return _make("exp", e, (x,), lambda g, needs: (g * e,))


def log(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _make("log", np.log(x.data), (x,), lambda g, needs: (g / x.data,))


def power(x: ArrayLike, exponent: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    x = as_tensor(x)
    p = float(exponent)
    return _make("power", x.data ** p, (x,), lambda g, needs: (g * p * x.data ** (p - 1.0),))


def clip(x: ArrayLike, low: float, high: float) -> Tensor:
    """Clamp into [low, high]; gradient passes only where no clamping happened."""
    x = as_tensor(x)
    inside = (x.data >= low) & (x.data <= high)
    return _make("clip", np.clip(x.data, low, high), (x,), lambda g, needs: (g * inside,))


def stop_gradient(x: ArrayLike) -> Tensor:
    """Gradient barrier: identical values forward, exactly zero gradient backward."""
    x = as_tensor(x)
    return _make("stop_gradient", x.data.copy(), (x,), lambda g, needs: (np.zeros_like(x.data),))


# --- reductions and shape primitives -----------------------------------------------


def _normalize_axis(axis, ndim: int) -> Optional[Tuple[int, ...]]:
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    normalized = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for a {ndim}-d tensor")
        normalized.append(ax % ndim)
    return tuple(sorted(set(normalized)))


def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axes: Optional[Tuple[int, ...]]) -> np.ndarray:
    if axes is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axes), shape)


def sum_(x: ArrayLike, axis=None) -> Tensor:
    """Sum over ``axis`` (None for all axes; int or tuple of ints)."""
    x = as_tensor(x)
    axes = _normalize_axis(axis, x.ndim)
    out = x.data.sum(axis=axes)
    return _make("sum", np.asarray(out), (x,),
                 lambda g, needs: (np.array(_expand_reduced(g, x.shape, axes)),))


def mean(x: ArrayLike, axis=None) -> Tensor:
    """Arithmetic mean over ``axis`` (same axis convention as ``sum_``)."""
    x = as_tensor(x)
    axes = _normalize_axis(axis, x.ndim)
    count = x.size if axes is None else int(np.prod([x.shape[ax] for ax in axes]))
    out = x.data.mean(axis=axes)
    return _make("mean", np.asarray(out), (x,),
                 lambda g, needs: (np.array(_expand_reduced(g, x.shape, axes)) / count,))


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from e
    return _make("reshape", out, (x,), lambda g, needs: (g.reshape(x.shape),))


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; all other dimensions must agree."""
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat: needs at least one tensor")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: shapes {[p.shape for p in parts]} do not conform on axis {axis}") from e
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g, needs):
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concat", out, tuple(parts), backward)


def slice_(x: ArrayLike, key) -> Tensor:
    """Basic indexing (ints and slices)."""
    x = as_tensor(x)
    try:
        out = x.data[key]
    except IndexError as e:
        raise ShapeError(f"slice: index {key!r} invalid for shape {x.shape}") from e

    def backward(g, needs):
        full = np.zeros_like(x.data)
        full[key] = g
        return (full,)

    return _make("slice", np.array(out), (x,), backward)


def gather(x: ArrayLike, indices: Sequence[int], axis: int = 0) -> Tensor:
    """Select entries ``indices`` along ``axis``; repeated indices accumulate gradient."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < -x.shape[axis] or idx.max() >= x.shape[axis]):
        raise ShapeError(f"gather: indices out of range for axis {axis} of shape {x.shape}")
    out = np.take(x.data, idx, axis=axis)

    def backward(g, needs):
        full = np.zeros_like(x.data)
        np.add.at(full, (slice(None),) * (axis % x.ndim) + (idx,), g)
        return (full,)

    return _make("gather", out, (x,), backward)


def take_along_axis(x: ArrayLike, indices: np.ndarray, axis: int = -1) -> Tensor:
    """
    Pick one entry per position along ``axis``; ``indices`` has the shape of
    ``x`` with ``axis`` removed (per-pixel class lookup).
    """
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    ax = axis % x.ndim
    expected = x.shape[:ax] + x.shape[ax + 1:]
    if idx.shape != expected:
        raise ShapeError(f"take_along_axis: indices shape {idx.shape} does not match {expected} for {x.shape}")
    expanded = np.expand_dims(idx, ax)
    out = np.take_along_axis(x.data, expanded, axis=ax).squeeze(ax)

    def backward(g, needs):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, expanded, np.expand_dims(g, ax), axis=ax)
        return (full,)

    return _make("take_along_axis", out, (x,), backward)


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    """Softmax over ``axis``."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g, needs):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make("softmax", s, (x,), backward)


def log_softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    """Numerically stable log of the softmax over ``axis``."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def backward(g, needs):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _make("log_softmax", out, (x,), backward)


# --- parameter groups and the backward pass ----------------------------------------


@dataclass
class ParameterGroup:
    """
    Named set of trainable tensors playing one role in the model.

    Attributes:
        name: Group name (e.g. "theta", "gamma", "beta_e").
        tensors: The member tensors.
    """

    name: str
    tensors: List[Tensor] = field(default_factory=list)

    @property
    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors)

    def zero_grads(self) -> None:
        for t in self.tensors:
            t.zero_grad()


def zero_grads(groups: Iterable[ParameterGroup]) -> None:
    """Clear accumulated gradients of every tensor in ``groups``."""
    for group in groups:
        group.zero_grads()


class ComputationTape:
    """
    Ordered record of the primitives that produced one or more outputs.

    The tape is traced from its roots once and can then be replayed backward
    any number of times, for different losses among its roots and different
    parameter groups; replays never mutate the tape.
    """

    def __init__(self, nodes: List[Tensor]) -> None:
        self.nodes = nodes

    @classmethod
    def trace(cls, *roots: Tensor) -> "ComputationTape":
        """Collect every recorded tensor reachable from ``roots``, in creation order."""
        seen = set()
        nodes: List[Tensor] = []
        stack = [r for r in roots if r._record is not None]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(i for i in t._record.inputs if i._record is not None and id(i) not in seen)
        nodes.sort(key=lambda t: t._record.seq)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor, groups: Iterable[ParameterGroup]) -> Dict[str, List[np.ndarray]]:
        """
        Gradient of ``loss`` with respect to exactly the tensors in ``groups``.

        Gradients are added into each requested tensor's ``grad``; no other
        tensor is touched.

        Args:
            loss: Scalar tensor produced by this tape's primitives.
            groups: Parameter groups to differentiate.

        Returns:
            Map from group name to one gradient array per member tensor.

        Raises:
            GradientError: If the loss is not scalar or a group member does
                not require gradients.
        """
        if loss.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
        groups = list(groups)
        targets: Dict[int, Tensor] = {}
        for group in groups:
            for t in group.tensors:
                if not t.requires_grad:
                    raise GradientError(f"tensor {t.name or t!r} in group {group.name!r} does not require grad")
                targets[id(t)] = t

        needed = set(targets)
        for node in self.nodes:
            if any(id(i) in needed for i in node._record.inputs):
                needed.add(id(node))

        adjoints: Dict[int, np.ndarray] = {}
        if id(loss) in needed:
            adjoints[id(loss)] = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = adjoints.pop(id(node), None)
            if g is None:
                continue
            record = node._record
            needs = tuple(id(i) in needed for i in record.inputs)
            for inp, gi, need in zip(record.inputs, record.backward_fn(g, needs), needs):
                if not need or gi is None:
                    continue
                if id(inp) in adjoints:
                    adjoints[id(inp)] = adjoints[id(inp)] + gi
                else:
                    adjoints[id(inp)] = np.array(gi, dtype=np.float64)

        result: Dict[str, List[np.ndarray]] = {}
        for group in groups:
            grads = []
            for t in group.tensors:
                g = adjoints.get(id(t))
                g = np.zeros_like(t.data) if g is None else g.reshape(t.shape)
                t.grad = g.copy() if t.grad is None else t.grad + g
                grads.append(g.copy())
            result[group.name] = grads
        return result


def backward(loss: Tensor, groups: Iterable[ParameterGroup]) -> Dict[str, List[np.ndarray]]:
    """Trace the tape behind ``loss`` and replay it for ``groups``."""
    return ComputationTape.trace(loss).backward(loss, groups)
