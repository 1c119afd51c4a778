#!/usr/bin/env python3
"""
Reverse-Mode Differentiation Tape
Records primitive operations on float64 numpy arrays in execution order and
replays their hand-written backward rules in reverse to accumulate gradients.

Every primitive accepts a leading batch dimension; elementwise primitives follow
numpy broadcasting and reduce gradients back to each input's shape.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import DimensionMismatch, EmptyTape

ArrayLike = Union[np.ndarray, float, int]


class Tensor:
    """A value on a tape, with the gradient slot filled during backward"""

    __slots__ = ('value', 'grad', 'requires_grad', 'tape', 'name')
    # ndarray <op> Tensor falls through to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, value: np.ndarray, tape: 'Tape', requires_grad: bool = False, name: Optional[str] = None):
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Operator sugar; everything routes through the module-level primitives

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Node:
    """One recorded operation: inputs, output and the rule mapping dL/dout to dL/dinputs"""

    __slots__ = ('inputs', 'output', 'backward_fn')

    def __init__(self, inputs: Sequence[Tensor], output: Tensor, backward_fn: Callable):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """
    Operation recorder.
    A disabled tape computes values only (evaluation and finite differences).
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.nodes: List[Node] = []
        # parameter name -> (store, leaf tensor); one leaf per parameter per tape
        self.param_leaves: Dict[str, Tuple[object, Tensor]] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def constant(self, value: ArrayLike) -> Tensor:
        return Tensor(np.asarray(value, dtype=np.float64), self, requires_grad=False)

    def variable(self, value: ArrayLike, name: Optional[str] = None) -> Tensor:
        """Leaf that receives a gradient (when the tape is enabled)"""
        return Tensor(np.asarray(value, dtype=np.float64), self, requires_grad=self.enabled, name=name)

    def lift(self, x) -> Tensor:
        if isinstance(x, Tensor):
            return x
        return self.constant(x)

    def record(self, value: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
        requires_grad = self.enabled and any(t.requires_grad for t in inputs)
        out = Tensor(value, self, requires_grad=requires_grad)
        if requires_grad:
            self.nodes.append(Node(tuple(inputs), out, backward_fn))
        return out


def backward(tape: Tape, loss: Tensor):
    """
    Propagate d(loss)/d(.) through the tape in reverse execution order.
    Gradients of parameter leaves are added into their ParamStore.
    """
    if not tape.nodes:
        raise EmptyTape("no operations recorded on tape")
    if loss.value.size != 1:
        raise DimensionMismatch(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape.nodes):
        g = node.output.grad
        if g is None:
            continue
        input_grads = node.backward_fn(g)
        for inp, gi in zip(node.inputs, input_grads):
            if gi is None or not inp.requires_grad:
                continue
            inp.grad = gi if inp.grad is None else inp.grad + gi

    for name, (store, leaf) in tape.param_leaves.items():
        if leaf.grad is not None:
            store.accumulate_grad(name, leaf.grad)


def _tape_of(*items) -> Tape:
    for x in items:
        if isinstance(x, Tensor):
            return x.tape
    raise TypeError("at least one operand must be a Tensor")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an input shape"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Elementwise arithmetic

def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    return tape.record(
        a.value + b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    return tape.record(
        a.value - b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    return tape.record(
        a.value * b.value, (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def div(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    out = a.value / b.value
    return tape.record(
        out, (a, b),
        lambda g: (_unbroadcast(g / b.value, a.shape), _unbroadcast(-g * out / b.value, b.shape)),
    )


def neg(x: Tensor) -> Tensor:
    return x.tape.record(-x.value, (x,), lambda g: (-g,))


def square(x: Tensor) -> Tensor:
    return x.tape.record(x.value * x.value, (x,), lambda g: (2.0 * g * x.value,))


def sqrt(x: Tensor) -> Tensor:
    """Subgradient 0 at x = 0"""
    out = np.sqrt(x.value)
    positive = out > 0
    safe = np.where(positive, out, 1.0)
    return x.tape.record(out, (x,), lambda g: (np.where(positive, 0.5 * g / safe, 0.0),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.value)
    return x.tape.record(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return x.tape.record(np.log(x.value), (x,), lambda g: (g / x.value,))


def maximum(x: Tensor, floor: float) -> Tensor:
    """max(x, floor) against a constant floor; gradient passes where x is above it"""
    above = x.value > floor
    return x.tape.record(np.where(above, x.value, floor), (x,), lambda g: (g * above,))


def where(condition: np.ndarray, a, b) -> Tensor:
    """Select a where condition holds, else b; condition is a constant boolean array"""
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    cond = np.asarray(condition, dtype=bool)
    return tape.record(
        np.where(cond, a.value, b.value), (a, b),
        lambda g: (_unbroadcast(g * cond, a.shape), _unbroadcast(g * ~cond, b.shape)),
    )


# Activations

def relu(x: Tensor) -> Tensor:
    active = x.value > 0
    return x.tape.record(x.value * active, (x,), lambda g: (g * active,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.value)
    return x.tape.record(out, (x,), lambda g: (g * (1.0 - out * out),))


def elu_plus_one(x: Tensor) -> Tensor:
    """x + 1 for x >= 0, exp(x) otherwise; strictly positive"""
    positive = x.value >= 0
    expx = np.exp(np.minimum(x.value, 0.0))
    out = np.where(positive, x.value + 1.0, expx)
    slope = np.where(positive, 1.0, expx)
    return x.tape.record(out, (x,), lambda g: (g * slope,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return x.tape.record(out, (x,), backward_fn)


# Linear algebra

def matmul(a, b) -> Tensor:
    """a @ b with a of shape (..., k) and b of shape (k, n)"""
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")

    def backward_fn(g):
        ga = g @ b.value.T
        gb = a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return tape.record(a.value @ b.value, (a, b), backward_fn)


def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """y = x W^T + b for a batch matrix x (B, in), W (out, in), b (out,)"""
    tape = _tape_of(x, W, b)
    x, W, b = tape.lift(x), tape.lift(W), tape.lift(b)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1] or b.shape != (W.shape[0],):
        raise DimensionMismatch(f"linear: x {x.shape}, W {W.shape}, b {b.shape}")

    def backward_fn(g):
        return g @ W.value, g.T @ x.value, g.sum(axis=0)

    return tape.record(x.value @ W.value.T + b.value, (x, W, b), backward_fn)


# Reductions and shape manipulation

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return x.tape.record(np.sum(x.value, axis=axis, keepdims=keepdims), (x,), backward_fn)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return div(sum(x, axis=axis, keepdims=keepdims), float(count))


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return x.tape.record(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def getitem(x: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def backward_fn(g):
        full = np.zeros(x.shape)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return x.tape.record(x.value[idx], (x,), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tape = _tape_of(*tensors)
    tensors = [tape.lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return tape.record(np.concatenate([t.value for t in tensors], axis=axis), tensors, backward_fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tape = _tape_of(*tensors)
    tensors = [tape.lift(t) for t in tensors]

    def backward_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return tape.record(np.stack([t.value for t in tensors], axis=axis), tensors, backward_fn)


def detach(x: Tensor) -> Tensor:
    """Same value, cut from the graph"""
    return x.tape.constant(x.value.copy())
