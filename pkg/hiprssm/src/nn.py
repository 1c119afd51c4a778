#!/usr/bin/env python3
"""
Network Core
Parameter storage, dense layers and activations on the tape, Adam, gradient
clipping and a central-difference gradient checker.
"""

from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

import autodiff as ad
from autodiff import Tape, Tensor, backward  # noqa: F401 - re-exported for callers
from errors import DimensionMismatch


class ParamStore:
    """
    Ordered name -> value map with a gradient buffer of identical shape per entry.
    Adam moment buffers live here too so a checkpoint captures the whole
    optimizer state.
    """

    def __init__(self):
        self._values: Dict[str, np.ndarray] = {}
        self._grads: Dict[str, np.ndarray] = {}
        self._adam_m: Dict[str, np.ndarray] = {}
        self._adam_v: Dict[str, np.ndarray] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def add(self, name: str, value) -> np.ndarray:
        if name in self._values:
            raise ValueError(f"parameter '{name}' already registered")
        arr = np.array(value, dtype=np.float64)
        self._values[name] = arr
        self._grads[name] = np.zeros_like(arr)
        self._adam_m[name] = np.zeros_like(arr)
        self._adam_v[name] = np.zeros_like(arr)
        return arr

    def names(self, prefix: Optional[str] = None) -> List[str]:
        if prefix is None:
            return list(self._values)
        return [n for n in self._values if n.startswith(prefix)]

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def set_value(self, name: str, value):
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._values[name].shape:
            raise DimensionMismatch(f"{name}: shape {value.shape} != {self._values[name].shape}")
        self._values[name][...] = value

    def accumulate_grad(self, name: str, grad: np.ndarray):
        self._grads[name] += grad

    def zero_grad(self):
        for g in self._grads.values():
            g.fill(0.0)

    def leaf(self, tape: Tape, name: str) -> Tensor:
        """The tape's leaf for a parameter; created once per tape so fan-out gradients sum"""
        entry = tape.param_leaves.get(name)
        if entry is None:
            leaf = Tensor(self._values[name], tape, requires_grad=tape.enabled, name=name)
            tape.param_leaves[name] = (self, leaf)
            return leaf
        return entry[1]

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self._grads.values())))

    def grad_norms(self) -> Dict[str, float]:
        return {n: float(np.linalg.norm(g)) for n, g in self._grads.items()}

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self._values.values()))

    def shapes(self) -> Dict[str, tuple]:
        return {n: v.shape for n, v in self._values.items()}

    def moments(self):
        return self._adam_m, self._adam_v


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)); shape (fan_out, fan_in)"""
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_out, fan_in))


def linear_forward(tape: Tape, W, b, x) -> Tensor:
    """y = x W^T + b; extra leading dimensions of x are flattened into the batch"""
    x = tape.lift(x)
    W = tape.lift(W)
    if x.ndim == 2:
        return ad.linear(x, W, b)
    if x.ndim < 1 or x.shape[-1] != W.shape[-1]:
        raise DimensionMismatch(f"linear: x {x.shape}, W {W.shape}")
    lead = x.shape[:-1]
    flat = ad.linear(ad.reshape(x, (-1, x.shape[-1])), W, b)
    return ad.reshape(flat, lead + (W.shape[0],))


ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    'relu': ad.relu,
    'elu_plus_one': ad.elu_plus_one,
    'softmax': ad.softmax,
    'tanh': ad.tanh,
}


def activation_forward(tape: Tape, kind: str, x) -> Tensor:
    if kind not in ACTIVATIONS:
        raise ValueError(f"unknown activation '{kind}' (expected one of {sorted(ACTIVATIONS)})")
    return ACTIVATIONS[kind](tape.lift(x))


class Dense:
    """Fully connected layer whose weights live in a ParamStore"""

    def __init__(self, store: ParamStore, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator, zero: bool = False):
        self.store = store
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        weights = np.zeros((out_dim, in_dim)) if zero else glorot_uniform(rng, in_dim, out_dim)
        store.add(f"{name}.W", weights)
        store.add(f"{name}.b", np.zeros(out_dim))

    def __call__(self, tape: Tape, x) -> Tensor:
        return linear_forward(
            tape,
            self.store.leaf(tape, f"{self.name}.W"),
            self.store.leaf(tape, f"{self.name}.b"),
            x,
        )


class MLP:
    """
    Stack of Dense layers with an activation between them.
    dims = [in, hidden..., out]; the output layer is linear unless output_activation is set.
    """

    def __init__(self, store: ParamStore, name: str, dims: Sequence[int], rng: np.random.Generator,
                 hidden_activation: str = 'relu', output_activation: Optional[str] = None,
                 zero_output: bool = False):
        if len(dims) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.layers = [
            Dense(store, f"{name}.{i}", dims[i], dims[i + 1], rng,
                  zero=zero_output and i == len(dims) - 2)
            for i in range(len(dims) - 1)
        ]
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation

    def __call__(self, tape: Tape, x) -> Tensor:
        h = x
        for layer in self.layers[:-1]:
            h = activation_forward(tape, self.hidden_activation, layer(tape, h))
        out = self.layers[-1](tape, h)
        if self.output_activation:
            out = activation_forward(tape, self.output_activation, out)
        return out


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, t: int = 1):
    """One bias-corrected Adam update in place; gradients are left untouched"""
    m_buf, v_buf = store.moments()
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name in store.names():
        g = store.grad(name)
        m = m_buf[name]
        v = v_buf[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        store.value(name)[...] -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Step counter and hyperparameters around adam_step"""

    def __init__(self, store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, t: int = 0):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = t

    def step(self):
        self.t += 1
        adam_step(self.store, self.lr, self.beta1, self.beta2, self.eps, self.t)


def clip_gradients(store: ParamStore, max_norm: float = 5.0) -> float:
    """Rescale all gradients so their global L2 norm is at most max_norm; returns the pre-clip norm"""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = store.grad_norm()
    if norm > max_norm:
        scale = max_norm / norm
        for name in store.names():
            store.grad(name)[...] *= scale
    return norm


def gradient_check(
    loss_fn: Callable[[Tape], Tensor],
    store: ParamStore,
    names: Optional[Iterable[str]] = None,
    eps: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    atol: float = 1e-7,
) -> Dict[str, float]:
    """
    Compare reverse-mode gradients with central finite differences.

    loss_fn builds the scalar loss on the tape it is given and must be a pure
    function of the store's current values.

    Returns:
        parameter name -> ||analytic - numeric|| / max(||analytic||, ||numeric||, atol),
        computed over the checked entries (all, or max_entries sampled per parameter)
    """
    names = list(store.names() if names is None else names)
    rng = rng or np.random.default_rng(0)

    store.zero_grad()
    tape = Tape()
    backward(tape, loss_fn(tape))
    analytic = {n: store.grad(n).copy() for n in names}

    errors: Dict[str, float] = {}
    for name in names:
        value = store.value(name)
        flat_idx = np.arange(value.size)
        if max_entries is not None and value.size > max_entries:
            flat_idx = np.sort(rng.choice(value.size, size=max_entries, replace=False))

        numeric = np.empty(flat_idx.size)
        for j, k in enumerate(flat_idx):
            idx = np.unravel_index(k, value.shape)
            original = value[idx]
            value[idx] = original + eps
            f_plus = float(loss_fn(Tape(enabled=False)).value)
            value[idx] = original - eps
            f_minus = float(loss_fn(Tape(enabled=False)).value)
            value[idx] = original
            numeric[j] = (f_plus - f_minus) / (2.0 * eps)

        a = analytic[name].reshape(-1)[flat_idx]
        denom = max(np.linalg.norm(a), np.linalg.norm(numeric), atol)
        errors[name] = float(np.linalg.norm(a - numeric) / denom)

    store.zero_grad()
    return errors
