#!/usr/bin/env python3
"""
Context Aggregation
Encodes the N transitions preceding a window and fuses them into a Gaussian
posterior over the latent task variable by closed-form Bayesian aggregation.

With prior N(mu0, var0) and per-tuple encodings N(r_n, s_n):
    var_post  = 1 / (1/var0 + sum_n 1/s_n)
    mean_post = mu0 + var_post * sum_n (r_n - mu0) / s_n
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

import autodiff as ad
from autodiff import Tape, Tensor
from errors import DimensionMismatch
from gaussian import DiagGaussian
from nn import Dense, ParamStore, activation_forward


@dataclass(frozen=True)
class ContextSet:
    """
    N transition tuples (obs, action, next_obs).
    Arrays are (N, d) or batched (B, N, d); N may be zero.
    """
    obs: np.ndarray
    actions: np.ndarray
    next_obs: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.obs, dtype=np.float64)
        actions = np.asarray(self.actions, dtype=np.float64)
        next_obs = np.asarray(self.next_obs, dtype=np.float64)
        if obs.ndim < 2 or obs.shape != next_obs.shape or actions.shape[:-1] != obs.shape[:-1]:
            raise DimensionMismatch(
                f"context arrays disagree: obs {obs.shape}, actions {actions.shape}, next_obs {next_obs.shape}"
            )
        object.__setattr__(self, 'obs', obs)
        object.__setattr__(self, 'actions', actions)
        object.__setattr__(self, 'next_obs', next_obs)

    @classmethod
    def from_tuples(cls, tuples: Sequence[Tuple], d_o: int, d_a: int) -> 'ContextSet':
        if not tuples:
            return cls.empty(d_o, d_a)
        obs, actions, next_obs = (np.stack([np.atleast_1d(t[i]) for t in tuples]) for i in range(3))
        return cls(obs, actions, next_obs)

    @classmethod
    def empty(cls, d_o: int, d_a: int) -> 'ContextSet':
        return cls(np.zeros((0, d_o)), np.zeros((0, d_a)), np.zeros((0, d_o)))

    @property
    def size(self) -> int:
        return self.obs.shape[-2]

    @property
    def d_o(self) -> int:
        return self.obs.shape[-1]

    @property
    def d_a(self) -> int:
        return self.actions.shape[-1]

    def features(self) -> np.ndarray:
        """Concatenated (obs, action, next_obs) rows fed to the encoder"""
        return np.concatenate([self.obs, self.actions, self.next_obs], axis=-1)

    def permuted(self, order: Sequence[int]) -> 'ContextSet':
        order = np.asarray(order)
        return ContextSet(self.obs[..., order, :], self.actions[..., order, :], self.next_obs[..., order, :])


@dataclass(frozen=True)
class TaskPrior:
    """Prior p0(l) over the latent task variable"""
    mu0: np.ndarray
    var0: np.ndarray

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=np.float64)
        var0 = np.asarray(self.var0, dtype=np.float64)
        if mu0.shape != var0.shape:
            raise DimensionMismatch("prior mean and variance shapes differ")
        if np.any(var0 <= 0):
            raise ValueError("prior variance must be strictly positive")
        object.__setattr__(self, 'mu0', mu0)
        object.__setattr__(self, 'var0', var0)

    @classmethod
    def standard(cls, d_l: int) -> 'TaskPrior':
        return cls(np.zeros(d_l), np.ones(d_l))

    @property
    def dim(self) -> int:
        return self.mu0.shape[0]

    def as_gaussian(self) -> DiagGaussian:
        return DiagGaussian(self.mu0, self.var0)


class ContextEncoder:
    """Shared per-tuple network: features -> ReLU hidden -> (r_n, elu+1 variance)"""

    def __init__(self, store: ParamStore, d_o: int, d_a: int, d_l: int, hidden: int,
                 rng: np.random.Generator, name: str = "context_encoder"):
        self.d_o = d_o
        self.d_a = d_a
        self.d_l = d_l
        self.hidden = Dense(store, f"{name}.hidden", 2 * d_o + d_a, hidden, rng)
        self.mean_head = Dense(store, f"{name}.mean", hidden, d_l, rng)
        self.var_head = Dense(store, f"{name}.var", hidden, d_l, rng)

    def __call__(self, tape: Tape, features) -> Tuple[Tensor, Tensor]:
        features = tape.lift(features)
        if features.shape[-1] != 2 * self.d_o + self.d_a:
            raise DimensionMismatch(
                f"context features have width {features.shape[-1]}, expected {2 * self.d_o + self.d_a}"
            )
        h = activation_forward(tape, 'relu', self.hidden(tape, features))
        r = self.mean_head(tape, h)
        var = activation_forward(tape, 'elu_plus_one', self.var_head(tape, h))
        return r, var


def encode_context(encoder: ContextEncoder, cs: ContextSet, tape: Optional[Tape] = None) -> List[DiagGaussian]:
    """One DiagGaussian per context tuple, in input order"""
    if cs.obs.ndim != 2:
        raise DimensionMismatch("encode_context expects an unbatched ContextSet")
    if cs.size < 1:
        raise ValueError("encode_context needs at least one tuple")
    if cs.d_o != encoder.d_o or cs.d_a != encoder.d_a:
        raise DimensionMismatch(
            f"context dims (d_o={cs.d_o}, d_a={cs.d_a}) do not match encoder (d_o={encoder.d_o}, d_a={encoder.d_a})"
        )
    r, var = encoder(tape or Tape(enabled=False), cs.features())
    return [DiagGaussian(r.value[n], var.value[n]) for n in range(cs.size)]


def aggregate(prior: TaskPrior, encodings: Sequence[DiagGaussian]) -> DiagGaussian:
    """Closed-form posterior over l given independent Gaussian encodings; N=0 returns the prior"""
    if not encodings:
        return prior.as_gaussian()
    for enc in encodings:
        if enc.dim != prior.dim:
            raise DimensionMismatch(f"encoding dim {enc.dim} != task dim {prior.dim}")
    precision = 1.0 / prior.var0 + np.sum([1.0 / e.var for e in encodings], axis=0)
    var = 1.0 / precision
    weighted = np.sum([(e.mean - prior.mu0) / e.var for e in encodings], axis=0)
    return DiagGaussian(prior.mu0 + var * weighted, var)


def aggregate_tensors(prior: TaskPrior, r: Tensor, var: Tensor) -> Tuple[Tensor, Tensor]:
    """
    Differentiable aggregation over the context axis.
    r and var are (..., N, d_l); returns posterior mean and variance (..., d_l).
    """
    tape = r.tape
    lead = r.shape[:-2]
    if r.shape[-2] == 0:
        mean = np.broadcast_to(prior.mu0, lead + (prior.dim,))
        return tape.constant(mean), tape.constant(np.broadcast_to(prior.var0, lead + (prior.dim,)))
    inv_var = ad.div(1.0, var)
    precision = ad.add(1.0 / prior.var0, ad.sum(inv_var, axis=-2))
    post_var = ad.div(1.0, precision)
    weighted = ad.sum(ad.mul(ad.sub(r, prior.mu0), inv_var), axis=-2)
    post_mean = ad.add(prior.mu0, ad.mul(post_var, weighted))
    return post_mean, post_var


def task_posterior_tensors(tape: Tape, encoder: ContextEncoder, prior: TaskPrior,
                           features) -> Tuple[Tensor, Tensor]:
    """Encoder plus aggregation on the tape; features are (..., N, 2 d_o + d_a)"""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-2] == 0:
        lead = features.shape[:-2]
        return (tape.constant(np.broadcast_to(prior.mu0, lead + (prior.dim,))),
                tape.constant(np.broadcast_to(prior.var0, lead + (prior.dim,))))
    r, var = encoder(tape, features)
    return aggregate_tensors(prior, r, var)


def task_posterior(encoder: ContextEncoder, prior: TaskPrior, cs: ContextSet,
                   tape: Optional[Tape] = None) -> DiagGaussian:
    """p(l | context) for one ContextSet"""
    if cs.size == 0:
        return prior.as_gaussian()
    return aggregate(prior, encode_context(encoder, cs, tape))
