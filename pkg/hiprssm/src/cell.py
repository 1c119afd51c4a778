#!/usr/bin/env python3
"""
Recurrent Cell
Task-conditioned time update and factorized Kalman observation update over a
latent state split into an observation half (upper) and a memory half (lower).

Every matrix acting on the state uses four diagonal m x m blocks
    [[a11, a12],
     [a21, a22]]
so the three-vector covariance (var_u, var_l, cov_s) stays closed under both
updates and every operation is elementwise.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

import autodiff as ad
from autodiff import Tape, Tensor
from errors import DimensionMismatch, OddLatentDim
from gaussian import VAR_FLOOR, DiagGaussian, FactorizedBelief, check_block_psd
from nn import MLP, Dense, ParamStore, activation_forward

TASK_VARIANTS = ("linear", "locally_linear", "nonlinear", "none")
INITIAL_VARIANCE = 10.0


@dataclass
class BeliefState:
    """Factorized belief as tape tensors; arrays are batched (B, 2m) and (B, m)"""
    mean: Tensor
    var_u: Tensor
    var_l: Tensor
    cov_s: Tensor

    @property
    def m(self) -> int:
        return self.var_u.shape[-1]

    @property
    def upper(self) -> Tensor:
        return ad.getitem(self.mean, (Ellipsis, slice(0, self.m)))

    @property
    def lower(self) -> Tensor:
        return ad.getitem(self.mean, (Ellipsis, slice(self.m, 2 * self.m)))

    @classmethod
    def from_factorized(cls, tape: Tape, belief: FactorizedBelief) -> 'BeliefState':
        return cls(
            tape.constant(belief.mean.copy()),
            tape.constant(belief.var_u.copy()),
            tape.constant(belief.var_l.copy()),
            tape.constant(belief.cov_s.copy()),
        )

    def to_factorized(self) -> FactorizedBelief:
        return FactorizedBelief(self.mean.value, self.var_u.value, self.var_l.value, self.cov_s.value)

    def select(self, condition: np.ndarray, other: 'BeliefState') -> 'BeliefState':
        """Per batch element: self where condition holds, other elsewhere"""
        cond = np.asarray(condition, dtype=bool)[:, None]
        return BeliefState(
            ad.where(cond, self.mean, other.mean),
            ad.where(cond, self.var_u, other.var_u),
            ad.where(cond, self.var_l, other.var_l),
            ad.where(cond, self.cov_s, other.cov_s),
        )


def observation_model_dims(n: int) -> int:
    """Latent observation size m for latent state size n (H = [I_m 0])"""
    if n < 2 or n % 2:
        raise OddLatentDim(f"latent state size {n} must be a positive even number")
    return n // 2


def initial_belief(tape: Tape, m: int, batch: int, variance: float = INITIAL_VARIANCE) -> BeliefState:
    return BeliefState.from_factorized(tape, FactorizedBelief.initial(m, variance, batch=batch))


def _blocks_apply(blocks, upper: Tensor, lower: Tensor) -> Tuple[Tensor, Tensor]:
    a11, a12, a21, a22 = blocks
    return a11 * upper + a12 * lower, a21 * upper + a22 * lower


def _blocks_covariance(blocks, var_u, var_l, cov_s) -> Tuple[Tensor, Tensor, Optional[Tensor]]:
    """A Sigma A^T in factorized form; cov_s may be None (block-diagonal input)"""
    a11, a12, a21, a22 = blocks
    out_u = a11 * a11 * var_u + a12 * a12 * var_l
    out_l = a21 * a21 * var_u + a22 * a22 * var_l
    out_s = a11 * a21 * var_u + a12 * a22 * var_l
    if cov_s is not None:
        out_u = out_u + 2.0 * a11 * a12 * cov_s
        out_l = out_l + 2.0 * a21 * a22 * cov_s
        out_s = out_s + (a11 * a22 + a12 * a21) * cov_s
    return out_u, out_l, out_s


class TransitionModel:
    """
    Locally linear transition: K block bases mixed by softmax(coeff(z+)),
    a control network b(a) and a learned diagonal transition noise.
    """

    BLOCKS = ("a11", "a12", "a21", "a22")

    def __init__(self, store: ParamStore, m: int, d_a: int, num_bases: int,
                 control_hidden: Sequence[int], rng: np.random.Generator,
                 trans_noise_init: float = 0.1, name: str = "transition"):
        if num_bases < 1:
            raise ValueError("need at least one transition basis")
        self.store = store
        self.m = m
        self.d_a = d_a
        self.num_bases = num_bases
        self.name = name

        start = {"a11": 1.0, "a12": 0.2, "a21": -0.2, "a22": 1.0}
        for block in self.BLOCKS:
            store.add(f"{name}.{block}", start[block] + rng.uniform(-0.05, 0.05, size=(num_bases, m)))
        self.coefficients_head = Dense(store, f"{name}.coefficients", 2 * m, num_bases, rng)
        self.control_net = MLP(store, f"{name}.control", [d_a, *control_hidden, 2 * m], rng, zero_output=True)
        store.add(f"{name}.noise", np.full(2 * m, np.log(trans_noise_init)))

    def coefficients(self, tape: Tape, z_post_mean: Tensor) -> Tensor:
        return activation_forward(tape, 'softmax', self.coefficients_head(tape, z_post_mean))

    def blocks(self, tape: Tape, z_post_mean: Tensor) -> Tuple[Tensor, ...]:
        alpha = self.coefficients(tape, z_post_mean)
        return tuple(ad.matmul(alpha, self.store.leaf(tape, f"{self.name}.{b}")) for b in self.BLOCKS)

    def control(self, tape: Tape, action) -> Tensor:
        action = tape.lift(action)
        if action.shape[-1] != self.d_a:
            raise DimensionMismatch(f"action has {action.shape[-1]} dims, expected {self.d_a}")
        return self.control_net(tape, action)

    def noise(self, tape: Tape) -> Tuple[Tensor, Tensor]:
        noise = activation_forward(tape, 'elu_plus_one', self.store.leaf(tape, f"{self.name}.noise"))
        return ad.getitem(noise, slice(0, self.m)), ad.getitem(noise, slice(self.m, 2 * self.m))


class TaskTransform:
    """
    Maps the task posterior N(mu_l, var_l) into an additive mean term and an
    additive factorized covariance term for the time update.

        linear          C mu_l,    C diag(var_l) C^T        (one block matrix, d_l = 2m)
        locally_linear  C_t mu_l,  C_t diag(var_l) C_t^T    (K block matrices mixed by beta(z+))
        nonlinear       f_mu(mu_l), (f_sigma upper, f_sigma lower, 0)
        none            no contribution (context-free cell)
    """

    def __init__(self, store: ParamStore, variant: str, m: int, d_l: int, num_bases: int,
                 hidden: int, rng: np.random.Generator, name: str = "task_transform"):
        if variant not in TASK_VARIANTS:
            raise ValueError(f"unknown task variant '{variant}'")
        if variant in ("linear", "locally_linear") and d_l != 2 * m:
            raise DimensionMismatch(f"{variant} task transform needs d_l = 2m = {2 * m}, got {d_l}")
        self.store = store
        self.variant = variant
        self.m = m
        self.d_l = d_l
        self.name = name

        if variant == "linear":
            for block in TransitionModel.BLOCKS:
                store.add(f"{name}.{block}", rng.uniform(-0.05, 0.05, size=m))
        elif variant == "locally_linear":
            for block in TransitionModel.BLOCKS:
                store.add(f"{name}.{block}", rng.uniform(-0.05, 0.05, size=(num_bases, m)))
            self.beta_head = Dense(store, f"{name}.coefficients", 2 * m, num_bases, rng)
        elif variant == "nonlinear":
            self.f_mu = MLP(store, f"{name}.f_mu", [d_l, hidden, 2 * m], rng)
            self.f_sigma = MLP(store, f"{name}.f_sigma", [d_l, hidden, 2 * m], rng,
                               output_activation='elu_plus_one')

    @property
    def enabled(self) -> bool:
        return self.variant != "none"

    def _matrix(self, tape: Tape, z_post_mean: Tensor) -> Tuple[Tensor, ...]:
        leaves = [self.store.leaf(tape, f"{self.name}.{b}") for b in TransitionModel.BLOCKS]
        if self.variant == "linear":
            return tuple(leaves)
        beta = activation_forward(tape, 'softmax', self.beta_head(tape, z_post_mean))
        return tuple(ad.matmul(beta, leaf) for leaf in leaves)

    def terms(self, tape: Tape, task_mean: Tensor, task_var: Tensor, z_post_mean: Tensor):
        """(mean term (B, 2m), task_u, task_l, task_s or None); all None for the none variant"""
        if not self.enabled:
            return None, None, None, None
        if task_mean.shape[-1] != self.d_l:
            raise DimensionMismatch(f"task belief has {task_mean.shape[-1]} dims, expected {self.d_l}")
        m = self.m
        if self.variant == "nonlinear":
            mean_term = self.f_mu(tape, task_mean)
            sigma = self.f_sigma(tape, task_var)
            return (mean_term,
                    ad.getitem(sigma, (Ellipsis, slice(0, m))),
                    ad.getitem(sigma, (Ellipsis, slice(m, 2 * m))),
                    None)

        blocks = self._matrix(tape, z_post_mean)
        mu_u = ad.getitem(task_mean, (Ellipsis, slice(0, m)))
        mu_l = ad.getitem(task_mean, (Ellipsis, slice(m, 2 * m)))
        upper, lower = _blocks_apply(blocks, mu_u, mu_l)
        var_u = ad.getitem(task_var, (Ellipsis, slice(0, m)))
        var_l = ad.getitem(task_var, (Ellipsis, slice(m, 2 * m)))
        task_u, task_l, task_s = _blocks_covariance(blocks, var_u, var_l, None)
        return ad.concat([upper, lower], axis=-1), task_u, task_l, task_s


def time_update_tensors(tm: TransitionModel, tt: TaskTransform, belief: BeliefState, action,
                        task_mean: Optional[Tensor], task_var: Optional[Tensor],
                        check_psd: bool = True) -> BeliefState:
    """Prior for the next step from the current posterior, the action and the task belief"""
    tape = belief.mean.tape
    if belief.m != tm.m:
        raise DimensionMismatch(f"belief has m={belief.m}, transition model has m={tm.m}")
    z = belief.mean
    blocks = tm.blocks(tape, z)

    upper, lower = _blocks_apply(blocks, belief.upper, belief.lower)
    mean = ad.concat([upper, lower], axis=-1) + tm.control(tape, action)
    var_u, var_l, cov_s = _blocks_covariance(blocks, belief.var_u, belief.var_l, belief.cov_s)

    if tt.enabled:
        mean_term, task_u, task_l, task_s = tt.terms(tape, task_mean, task_var, z)
        mean = mean + mean_term
        var_u = var_u + task_u
        var_l = var_l + task_l
        if task_s is not None:
            cov_s = cov_s + task_s

    noise_u, noise_l = tm.noise(tape)
    var_u = ad.maximum(var_u + noise_u, VAR_FLOOR)
    var_l = ad.maximum(var_l + noise_l, VAR_FLOOR)
    if check_psd:
        check_block_psd(var_u.value, var_l.value, cov_s.value, "time_update")
    return BeliefState(mean, var_u, var_l, cov_s)


def observation_update_tensors(belief: BeliefState, w, obs_var, check_psd: bool = True) -> BeliefState:
    """Kalman correction with H = [I 0]: only the upper half is observed"""
    tape = belief.mean.tape
    w, obs_var = tape.lift(w), tape.lift(obs_var)
    if w.shape != belief.var_u.shape or obs_var.shape != belief.var_u.shape:
        raise DimensionMismatch(f"observation {w.shape} / variance {obs_var.shape} vs belief {belief.var_u.shape}")

    denom = belief.var_u + obs_var
    q_u = belief.var_u / denom
    q_l = belief.cov_s / denom
    residual = w - belief.upper

    mean = ad.concat([belief.upper + q_u * residual, belief.lower + q_l * residual], axis=-1)
    var_u = ad.maximum((1.0 - q_u) * belief.var_u, VAR_FLOOR)
    cov_s = (1.0 - q_u) * belief.cov_s
    var_l = ad.maximum(belief.var_l - q_l * belief.cov_s, VAR_FLOOR)
    if check_psd:
        check_block_psd(var_u.value, var_l.value, cov_s.value, "observation_update")
    return BeliefState(mean, var_u, var_l, cov_s)


def _as_batch(belief: FactorizedBelief) -> Tuple[FactorizedBelief, bool]:
    if belief.mean.ndim == 1:
        return FactorizedBelief(belief.mean[None], belief.var_u[None], belief.var_l[None], belief.cov_s[None]), True
    return belief, False


def _unbatch(belief: FactorizedBelief, squeeze: bool) -> FactorizedBelief:
    if not squeeze:
        return belief
    return FactorizedBelief(belief.mean[0], belief.var_u[0], belief.var_l[0], belief.cov_s[0])


def transition_matrix(tm: TransitionModel, z_post_mean) -> Tuple[np.ndarray, ...]:
    """Mixed (a11, a12, a21, a22) blocks at a posterior mean"""
    tape = Tape(enabled=False)
    z = np.atleast_2d(np.asarray(z_post_mean, dtype=np.float64))
    blocks = tm.blocks(tape, tape.constant(z))
    squeeze = np.ndim(z_post_mean) == 1
    return tuple(b.value[0] if squeeze else b.value for b in blocks)


def control_input(tm: TransitionModel, action) -> np.ndarray:
    """b(a) for one action vector or a batch of them"""
    action = np.asarray(action, dtype=np.float64)
    out = tm.control(Tape(enabled=False), np.atleast_2d(action)).value
    return out[0] if action.ndim == 1 else out


def time_update(tm: TransitionModel, tt: TaskTransform, belief: FactorizedBelief, action,
                task: Optional[DiagGaussian]) -> FactorizedBelief:
    """Value-level time update (no gradient recording)"""
    tape = Tape(enabled=False)
    batch, squeeze = _as_batch(belief)
    B = batch.mean.shape[0]
    action = np.broadcast_to(np.asarray(action, dtype=np.float64), (B, tm.d_a))
    task_mean = task_var = None
    if tt.enabled:
        if task is None:
            raise ValueError(f"{tt.variant} task transform needs a task belief")
        task_mean = tape.constant(np.broadcast_to(task.mean, (B, task.dim)))
        task_var = tape.constant(np.broadcast_to(task.var, (B, task.dim)))
    out = time_update_tensors(tm, tt, BeliefState.from_factorized(tape, batch), action, task_mean, task_var)
    return _unbatch(out.to_factorized(), squeeze)


def observation_update(belief_prior: FactorizedBelief, w, obs_var) -> FactorizedBelief:
    """Value-level observation update (no gradient recording)"""
    tape = Tape(enabled=False)
    batch, squeeze = _as_batch(belief_prior)
    shape = batch.var_u.shape
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), shape)
    obs_var = np.broadcast_to(np.asarray(obs_var, dtype=np.float64), shape)
    if np.any(obs_var <= 0):
        raise ValueError("observation variance must be strictly positive")
    out = observation_update_tensors(BeliefState.from_factorized(tape, batch), w, obs_var)
    return _unbatch(out.to_factorized(), squeeze)
