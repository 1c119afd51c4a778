#!/usr/bin/env python3
"""
HiP-RSSM Model
Observation encoder, context posterior, unrolled recurrent cell and decoder,
plus the training losses and the feedforward NP baseline that shares the
context path.

Predictions are normalized deltas o_{t+1} - o_t decoded from the prior belief
after each time update.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

import autodiff as ad
from autodiff import Tape, Tensor
from cell import (BeliefState, TaskTransform, TransitionModel, initial_belief,
                  observation_model_dims, observation_update_tensors, time_update_tensors)
from config import ModelConfig
from context import ContextEncoder, ContextSet, TaskPrior, task_posterior_tensors
from errors import DimensionMismatch, EmptyMask
from gaussian import DiagGaussian, FactorizedBelief
from nn import MLP, Dense, ParamStore, activation_forward

LOG_2PI = float(np.log(2.0 * np.pi))
BASELINES = ("none", "context_free", "np")


@dataclass
class ForwardOutput:
    """Per-step predictions for a batch of windows"""
    pred_mean: Tensor                      # (B, T, d_o)
    pred_var: Optional[Tensor] = None      # (B, T, d_o), nll mode only
    priors: List[BeliefState] = field(default_factory=list)
    posteriors: List[BeliefState] = field(default_factory=list)
    task_mean: Optional[Tensor] = None     # (B, d_l)
    task_var: Optional[Tensor] = None

    @property
    def steps(self) -> int:
        return self.pred_mean.shape[1]

    def task_posterior(self) -> Optional[DiagGaussian]:
        if self.task_mean is None:
            return None
        return DiagGaussian(self.task_mean.value, self.task_var.value)


def _batched(context: ContextSet, target_obs, target_actions, obs_mask):
    """Promote unbatched window inputs to a batch of one"""
    target_obs = np.asarray(target_obs, dtype=np.float64)
    target_actions = np.asarray(target_actions, dtype=np.float64)
    obs_mask = np.asarray(obs_mask, dtype=bool)
    if target_obs.ndim == 2:
        target_obs, target_actions, obs_mask = target_obs[None], target_actions[None], obs_mask[None]
        context = ContextSet(context.obs[None], context.actions[None], context.next_obs[None])
    if target_obs.shape[:2] != target_actions.shape[:2] or target_obs.shape[:2] != obs_mask.shape:
        raise DimensionMismatch(
            f"target obs {target_obs.shape}, actions {target_actions.shape}, mask {obs_mask.shape} disagree")
    if target_obs.shape[1] < 1:
        raise DimensionMismatch("target window must hold at least one step")
    if context.obs.shape[0] != target_obs.shape[0]:
        raise DimensionMismatch("context and target batch sizes differ")
    return context, target_obs, target_actions, obs_mask


class SequenceModel:
    """Shared plumbing: parameter store, dimensions, normalization constants"""

    kind = "base"
    uses_context = True

    def __init__(self, cfg: ModelConfig, d_o: int, d_a: int):
        self.cfg = cfg
        self.d_o = d_o
        self.d_a = d_a
        self.store = ParamStore()
        self.obs_std = np.ones(d_o)
        self.delta_mean = np.zeros(d_o)
        self.delta_std = np.ones(d_o)

    def set_normalization(self, obs_std, delta_mean, delta_std):
        self.obs_std = np.asarray(obs_std, dtype=np.float64)
        self.delta_mean = np.asarray(delta_mean, dtype=np.float64)
        self.delta_std = np.asarray(delta_std, dtype=np.float64)

    def forward(self, tape: Tape, context: ContextSet, target_obs, target_actions, obs_mask) -> ForwardOutput:
        raise NotImplementedError


class HiPRSSM(SequenceModel):
    """Full model; task_variant 'none' gives the context-free recurrent cell"""

    kind = "hiprssm"

    def __init__(self, cfg: ModelConfig, d_o: int, d_a: int, seed: int = 0):
        super().__init__(cfg, d_o, d_a)
        rng = np.random.default_rng(seed)
        store = self.store
        self.m = m = observation_model_dims(cfg.latent_state_dim)
        self.uses_context = cfg.task_variant != "none"

        self.obs_hidden = Dense(store, "obs_encoder.hidden", d_o, cfg.obs_encoder_hidden, rng)
        self.obs_mean_head = Dense(store, "obs_encoder.mean", cfg.obs_encoder_hidden, m, rng)
        self.obs_var_head = Dense(store, "obs_encoder.var", cfg.obs_encoder_hidden, m, rng)

        self.task_prior = TaskPrior.standard(cfg.task_dim)
        self.context_encoder = (
            ContextEncoder(store, d_o, d_a, cfg.task_dim, cfg.context_encoder_hidden, rng)
            if self.uses_context else None
        )
        self.transition = TransitionModel(store, m, d_a, cfg.num_bases, cfg.control_hidden, rng,
                                          trans_noise_init=cfg.trans_noise_init)
        self.task_transform = TaskTransform(store, cfg.task_variant, m, cfg.task_dim, cfg.num_bases,
                                            cfg.task_hidden, rng)

        self.decoder_hidden = Dense(store, "decoder.hidden", 2 * m, cfg.decoder_hidden, rng)
        self.decoder_mean = Dense(store, "decoder.mean", cfg.decoder_hidden, d_o, rng)
        if cfg.loss == "nll":
            self.decoder_var_hidden = Dense(store, "decoder.var_hidden", 3 * m, cfg.decoder_hidden, rng)
            self.decoder_var = Dense(store, "decoder.var", cfg.decoder_hidden, d_o, rng)

    def encode_observation_tensors(self, tape: Tape, obs) -> Tuple[Tensor, Tensor]:
        obs = tape.lift(obs)
        if obs.shape[-1] != self.d_o:
            raise DimensionMismatch(f"observation has {obs.shape[-1]} dims, expected {self.d_o}")
        h = activation_forward(tape, "relu", self.obs_hidden(tape, obs))
        mean = self.obs_mean_head(tape, h)
        var = activation_forward(tape, "elu_plus_one", self.obs_var_head(tape, h))
        return mean, var

    def encode_observation(self, obs) -> DiagGaussian:
        mean, var = self.encode_observation_tensors(Tape(enabled=False), np.asarray(obs, dtype=np.float64))
        return DiagGaussian(mean.value, var.value)

    def decode_tensors(self, tape: Tape, belief: BeliefState) -> Tuple[Tensor, Optional[Tensor]]:
        h = activation_forward(tape, "relu", self.decoder_hidden(tape, belief.mean))
        mean = self.decoder_mean(tape, h)
        if self.cfg.loss != "nll":
            return mean, None
        moments = ad.concat([belief.var_u, belief.var_l, belief.cov_s], axis=-1)
        hv = activation_forward(tape, "relu", self.decoder_var_hidden(tape, moments))
        var = activation_forward(tape, "elu_plus_one", self.decoder_var(tape, hv))
        return mean, var

    def decode(self, belief: FactorizedBelief) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        tape = Tape(enabled=False)
        mean, var = self.decode_tensors(tape, BeliefState.from_factorized(tape, belief))
        return mean.value, (None if var is None else var.value)

    def task_posterior_tensors(self, tape: Tape, context: ContextSet):
        if not self.uses_context:
            return None, None
        if context.d_o != self.d_o or context.d_a != self.d_a:
            raise DimensionMismatch("context dimensions do not match the model")
        return task_posterior_tensors(tape, self.context_encoder, self.task_prior, context.features())

    def forward(self, tape: Tape, context: ContextSet, target_obs, target_actions, obs_mask) -> ForwardOutput:
        """
        Filter through a batch of windows.

        At each step: observation update (skipped where the mask is false), time
        update with the step's action and the task posterior, decode the prior.
        """
        context, target_obs, target_actions, obs_mask = _batched(context, target_obs, target_actions, obs_mask)
        B, T = obs_mask.shape
        task_mean, task_var = self.task_posterior_tensors(tape, context)

        w_all, w_var_all = self.encode_observation_tensors(tape, target_obs)
        belief = initial_belief(tape, self.m, B, self.cfg.initial_variance)
        means, variances, priors, posteriors = [], [], [], []
        for t in range(T):
            visible = obs_mask[:, t]
            if visible.any():
                w = ad.getitem(w_all, (slice(None), t))
                w_var = ad.getitem(w_var_all, (slice(None), t))
                updated = observation_update_tensors(belief, w, w_var)
                belief = updated if visible.all() else updated.select(visible, belief)
            posteriors.append(belief)

            belief = time_update_tensors(self.transition, self.task_transform, belief,
                                         target_actions[:, t], task_mean, task_var)
            priors.append(belief)
            mean, var = self.decode_tensors(tape, belief)
            means.append(mean)
            variances.append(var)

        pred_var = ad.stack(variances, axis=1) if self.cfg.loss == "nll" else None
        return ForwardOutput(ad.stack(means, axis=1), pred_var, priors, posteriors, task_mean, task_var)


class NPBaseline(SequenceModel):
    """
    Context posterior plus a feedforward decoder on (o_t, a_t, mu_l), no recurrence.
    At masked steps the decoder reads its own running observation estimate.
    """

    kind = "np"

    def __init__(self, cfg: ModelConfig, d_o: int, d_a: int, seed: int = 0):
        super().__init__(cfg, d_o, d_a)
        rng = np.random.default_rng(seed)
        width = cfg.decoder_hidden
        in_dim = d_o + d_a + cfg.task_dim
        self.task_prior = TaskPrior.standard(cfg.task_dim)
        self.context_encoder = ContextEncoder(self.store, d_o, d_a, cfg.task_dim, cfg.context_encoder_hidden, rng)
        self.decoder = MLP(self.store, "np_decoder", [in_dim, width, width, d_o], rng)
        if cfg.loss == "nll":
            self.var_decoder = MLP(self.store, "np_decoder_var", [in_dim, width, d_o], rng,
                                   output_activation="elu_plus_one")

    def forward(self, tape: Tape, context: ContextSet, target_obs, target_actions, obs_mask) -> ForwardOutput:
        context, target_obs, target_actions, obs_mask = _batched(context, target_obs, target_actions, obs_mask)
        B, T = obs_mask.shape
        task_mean, task_var = task_posterior_tensors(tape, self.context_encoder, self.task_prior,
                                                     context.features())

        running = tape.constant(np.zeros((B, self.d_o)))
        means, variances = [], []
        for t in range(T):
            visible = obs_mask[:, t]
            observed = tape.constant(target_obs[:, t])
            if visible.all():
                current = observed
            elif not visible.any():
                current = running
            else:
                current = ad.where(visible[:, None], observed, running)
            features = ad.concat([current, tape.constant(target_actions[:, t]), task_mean], axis=-1)
            mean = self.decoder(tape, features)
            means.append(mean)
            if self.cfg.loss == "nll":
                variances.append(self.var_decoder(tape, features))
            running = current + (mean * self.delta_std + self.delta_mean) / self.obs_std

        pred_var = ad.stack(variances, axis=1) if self.cfg.loss == "nll" else None
        return ForwardOutput(ad.stack(means, axis=1), pred_var, task_mean=task_mean, task_var=task_var)


def build_model(cfg: ModelConfig, d_o: int, d_a: int, baseline: str = "none", seed: int = 0) -> SequenceModel:
    """Model for a baseline name: none (full), context_free (task path removed) or np"""
    if baseline not in BASELINES:
        raise ValueError(f"unknown baseline '{baseline}' (expected one of {BASELINES})")
    if baseline == "np":
        return NPBaseline(cfg, d_o, d_a, seed)
    if baseline == "context_free":
        cfg = cfg.model_copy(update={"task_variant": "none"})
    return HiPRSSM(cfg, d_o, d_a, seed)


def _loss_mask(prediction_mask, shape) -> np.ndarray:
    mask = np.asarray(prediction_mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[None]
    if mask.shape != shape[:2]:
        raise DimensionMismatch(f"prediction mask {mask.shape} does not match predictions {shape[:2]}")
    if not mask.any():
        raise EmptyMask("prediction mask selects no steps")
    return mask


def _as_target(true_deltas, shape) -> np.ndarray:
    target = np.asarray(true_deltas, dtype=np.float64)
    if target.ndim == 2:
        target = target[None]
    if target.shape != shape:
        raise DimensionMismatch(f"targets {target.shape} do not match predictions {shape}")
    return target


def rmse_loss(pred_mean: Tensor, true_deltas, prediction_mask) -> Tensor:
    """sqrt of the mean squared error over unmasked steps and all dimensions"""
    mask = _loss_mask(prediction_mask, pred_mean.shape)
    target = _as_target(true_deltas, pred_mean.shape)
    weight = mask[..., None].astype(np.float64)
    count = float(mask.sum() * pred_mean.shape[-1])
    squared = ad.square(ad.sub(pred_mean, target)) * weight
    return ad.sqrt(ad.div(ad.sum(squared), count))


def nll_loss(pred_mean: Tensor, pred_var: Tensor, true_deltas, prediction_mask) -> Tensor:
    """Mean Gaussian negative log-likelihood per unmasked step and dimension"""
    mask = _loss_mask(prediction_mask, pred_mean.shape)
    target = _as_target(true_deltas, pred_mean.shape)
    weight = mask[..., None].astype(np.float64)
    count = float(mask.sum() * pred_mean.shape[-1])
    per_entry = 0.5 * (ad.log(pred_var) + ad.square(ad.sub(pred_mean, target)) / pred_var + LOG_2PI)
    return ad.div(ad.sum(per_entry * weight), count)


def loss(output: ForwardOutput, true_deltas, prediction_mask, mode: str = "rmse") -> Tensor:
    if mode == "rmse":
        return rmse_loss(output.pred_mean, true_deltas, prediction_mask)
    if mode == "nll":
        if output.pred_var is None:
            raise ValueError("nll loss needs a model built with loss='nll'")
        return nll_loss(output.pred_mean, output.pred_var, true_deltas, prediction_mask)
    raise ValueError(f"unknown loss mode '{mode}'")


def predict(model: SequenceModel, context: ContextSet, target_obs, target_actions,
            obs_mask) -> ForwardOutput:
    """Forward pass without gradient recording"""
    return model.forward(Tape(enabled=False), context, target_obs, target_actions, obs_mask)
