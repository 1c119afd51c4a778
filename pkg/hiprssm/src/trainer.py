#!/usr/bin/env python3
"""
Training Loop
Shuffled minibatches over (context, target) windows with Bernoulli observation
masks, backpropagation through the whole target window, gradient clipping and
Adam. Every epoch draws from its own generator seeded by (seed, epoch), so a
resumed run continues bit-for-bit.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from autodiff import Tape, backward
from checkpoint import Checkpoint, restore_into, save_checkpoint
from config import TrainConfig
from data import NormalizationStats, WindowedDataset
from errors import NonFiniteLoss
from evaluation import evaluate
from events import EventEmitter, EventStage, create_silent_emitter
from model import SequenceModel, loss
from nn import Adam, clip_gradients

METRICS_COLUMNS = ["epoch", "train_loss", "grad_norm", "eval_rmse"]


@dataclass
class TrainResult:
    history: List[Dict[str, Any]] = field(default_factory=list)
    step: int = 0
    epoch: int = 0
    checkpoint_dir: Optional[Path] = None

    @property
    def losses(self) -> List[float]:
        return [row["train_loss"] for row in self.history]


def observation_mask(rng: np.random.Generator, batch: int, steps: int, imputation_rate: float) -> np.ndarray:
    """True where the observation is shown to the filter"""
    if imputation_rate <= 0:
        return np.ones((batch, steps), dtype=bool)
    return rng.random((batch, steps)) >= imputation_rate


def write_metrics(history: List[Dict[str, Any]], path: Path):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_COLUMNS)
        for row in history:
            writer.writerow([
                row["epoch"],
                repr(float(row["train_loss"])),
                repr(float(row["grad_norm"])),
                "" if row.get("eval_rmse") is None else repr(float(row["eval_rmse"])),
            ])


def _dump_diagnostics(out_dir: Path, model: SequenceModel, epoch: int, batch: int, value: float,
                      window_ids: List[int], metadata: Dict[str, Any]) -> Path:
    path = out_dir / "diagnostic.json"
    params = {name: float(np.linalg.norm(model.store.value(name))) for name in model.store.names()}
    with open(path, 'w', encoding='utf-8') as f:
        json.dump({
            "epoch": epoch,
            "batch": batch,
            "loss": repr(value),
            "windows": window_ids,
            "parameter_norms": params,
            "gradient_norms": model.store.grad_norms(),
        }, f, indent=2)
    save_checkpoint(out_dir / "diagnostic_checkpoint", model.store, step=0, metadata=metadata)
    return path


def train(
    model: SequenceModel,
    windows: WindowedDataset,
    cfg: TrainConfig,
    out_dir,
    stats: Optional[NormalizationStats] = None,
    eval_windows: Optional[WindowedDataset] = None,
    emitter: Optional[EventEmitter] = None,
    resume: Optional[Checkpoint] = None,
    metadata: Optional[Dict[str, Any]] = None,
    workers: int = 1,
) -> TrainResult:
    """
    Train in place and write checkpoint/ and metrics.csv under out_dir.

    Raises:
        NonFiniteLoss: a batch loss or gradient norm was NaN/inf; diagnostic.json
                       and the pre-step parameters are written first
    """
    if len(windows) == 0:
        raise ValueError("no training windows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    emitter = emitter or create_silent_emitter()
    metadata = dict(metadata or {})
    store = model.store
    mode = model.cfg.loss

    optimizer = Adam(store, cfg.lr)
    result = TrainResult()
    if resume is not None:
        restore_into(resume, store, with_optimizer=True)
        optimizer.t = resume.step
        result.step = resume.step
        result.epoch = resume.epoch
        result.history = list(resume.history)
        if resume.epoch >= cfg.epochs:
            emitter.warn(f"Checkpoint already at epoch {resume.epoch}; nothing to train")

    def checkpoint_metadata() -> Dict[str, Any]:
        return {**metadata, "epoch": result.epoch, "seed": cfg.seed,
                "train_config": cfg.model_dump(mode="json"), "history": result.history}

    n_windows = len(windows)
    batch_size = min(cfg.batch_size, n_windows)
    emitter.set_stage(EventStage.TRAIN, total_items=cfg.epochs)
    for epoch in range(result.epoch, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(n_windows)
        batch_losses, batch_norms = [], []
        for b, start in enumerate(range(0, n_windows, batch_size)):
            idx = order[start:start + batch_size]
            batch = windows.subset(idx)
            mask = observation_mask(rng, len(idx), batch.window_len, cfg.imputation_rate)

            tape = Tape()
            output = model.forward(tape, batch.context_set(), batch.target_obs, batch.target_actions, mask)
            value = loss(output, batch.target_deltas, batch.prediction_mask, mode)
            loss_value = float(value.value)

            store.zero_grad()
            if np.isfinite(loss_value):
                backward(tape, value)
                norm = clip_gradients(store, cfg.clip_norm)
            else:
                norm = float("nan")
            if not (np.isfinite(loss_value) and np.isfinite(norm)):
                dump = _dump_diagnostics(out_dir, model, epoch + 1, b, loss_value,
                                         [int(i) for i in idx], checkpoint_metadata())
                emitter.error(f"Non-finite loss at epoch {epoch + 1}, batch {b}", loss=loss_value)
                raise NonFiniteLoss(f"non-finite loss {loss_value!r} (grad norm {norm!r}) at epoch "
                                    f"{epoch + 1}, batch {b}", dump_path=str(dump))

            optimizer.step()
            result.step = optimizer.t
            batch_losses.append(loss_value)
            batch_norms.append(norm)

        row = {
            "epoch": epoch + 1,
            "train_loss": float(np.mean(batch_losses)),
            "grad_norm": float(np.mean(batch_norms)),
            "eval_rmse": None,
        }
        if eval_windows is not None and stats is not None and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            row["eval_rmse"] = evaluate(model, eval_windows, stats, "full", workers=workers).one_step_rmse
        result.history.append(row)
        result.epoch = epoch + 1

        result.checkpoint_dir = out_dir / "checkpoint"
        save_checkpoint(result.checkpoint_dir, store, result.step, checkpoint_metadata())
        write_metrics(result.history, out_dir / "metrics.csv")
        emitter.metric(
            epoch + 1, f"epoch {epoch + 1}",
            message=f"epoch {epoch + 1}/{cfg.epochs}: loss {row['train_loss']:.5f}, grad norm {row['grad_norm']:.3f}"
                    + (f", eval rmse {row['eval_rmse']:.5f}" if row["eval_rmse"] is not None else ""),
            **{k: v for k, v in row.items() if v is not None},
        )

    if result.checkpoint_dir is None:
        result.checkpoint_dir = out_dir / "checkpoint"
        save_checkpoint(result.checkpoint_dir, store, result.step, checkpoint_metadata())
        write_metrics(result.history, out_dir / "metrics.csv")
    emitter.complete_stage(f"Trained {result.epoch} epochs ({result.step} steps)")
    return result
