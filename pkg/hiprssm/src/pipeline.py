#!/usr/bin/env python3
"""
HiP-RSSM Pipeline
Stage orchestration behind the CLI: generate -> train -> evaluate -> infer -> export.

Each stage reads and writes plain directories:
    dataset dir     manifest.json + obs/actions/hidden .bin
    run dir         checkpoint/, metrics.csv, config.json, train.log.jsonl
    eval dir        eval_report.csv, eval.log.jsonl
    export dir      embeddings.csv, embeddings_pca.csv, inference.csv
"""

import csv
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from checkpoint import Checkpoint, load_checkpoint, restore_into
from config import (RunConfig, apply_overrides, config_to_dict, dump_config, load_config,
                    validate_config)
from data import TrajectoryDataset, build_windows, normalize, read_dataset, simulate, write_dataset
from errors import CheckpointMismatch, TrajectoryTooShort
from evaluation import PROTOCOLS, EvalReport, evaluate_protocols, write_report_csv
from events import (ConsoleEventHandler, EventEmitter, EventStage, JsonlEventHandler,
                    create_fanout_emitter, create_silent_emitter)
from inference import WindowPosterior, export_embeddings, sliding_inference
from model import SequenceModel, build_model
from trainer import TrainResult, train


def create_run_emitter(out_dir, log_name: str, verbose: bool = False,
                       console: bool = True) -> EventEmitter:
    """Console output plus a fresh JSONL log under out_dir"""
    log_path = Path(out_dir) / f"{log_name}.log.jsonl"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.unlink(missing_ok=True)
    handlers = [JsonlEventHandler(log_path)]
    if console:
        handlers.insert(0, ConsoleEventHandler(verbose))
    return create_fanout_emitter(*handlers)


def resolve_config(config_path=None, overrides: Sequence[str] = (), seed: Optional[int] = None,
                   seed_section: str = "train", checkpoint_dir=None) -> RunConfig:
    """
    Config for a command. Without a config file, commands that read a
    checkpoint start from the run config stored in it.
    """
    if config_path is None and checkpoint_dir is not None:
        stored = load_checkpoint(checkpoint_dir).manifest.get("run_config")
        if stored is not None:
            raw = apply_overrides(json.loads(json.dumps(stored)), overrides)
            if seed is not None:
                raw.setdefault(seed_section, {})["seed"] = seed
            return validate_config(raw)
    return load_config(config_path, overrides, seed=seed, seed_section=seed_section)


def load_dataset(data_dir) -> TrajectoryDataset:
    """Read a dataset directory and standardize it with its stored training statistics"""
    ds = read_dataset(data_dir)
    return normalize(ds, "train", ds.stats)


def _check_window_fit(ds: TrajectoryDataset, cfg: RunConfig):
    N = cfg.model.context_size
    if ds.traj_len < 2 * N:
        raise TrajectoryTooShort(
            f"dataset trajectories have {ds.traj_len} steps; model.context_size={N} needs at least {2 * N}")


def checkpoint_metadata(model: SequenceModel, cfg: RunConfig, ds: TrajectoryDataset) -> Dict[str, object]:
    """Everything eval/infer need to rebuild the model next to its parameters"""
    return {
        "model_kind": model.kind,
        "baseline": cfg.train.baseline,
        "d_o": ds.d_o,
        "d_a": ds.d_a,
        "system": ds.system,
        "param_names": list(ds.param_names),
        "model_config": cfg.model.model_dump(mode="json"),
        "run_config": config_to_dict(cfg),
        "normalization": ds.stats.to_dict(),
    }


# Stage: generate

def run_generate(cfg: RunConfig, out_dir, emitter: Optional[EventEmitter] = None) -> TrajectoryDataset:
    """Simulate the benchmark and write the raw dataset to out_dir"""
    emitter = emitter or create_silent_emitter()
    ds = simulate(cfg.sim, emitter)
    write_dataset(ds, out_dir)

    emitter.set_stage(EventStage.GENERATE)
    emitter.success(f"Wrote {ds.n_traj} trajectories of {ds.traj_len} steps to {out_dir}",
                    n_train=ds.n_train, n_test=ds.n_traj - ds.n_train)
    stats = ds.stats
    emitter.metric(0, "obs", f"obs mean {np.round(stats.obs_mean, 4).tolist()} "
                             f"std {np.round(stats.obs_std, 4).tolist()}")
    emitter.metric(0, "delta", f"delta mean {np.round(stats.delta_mean, 6).tolist()} "
                               f"std {np.round(stats.delta_std, 6).tolist()}")
    return ds


# Stage: train

def run_train(cfg: RunConfig, data_dir, out_dir, checkpoint_dir=None,
              emitter: Optional[EventEmitter] = None) -> TrainResult:
    """
    Train cfg.train.baseline on the training split; the held-out split is
    scored after every cfg.train.eval_every epochs.

    Raises:
        CheckpointMismatch: the resume checkpoint was written for another model or dataset
        NonFiniteLoss: see trainer.train
    """
    emitter = emitter or create_silent_emitter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(data_dir)
    _check_window_fit(ds, cfg)
    N = cfg.model.context_size

    windows = build_windows(ds, N, ds.train_indices)
    eval_windows = build_windows(ds, N, ds.test_indices) if cfg.train.eval_every else None
    model = build_model(cfg.model, ds.d_o, ds.d_a, cfg.train.baseline, seed=cfg.train.seed)
    model.set_normalization(ds.stats.obs_std, ds.stats.delta_mean, ds.stats.delta_std)

    resume: Optional[Checkpoint] = None
    if checkpoint_dir is not None:
        resume = load_checkpoint(checkpoint_dir)
        _check_checkpoint(resume, ds, cfg.train.baseline)
        emitter.info(f"Resuming from {checkpoint_dir} at epoch {resume.epoch}")

    with open(out_dir / "config.json", 'w', encoding='utf-8') as f:
        f.write(dump_config(cfg) + "\n")

    emitter.info(f"{model.kind} ({cfg.train.baseline}): {model.store.num_parameters()} parameters, "
                 f"{len(windows)} training windows of {N} steps")
    return train(model, windows, cfg.train, out_dir, stats=ds.stats, eval_windows=eval_windows,
                 emitter=emitter, resume=resume, metadata=checkpoint_metadata(model, cfg, ds),
                 workers=cfg.eval.workers)


def _check_checkpoint(ckpt: Checkpoint, ds: TrajectoryDataset, baseline: Optional[str] = None):
    meta = ckpt.manifest
    for key, value in (("d_o", ds.d_o), ("d_a", ds.d_a)):
        if key in meta and meta[key] != value:
            raise CheckpointMismatch(f"checkpoint {key}={meta[key]} but dataset has {key}={value}")
    if baseline is not None and meta.get("baseline", baseline) != baseline:
        raise CheckpointMismatch(f"checkpoint holds a '{meta['baseline']}' model, config asks for '{baseline}'")


def load_trained_model(checkpoint_dir, cfg: RunConfig, ds: TrajectoryDataset) -> SequenceModel:
    """
    Rebuild the model a checkpoint was trained as and load its parameters.

    Raises:
        CheckpointMismatch: dataset dims or parameter shapes differ from the checkpoint
    """
    ckpt = load_checkpoint(checkpoint_dir)
    _check_checkpoint(ckpt, ds)
    baseline = ckpt.manifest.get("baseline", cfg.train.baseline)
    model = build_model(cfg.model, ds.d_o, ds.d_a, baseline, seed=cfg.train.seed)
    restore_into(ckpt, model.store, with_optimizer=False)
    model.set_normalization(ds.stats.obs_std, ds.stats.delta_mean, ds.stats.delta_std)
    return model


# Stage: evaluate

def run_evaluate(cfg: RunConfig, data_dir, checkpoint_dir, out_dir,
                 protocols: Optional[Sequence[str]] = None,
                 emitter: Optional[EventEmitter] = None) -> EvalReport:
    """Score the checkpoint on the held-out windows and write eval_report.csv"""
    emitter = emitter or create_silent_emitter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(data_dir)
    _check_window_fit(ds, cfg)
    model = load_trained_model(checkpoint_dir, cfg, ds)
    protocols = list(protocols or cfg.eval.protocols)
    unknown = [p for p in protocols if p not in PROTOCOLS]
    if unknown:
        raise ValueError(f"unknown protocols {unknown} (expected {list(PROTOCOLS)})")

    windows = build_windows(ds, cfg.model.context_size, ds.test_indices)
    emitter.set_stage(EventStage.EVALUATE, total_items=len(protocols))
    report = EvalReport()
    for i, protocol in enumerate(protocols):
        part = evaluate_protocols(model, windows, ds.stats, [protocol], cfg.eval.horizon, cfg.eval.seed,
                                  cfg.eval.batch_size, cfg.eval.workers)
        report = report.merge(part)
        emitter.set_progress(i + 1, item_name=protocol,
                             message=f"{protocol}: {len(windows)} windows in {part.wall_clock:.2f}s")

    path = write_report_csv(report, out_dir / "eval_report.csv")
    for protocol, horizon, rmse in report.rows():
        if protocol != "multi_step" or horizon in (1, cfg.eval.horizon):
            emitter.metric(len(protocols), protocol, f"{protocol:<10} h={horizon:<3} rmse {rmse:.6f}",
                           horizon=horizon, rmse=rmse)
    emitter.complete_stage(f"Wrote {path}")
    return report


# Stage: infer / export

def _check_trajectory(ds: TrajectoryDataset, trajectory: int):
    if not 0 <= trajectory < ds.n_traj:
        raise ValueError(f"trajectory {trajectory} out of range (dataset has {ds.n_traj})")


def write_inference_csv(posteriors: Sequence[WindowPosterior], param_names: Sequence[str], path) -> Path:
    """
    One row per window: trajectory, window, start, hidden_<param>..., mu_<i>..., var_<i>...,
    then pred_<step>_<dim>... with the raw-unit delta predicted at each step of the window.
    """
    path = Path(path)
    d_l = len(posteriors[0].task_mean) if posteriors else 0
    steps, d_o = posteriors[0].predictions.shape if posteriors else (0, 0)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(["trajectory", "window", "start"] + [f"hidden_{p}" for p in param_names]
                        + [f"mu_{i}" for i in range(d_l)] + [f"var_{i}" for i in range(d_l)]
                        + [f"pred_{t}_{j}" for t in range(steps) for j in range(d_o)])
        for p in posteriors:
            writer.writerow([p.trajectory, p.window, p.start]
                            + [repr(float(x)) for x in p.hidden_summary]
                            + [repr(float(x)) for x in p.task_mean]
                            + [repr(float(x)) for x in p.task_var]
                            + [repr(float(x)) for x in p.predictions.reshape(-1)])
    return path


def run_infer(cfg: RunConfig, data_dir, checkpoint_dir, out_dir, trajectory: int,
              include_first: bool = False, emitter: Optional[EventEmitter] = None) -> List[WindowPosterior]:
    """Sliding-window task inference over one trajectory; writes inference.csv"""
    emitter = emitter or create_silent_emitter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(data_dir)
    _check_trajectory(ds, trajectory)
    model = load_trained_model(checkpoint_dir, cfg, ds)
    if trajectory in ds.train_indices:
        emitter.warn(f"trajectory {trajectory} belongs to the training split")

    posteriors = sliding_inference(model, ds, trajectory, cfg.model.context_size, include_first)
    emitter.set_stage(EventStage.INFER, total_items=len(posteriors))
    for i, p in enumerate(posteriors):
        hidden = ", ".join(f"{n}={v:.3f}" for n, v in zip(ds.param_names, p.hidden_summary))
        emitter.set_progress(i + 1, item_name=f"window {p.window}",
                             message=f"window {p.window} @ {p.start}: {hidden}, "
                                     f"mean task var {float(np.mean(p.task_var)):.4f}")
    path = write_inference_csv(posteriors, ds.param_names, out_dir / "inference.csv")
    emitter.complete_stage(f"Inferred {len(posteriors)} windows of trajectory {trajectory}; wrote {path}")
    return posteriors


def run_export(cfg: RunConfig, data_dir, checkpoint_dir, out_dir,
               trajectories: Optional[Sequence[int]] = None,
               emitter: Optional[EventEmitter] = None) -> Tuple[List[WindowPosterior], Dict[str, Optional[float]]]:
    """
    Task-posterior means of every held-out window (or of the given
    trajectories) with their PCA projection.
    """
    emitter = emitter or create_silent_emitter()
    ds = load_dataset(data_dir)
    _check_window_fit(ds, cfg)
    model = load_trained_model(checkpoint_dir, cfg, ds)
    trajectories = list(ds.test_indices if trajectories is None else trajectories)
    for t in trajectories:
        _check_trajectory(ds, t)

    emitter.set_stage(EventStage.EXPORT, total_items=len(trajectories))
    posteriors: List[WindowPosterior] = []
    for i, t in enumerate(trajectories):
        posteriors.extend(sliding_inference(model, ds, t, cfg.model.context_size))
        emitter.set_progress(i + 1, item_name=f"trajectory {t}")

    correlations = export_embeddings(posteriors, ds.param_names, out_dir)
    for name, rho in correlations.items():
        if rho is None:
            emitter.metric(len(trajectories), name, f"PC1 vs {name}: constant, no rank correlation")
        else:
            emitter.metric(len(trajectories), name, f"PC1 vs {name}: spearman rho {rho:+.3f}", rho=rho)
    emitter.complete_stage(f"Exported {len(posteriors)} window embeddings to {out_dir}")
    return posteriors, correlations
