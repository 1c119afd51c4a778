#!/usr/bin/env python3
"""
Trajectory Data
Changing-dynamics trajectory generation, normalization, (context, target)
windowing and the on-disk dataset format.

Dataset directory:
    manifest.json   format_version, dtype, system, dt, counts, dims, param names,
                    generating sim config, normalization stats
    obs.bin         float64 little-endian, row-major [n_traj, traj_len, d_o]
    actions.bin     [n_traj, traj_len, d_a]
    hidden.bin      [n_traj, traj_len, d_h]
"""

import json
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import SimConfig
from context import ContextSet
from errors import ConfigError, ManifestMismatch, ShortFile, TrajectoryTooShort
from events import EventEmitter, EventStage, create_silent_emitter
from simulator_interface import SimulatorRegistry, SystemSimulator

# Simulator plugins live next to src/
plugins_path = Path(__file__).parent.parent / 'plugins'
if plugins_path.exists() and str(plugins_path) not in sys.path:
    sys.path.insert(0, str(plugins_path))
import spring_mass  # noqa: F401,E402
import pendulum  # noqa: F401,E402

FORMAT_VERSION = 1
DTYPE_TAG = "float64-le"
STD_FLOOR = 1e-6
ARRAY_FILES = {"obs": "obs.bin", "actions": "actions.bin", "hidden": "hidden.bin"}


@dataclass
class NormalizationStats:
    """Per-dimension mean/std from the training split"""
    obs_mean: np.ndarray
    obs_std: np.ndarray
    action_mean: np.ndarray
    action_std: np.ndarray
    delta_mean: np.ndarray
    delta_std: np.ndarray

    def to_dict(self) -> Dict[str, List[float]]:
        return {k: [float(x) for x in getattr(self, k)] for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[float]]) -> 'NormalizationStats':
        return cls(**{k: np.asarray(data[k], dtype=np.float64) for k in cls.__dataclass_fields__})

    def denormalize_delta(self, delta: np.ndarray) -> np.ndarray:
        return delta * self.delta_std + self.delta_mean


@dataclass
class TrajectoryDataset:
    """Simulator output; the first n_train trajectories form the training split"""
    obs: np.ndarray
    actions: np.ndarray
    hidden: np.ndarray
    n_train: int
    param_names: List[str]
    system: str
    dt: float
    stats: Optional[NormalizationStats] = None
    normalized: bool = False
    sim_config: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_traj(self) -> int:
        return self.obs.shape[0]

    @property
    def traj_len(self) -> int:
        return self.obs.shape[1]

    @property
    def d_o(self) -> int:
        return self.obs.shape[2]

    @property
    def d_a(self) -> int:
        return self.actions.shape[2]

    @property
    def train_indices(self) -> List[int]:
        return list(range(self.n_train))

    @property
    def test_indices(self) -> List[int]:
        return list(range(self.n_train, self.n_traj))

    def split_indices(self, split: str) -> List[int]:
        if split == "train":
            return self.train_indices
        if split == "test":
            return self.test_indices
        if split == "all":
            return list(range(self.n_traj))
        raise ValueError(f"unknown split '{split}'")


@dataclass
class WindowedDataset:
    """
    (context, target) window pairs. Arrays are indexed by window first.
    Target tuple t is (obs_t, action_t, next_obs_t); prediction_mask is false
    where next_obs does not exist (last step of a trajectory).
    """
    context_obs: np.ndarray          # (W, N, d_o)
    context_actions: np.ndarray      # (W, N, d_a)
    context_next_obs: np.ndarray     # (W, N, d_o)
    target_obs: np.ndarray           # (W, N, d_o)
    target_actions: np.ndarray       # (W, N, d_a)
    target_next_obs: np.ndarray      # (W, N, d_o)
    target_deltas: np.ndarray        # (W, N, d_o), normalized
    prediction_mask: np.ndarray      # (W, N) bool
    hidden_summary: np.ndarray       # (W, d_h) mean hidden parameters over the target window
    trajectory: np.ndarray           # (W,) source trajectory
    window_index: np.ndarray         # (W,) window position within its trajectory
    start: np.ndarray                # (W,) first target timestep

    def __len__(self) -> int:
        return self.target_obs.shape[0]

    @property
    def window_len(self) -> int:
        return self.target_obs.shape[1]

    def subset(self, indices) -> 'WindowedDataset':
        indices = np.asarray(indices, dtype=np.int64)
        return WindowedDataset(**{k: getattr(self, k)[indices] for k in self.__dataclass_fields__})

    def context_set(self, indices=None) -> ContextSet:
        if indices is None:
            return ContextSet(self.context_obs, self.context_actions, self.context_next_obs)
        return ContextSet(self.context_obs[indices], self.context_actions[indices], self.context_next_obs[indices])


# Generation

def generate_actions(policy: str, rng: np.random.Generator, steps: int, d_a: int, dt: float,
                     std: float, cutoff_hz: float = 1.0) -> np.ndarray:
    """
    Excitation signal.

    random_smooth: zero-order-hold Gaussian noise through a first-order low-pass
                   at cutoff_hz, rescaled to the requested std
    sinusoid_mix:  three sinusoids with random frequency in [0.1, 2] Hz and phase
    """
    if std == 0:
        return np.zeros((steps, d_a))
    if policy == "random_smooth":
        hold = max(1, int(round(0.1 / dt)))
        raw = np.repeat(rng.standard_normal(((steps + hold - 1) // hold, d_a)), hold, axis=0)[:steps]
        alpha = dt / (1.0 / (2.0 * np.pi * cutoff_hz) + dt)
        out = np.empty_like(raw)
        level = raw[0]
        for t in range(steps):
            level = level + alpha * (raw[t] - level)
            out[t] = level
        scale = out.std(axis=0)
        return out * (std / np.maximum(scale, 1e-12))
    if policy == "sinusoid_mix":
        t = np.arange(steps)[:, None] * dt
        out = np.zeros((steps, d_a))
        for _ in range(3):
            freq = rng.uniform(0.1, 2.0, size=d_a)
            phase = rng.uniform(0.0, 2.0 * np.pi, size=d_a)
            out += std * np.sqrt(2.0 / 3.0) * np.sin(2.0 * np.pi * freq * t + phase)
        return out
    raise ValueError(f"unknown action policy '{policy}'")


def resolve_param_ranges(sim: SystemSimulator, cfg: SimConfig) -> Dict[str, Tuple[float, float]]:
    ranges = dict(sim.default_param_ranges())
    unknown = sorted(set(cfg.param_ranges) - set(ranges))
    if unknown:
        raise ConfigError(f"sim.param_ranges: {sim.get_name()} has no parameters {unknown}",
                          [f"sim.param_ranges.{u}" for u in unknown])
    ranges.update(cfg.param_ranges)
    if cfg.task_param not in ranges:
        raise ConfigError(f"sim.task_param: {sim.get_name()} has no parameter '{cfg.task_param}'",
                          ["sim.task_param"])
    return ranges


def _sample_task_value(cfg: SimConfig, low: float, high: float, split: str, rng: np.random.Generator) -> float:
    if cfg.task_values is not None:
        values = cfg.task_values.train if split == "train" else cfg.task_values.test
        return float(values[rng.integers(len(values))])
    if cfg.holdout_band is None or high == low:
        return float(rng.uniform(low, high))
    b0, b1 = cfg.holdout_band
    if split == "test":
        return float(low + rng.uniform(b0, b1) * (high - low))
    u = rng.uniform(0.0, 1.0 - (b1 - b0))
    if u >= b0:
        u += b1 - b0
    return float(low + u * (high - low))


def sample_hidden(sim: SystemSimulator, cfg: SimConfig, rng: np.random.Generator, split: str) -> np.ndarray:
    """Piecewise-constant hidden parameters, resampled every segment_len steps"""
    ranges = resolve_param_ranges(sim, cfg)
    names = sim.get_param_names()
    hidden = np.empty((cfg.traj_len, len(names)))
    for start in range(0, cfg.traj_len, cfg.segment_len):
        for j, name in enumerate(names):
            low, high = ranges[name]
            if name == cfg.task_param:
                value = _sample_task_value(cfg, low, high, split, rng)
            else:
                value = float(rng.uniform(low, high))
            hidden[start:start + cfg.segment_len, j] = value
    return hidden


def simulate_trajectory(sim: SystemSimulator, cfg: SimConfig, seed: np.random.SeedSequence,
                        split: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One trajectory: (noisy observations, actions, hidden parameters)"""
    rng = np.random.default_rng(seed)
    hidden = sample_hidden(sim, cfg, rng, split)
    actions = generate_actions(cfg.action_policy, rng, cfg.traj_len, sim.action_dim, cfg.dt,
                               cfg.action_std, cfg.action_cutoff_hz)
    states = sim.integrate(sim.sample_initial_state(rng), actions, hidden, cfg.dt)
    obs = sim.observe(states)
    if cfg.obs_noise_std > 0:
        obs = obs + cfg.obs_noise_std * rng.standard_normal(obs.shape)
    return obs, actions, hidden


def simulate(cfg: SimConfig, emitter: Optional[EventEmitter] = None) -> TrajectoryDataset:
    """
    Generate cfg.n_traj trajectories; the last cfg.n_test draw held-out task values.

    Each trajectory gets its own seed spawned from cfg.seed, so the result does
    not depend on cfg.workers.
    """
    emitter = emitter or create_silent_emitter()
    sim = SimulatorRegistry.create(cfg.system)
    resolve_param_ranges(sim, cfg)
    n_train = cfg.n_traj - cfg.n_test
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_traj)

    emitter.set_stage(EventStage.GENERATE, total_items=cfg.n_traj)
    results: List[Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]] = [None] * cfg.n_traj
    with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
        futures = {
            executor.submit(simulate_trajectory, sim, cfg, seeds[i], "train" if i < n_train else "test"): i
            for i in range(cfg.n_traj)
        }
        done = 0
        for future in as_completed(futures):
            i = futures[future]
            results[i] = future.result()
            done += 1
            emitter.set_progress(done, item_name=f"trajectory {i}")

    obs, actions, hidden = (np.stack([r[k] for r in results]) for k in range(3))
    dataset = TrajectoryDataset(obs, actions, hidden, n_train, sim.get_param_names(), cfg.system, cfg.dt,
                                sim_config=cfg.model_dump(mode="json"))
    dataset.stats = compute_stats(dataset)
    emitter.complete_stage(f"Generated {cfg.n_traj} trajectories ({n_train} train / {cfg.n_test} test)")
    return dataset


# Normalization

def compute_stats(ds: TrajectoryDataset, split: str = "train") -> NormalizationStats:
    """Mean/std of observations, actions and one-step deltas over a split (std floored at 1e-6)"""
    if ds.normalized:
        raise ValueError("statistics must be computed on raw data")
    idx = ds.split_indices(split)
    obs = ds.obs[idx]
    actions = ds.actions[idx].reshape(-1, ds.d_a)
    deltas = (obs[:, 1:] - obs[:, :-1]).reshape(-1, ds.d_o)
    obs = obs.reshape(-1, ds.d_o)
    return NormalizationStats(
        obs_mean=obs.mean(axis=0), obs_std=np.maximum(obs.std(axis=0), STD_FLOOR),
        action_mean=actions.mean(axis=0), action_std=np.maximum(actions.std(axis=0), STD_FLOOR),
        delta_mean=deltas.mean(axis=0), delta_std=np.maximum(deltas.std(axis=0), STD_FLOOR),
    )


def normalize(ds: TrajectoryDataset, split: str = "train",
              stats: Optional[NormalizationStats] = None) -> TrajectoryDataset:
    """Standardized copy of a raw dataset using the split's statistics (or the given ones)"""
    if ds.normalized:
        return ds
    stats = stats or compute_stats(ds, split)
    return replace(
        ds,
        obs=(ds.obs - stats.obs_mean) / stats.obs_std,
        actions=(ds.actions - stats.action_mean) / stats.action_std,
        stats=stats,
        normalized=True,
    )


# Windowing

def build_windows(ds: TrajectoryDataset, N: int, trajectories: Optional[Sequence[int]] = None) -> WindowedDataset:
    """
    Split each trajectory into non-overlapping windows of length N and pair
    window j with the transitions of window j-1 as its context. The first
    window has no context and is dropped.

    Raises:
        TrajectoryTooShort: traj_len < 2N
    """
    if N < 1 or ds.traj_len < 2 * N:
        raise TrajectoryTooShort(f"trajectory length {ds.traj_len} cannot hold context + target windows of {N}")
    if not ds.normalized or ds.stats is None:
        raise ValueError("build_windows expects a normalized dataset")
    stats = ds.stats
    trajectories = list(range(ds.n_traj)) if trajectories is None else list(trajectories)
    W = ds.traj_len // N
    T = ds.traj_len

    rows: Dict[str, List[np.ndarray]] = {k: [] for k in WindowedDataset.__dataclass_fields__}
    for i in trajectories:
        obs, actions, hidden = ds.obs[i], ds.actions[i], ds.hidden[i]
        # next observation for every step; the last step of the trajectory has none
        next_obs = np.concatenate([obs[1:], obs[-1:]], axis=0)
        valid = np.ones(T, dtype=bool)
        valid[-1] = False
        for j in range(1, W):
            ctx = slice((j - 1) * N, j * N)
            tgt = slice(j * N, (j + 1) * N)
            raw_delta = (next_obs[tgt] - obs[tgt]) * stats.obs_std
            delta = np.where(valid[tgt, None], (raw_delta - stats.delta_mean) / stats.delta_std, 0.0)
            rows["context_obs"].append(obs[ctx])
            rows["context_actions"].append(actions[ctx])
            rows["context_next_obs"].append(obs[(j - 1) * N + 1:j * N + 1])
            rows["target_obs"].append(obs[tgt])
            rows["target_actions"].append(actions[tgt])
            rows["target_next_obs"].append(next_obs[tgt])
            rows["target_deltas"].append(delta)
            rows["prediction_mask"].append(valid[tgt])
            rows["hidden_summary"].append(hidden[tgt].mean(axis=0))
            rows["trajectory"].append(np.int64(i))
            rows["window_index"].append(np.int64(j))
            rows["start"].append(np.int64(j * N))

    if not rows["target_obs"]:
        raise TrajectoryTooShort("no windows produced")
    return WindowedDataset(**{k: np.stack(v) for k, v in rows.items()})


# Disk format

def write_dataset(ds: TrajectoryDataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": DTYPE_TAG,
        "layout": "row-major [n_traj, traj_len, dim]",
        "system": ds.system,
        "dt": ds.dt,
        "n_traj": ds.n_traj,
        "n_train": ds.n_train,
        "n_test": ds.n_traj - ds.n_train,
        "traj_len": ds.traj_len,
        "dims": {"obs": ds.d_o, "actions": ds.d_a, "hidden": ds.hidden.shape[2]},
        "param_names": list(ds.param_names),
        "normalized": ds.normalized,
        "stats": ds.stats.to_dict() if ds.stats is not None else None,
        "sim_config": ds.sim_config,
    }
    for key, filename in ARRAY_FILES.items():
        np.ascontiguousarray(getattr(ds, key), dtype='<f8').tofile(directory / filename)
    manifest_path = directory / "manifest.json"
    with open(manifest_path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return manifest_path


def read_dataset(directory) -> TrajectoryDataset:
    """
    Raises:
        ManifestMismatch: unknown format/dtype, or a file larger than declared
        ShortFile: a binary file holds fewer values than declared
    """
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {directory}")
    with open(manifest_path, 'r', encoding='utf-8') as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ManifestMismatch(f"unsupported dataset format_version {manifest.get('format_version')}")
    if manifest.get("dtype") != DTYPE_TAG:
        raise ManifestMismatch(f"unsupported dataset dtype {manifest.get('dtype')}")

    n, T = manifest["n_traj"], manifest["traj_len"]
    arrays = {}
    for key, filename in ARRAY_FILES.items():
        dim = manifest["dims"][key]
        expected = n * T * dim
        path = directory / filename
        if not path.exists():
            raise FileNotFoundError(f"missing {filename} in {directory}")
        data = np.fromfile(path, dtype='<f8')
        if data.size < expected:
            raise ShortFile(f"{filename}: expected {expected} values, found {data.size}")
        if data.size > expected:
            raise ManifestMismatch(f"{filename}: holds {data.size} values, manifest declares {expected}")
        arrays[key] = data.astype(np.float64).reshape(n, T, dim)

    if manifest["n_train"] + manifest["n_test"] != n:
        raise ManifestMismatch("train/test counts do not add up to n_traj")
    stats = NormalizationStats.from_dict(manifest["stats"]) if manifest.get("stats") else None
    return TrajectoryDataset(
        obs=arrays["obs"], actions=arrays["actions"], hidden=arrays["hidden"],
        n_train=manifest["n_train"], param_names=list(manifest["param_names"]),
        system=manifest["system"], dt=float(manifest["dt"]), stats=stats,
        normalized=bool(manifest.get("normalized", False)), sim_config=manifest.get("sim_config", {}),
    )
