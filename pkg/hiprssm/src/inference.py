#!/usr/bin/env python3
"""
Sliding-Window Inference and Embedding Export
Walks a trajectory in non-overlapping windows, infers the task posterior of
each window from the previous window's transitions, filters through it, and
exports the per-window task means with a 2-D PCA projection.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import spearmanr

from context import ContextSet
from data import TrajectoryDataset, build_windows
from errors import TrajectoryTooShort
from model import SequenceModel, predict


@dataclass
class WindowPosterior:
    """Task posterior and filtered one-step predictions for one window"""
    trajectory: int
    window: int
    start: int
    task_mean: np.ndarray        # (d_l,)
    task_var: np.ndarray         # (d_l,)
    predictions: np.ndarray      # (N, d_o) raw-unit predicted deltas
    hidden_summary: np.ndarray   # (d_h,) true hidden parameters, window mean


def sliding_inference(model: SequenceModel, ds: TrajectoryDataset, trajectory: int, N: int,
                      include_first: bool = False) -> List[WindowPosterior]:
    """
    One WindowPosterior per window after the first; with include_first the
    first window is filtered under the task prior (empty context).

    Raises:
        TrajectoryTooShort: traj_len < 2N
    """
    if not model.uses_context:
        raise ValueError("sliding inference needs a model with a task posterior")
    if ds.traj_len < 2 * N:
        raise TrajectoryTooShort(f"trajectory length {ds.traj_len} cannot hold context + target windows of {N}")
    stats = ds.stats
    windows = build_windows(ds, N, [trajectory])
    full = np.ones((len(windows), N), dtype=bool)
    out = predict(model, windows.context_set(), windows.target_obs, windows.target_actions, full)
    task = out.task_posterior()
    preds = stats.denormalize_delta(out.pred_mean.value)

    results = []
    if include_first:
        obs, actions = ds.obs[trajectory, :N], ds.actions[trajectory, :N]
        first = predict(model, ContextSet.empty(ds.d_o, ds.d_a), obs, actions, np.ones(N, dtype=bool))
        prior = first.task_posterior()
        results.append(WindowPosterior(
            trajectory=trajectory, window=0, start=0,
            task_mean=prior.mean[0], task_var=prior.var[0],
            predictions=stats.denormalize_delta(first.pred_mean.value[0]),
            hidden_summary=ds.hidden[trajectory, :N].mean(axis=0),
        ))
    for k in range(len(windows)):
        results.append(WindowPosterior(
            trajectory=trajectory,
            window=int(windows.window_index[k]),
            start=int(windows.start[k]),
            task_mean=task.mean[k],
            task_var=task.var[k],
            predictions=preds[k],
            hidden_summary=windows.hidden_summary[k],
        ))
    return results


def pca_power_iteration(X: np.ndarray, k: int = 2, max_iter: int = 1000, tol: float = 1e-12,
                        seed: int = 0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Leading principal components by power iteration with deflation.

    Returns:
        (components (k, d), explained variances (k,), projection (n, k));
        components with no remaining variance are zero vectors. Each component's
        largest-magnitude loading is made positive.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / max(n - 1, 1)
    floor = 1e-12 * max(float(np.trace(cov)), 1e-300)
    rng = np.random.default_rng(seed)

    components = np.zeros((k, d))
    variances = np.zeros(k)
    for i in range(min(k, d)):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = cov @ v
            norm = np.linalg.norm(w)
            if norm <= floor:
                v = np.zeros(d)
                break
            w /= norm
            if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol:
                v = w
                break
            v = w
        lam = float(v @ cov @ v)
        if lam <= floor:
            break
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        components[i] = v
        variances[i] = lam
        cov = cov - lam * np.outer(v, v)
    return components, variances, centered @ components.T


def _rank_correlation(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return None
    rho = spearmanr(a, b)[0]
    return None if not np.isfinite(rho) else float(rho)


def export_embeddings(posteriors: Sequence[WindowPosterior], param_names: Sequence[str],
                      out_dir) -> Dict[str, Optional[float]]:
    """
    Write embeddings.csv and embeddings_pca.csv.

    embeddings.csv:     window_id, trajectory, window, hidden_<param>..., mu_<i>..., var_<i>..., pc1, pc2
    embeddings_pca.csv: window_id, trajectory, window, hidden_<param>..., pc1, pc2

    Returns:
        Spearman correlation between PC1 and each hidden parameter (None when undefined)
    """
    if len(posteriors) < 2:
        raise ValueError("embedding export needs at least two windows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    means = np.stack([p.task_mean for p in posteriors])
    variances = np.stack([p.task_var for p in posteriors])
    hidden = np.stack([p.hidden_summary for p in posteriors])
    _, _, projection = pca_power_iteration(means, k=2)
    d_l = means.shape[1]

    hidden_cols = [f"hidden_{name}" for name in param_names]
    head = ["window_id", "trajectory", "window"]
    with open(out_dir / "embeddings.csv", 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(head + hidden_cols + [f"mu_{i}" for i in range(d_l)]
                        + [f"var_{i}" for i in range(d_l)] + ["pc1", "pc2"])
        for i, p in enumerate(posteriors):
            writer.writerow([i, p.trajectory, p.window] + [repr(float(x)) for x in hidden[i]]
                            + [repr(float(x)) for x in means[i]] + [repr(float(x)) for x in variances[i]]
                            + [repr(float(projection[i, 0])), repr(float(projection[i, 1]))])
    with open(out_dir / "embeddings_pca.csv", 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(head + hidden_cols + ["pc1", "pc2"])
        for i, p in enumerate(posteriors):
            writer.writerow([i, p.trajectory, p.window] + [repr(float(x)) for x in hidden[i]]
                            + [repr(float(projection[i, 0])), repr(float(projection[i, 1]))])

    return {name: _rank_correlation(projection[:, 0], hidden[:, j]) for j, name in enumerate(param_names)}
