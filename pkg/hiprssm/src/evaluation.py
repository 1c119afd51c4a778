#!/usr/bin/env python3
"""
Evaluation Protocols
One-step RMSE with every observation visible, RMSE under 50% imputation with
a fixed evaluation mask, and open-loop multi-step rollouts after a burn-in of
N/2 observed steps. All errors are reported in un-normalized observation units.
"""

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from data import NormalizationStats, WindowedDataset
from model import SequenceModel, predict

PROTOCOLS = ("full", "imputed_50", "multi_step")
IMPUTATION_RATE = 0.5


@dataclass
class EvalReport:
    one_step_rmse: Optional[float] = None
    imputed_rmse: Optional[float] = None
    multi_step_rmse: Dict[int, float] = field(default_factory=dict)
    zero_delta_rmse: Optional[float] = None
    task_means: Optional[np.ndarray] = None      # (W, d_l)
    task_vars: Optional[np.ndarray] = None
    n_windows: int = 0
    wall_clock: float = 0.0

    def merge(self, other: 'EvalReport') -> 'EvalReport':
        merged = EvalReport(
            one_step_rmse=other.one_step_rmse if other.one_step_rmse is not None else self.one_step_rmse,
            imputed_rmse=other.imputed_rmse if other.imputed_rmse is not None else self.imputed_rmse,
            multi_step_rmse={**self.multi_step_rmse, **other.multi_step_rmse},
            zero_delta_rmse=other.zero_delta_rmse if other.zero_delta_rmse is not None else self.zero_delta_rmse,
            task_means=other.task_means if other.task_means is not None else self.task_means,
            task_vars=other.task_vars if other.task_vars is not None else self.task_vars,
            n_windows=max(self.n_windows, other.n_windows),
            wall_clock=self.wall_clock + other.wall_clock,
        )
        return merged

    def rows(self) -> List[Tuple[str, int, float]]:
        """(protocol, horizon, rmse) rows in a fixed order"""
        rows = []
        if self.zero_delta_rmse is not None:
            rows.append(("zero_delta", 1, self.zero_delta_rmse))
        if self.one_step_rmse is not None:
            rows.append(("full", 1, self.one_step_rmse))
        if self.imputed_rmse is not None:
            rows.append(("imputed_50", 1, self.imputed_rmse))
        for h in sorted(self.multi_step_rmse):
            rows.append(("multi_step", h, self.multi_step_rmse[h]))
        return rows


def evaluation_mask(protocol: str, n_windows: int, steps: int, seed: int = 1234) -> np.ndarray:
    """Observation mask (W, N) for a protocol; imputed_50 depends only on the seed and the shape"""
    if protocol == "full":
        return np.ones((n_windows, steps), dtype=bool)
    if protocol == "imputed_50":
        return np.random.default_rng(seed).random((n_windows, steps)) >= IMPUTATION_RATE
    if protocol == "multi_step":
        mask = np.zeros((n_windows, steps), dtype=bool)
        mask[:, :steps // 2] = True
        return mask
    raise ValueError(f"unknown protocol '{protocol}' (expected one of {PROTOCOLS})")


def predict_windows(model: SequenceModel, windows: WindowedDataset, obs_mask: np.ndarray,
                    batch_size: int = 32, workers: int = 1) -> Tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    """
    Normalized delta predictions (W, N, d_o) plus task posterior means/variances.
    Batches run on a thread pool against read-only parameters; results keep window order.
    """
    starts = list(range(0, len(windows), batch_size))

    def run(start: int):
        idx = np.arange(start, min(start + batch_size, len(windows)))
        batch = windows.subset(idx)
        out = predict(model, batch.context_set(), batch.target_obs, batch.target_actions, obs_mask[idx])
        task = out.task_posterior()
        return out.pred_mean.value, None if task is None else task.mean, None if task is None else task.var

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(run, starts))
    else:
        parts = [run(s) for s in starts]

    preds = np.concatenate([p[0] for p in parts], axis=0)
    if parts[0][1] is None:
        return preds, None, None
    return preds, np.concatenate([p[1] for p in parts]), np.concatenate([p[2] for p in parts])


def _rmse(errors: np.ndarray, valid: np.ndarray) -> float:
    """errors (W, N, d) raw; valid (W, N)"""
    if not valid.any():
        return float("nan")
    squared = (errors ** 2)[valid]
    return float(np.sqrt(squared.mean()))


def one_step_errors(preds: np.ndarray, windows: WindowedDataset, stats: NormalizationStats) -> np.ndarray:
    """Raw-unit prediction errors per step (W, N, d_o)"""
    return stats.denormalize_delta(preds) - stats.denormalize_delta(windows.target_deltas)


def multi_step_rmse(preds: np.ndarray, windows: WindowedDataset, stats: NormalizationStats,
                    horizon: int) -> Dict[int, float]:
    """
    RMSE of the open-loop observation estimate h steps past the last observed
    step, accumulating predicted deltas, for h = 1..horizon.
    """
    N = windows.window_len
    last_seen = N // 2 - 1
    if last_seen + horizon > N:
        raise ValueError(f"horizon {horizon} does not fit after a burn-in of {N // 2} steps")
    pred_raw = stats.denormalize_delta(preds[:, last_seen:last_seen + horizon])
    true_raw = stats.denormalize_delta(windows.target_deltas[:, last_seen:last_seen + horizon])
    error = np.cumsum(pred_raw, axis=1) - np.cumsum(true_raw, axis=1)
    valid = np.cumprod(windows.prediction_mask[:, last_seen:last_seen + horizon], axis=1).astype(bool)
    return {h: _rmse(error[:, h - 1:h], valid[:, h - 1:h]) for h in range(1, horizon + 1)}


def zero_delta_rmse(windows: WindowedDataset, stats: NormalizationStats) -> float:
    """RMSE of predicting no change; independent of how the data was normalized"""
    true_raw = stats.denormalize_delta(windows.target_deltas)
    return _rmse(true_raw, windows.prediction_mask)


def evaluate(model: SequenceModel, windows: WindowedDataset, stats: NormalizationStats,
             protocol: str, horizon: int = 50, seed: int = 1234, batch_size: int = 32,
             workers: int = 1) -> EvalReport:
    """Run one protocol over all windows"""
    started = time.perf_counter()
    mask = evaluation_mask(protocol, len(windows), windows.window_len, seed)
    preds, task_means, task_vars = predict_windows(model, windows, mask, batch_size, workers)

    report = EvalReport(n_windows=len(windows), task_means=task_means, task_vars=task_vars)
    if protocol == "full":
        report.one_step_rmse = _rmse(one_step_errors(preds, windows, stats), windows.prediction_mask)
        report.zero_delta_rmse = zero_delta_rmse(windows, stats)
    elif protocol == "imputed_50":
        report.imputed_rmse = _rmse(one_step_errors(preds, windows, stats), windows.prediction_mask)
    else:
        report.multi_step_rmse = multi_step_rmse(preds, windows, stats, horizon)
    report.wall_clock = time.perf_counter() - started
    return report


def evaluate_protocols(model: SequenceModel, windows: WindowedDataset, stats: NormalizationStats,
                       protocols: Sequence[str], horizon: int = 50, seed: int = 1234,
                       batch_size: int = 32, workers: int = 1) -> EvalReport:
    report = EvalReport()
    for protocol in protocols:
        report = report.merge(evaluate(model, windows, stats, protocol, horizon, seed, batch_size, workers))
    return report


def write_report_csv(report: EvalReport, path) -> Path:
    """protocol,horizon,rmse rows; wall-clock time stays out of the file"""
    path = Path(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(["protocol", "horizon", "rmse"])
        for protocol, horizon, rmse in report.rows():
            writer.writerow([protocol, horizon, repr(float(rmse))])
    return path
