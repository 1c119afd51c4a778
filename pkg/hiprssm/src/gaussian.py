#!/usr/bin/env python3
"""
Gaussian Core - Exact Inference Numerics
Diagonal and factorized Gaussian beliefs, dense conversions, and the dense
brute-force oracles (conditioning, marginalisation, Kalman filtering) that the
factorized updates are checked against.

Dense representations are for oracles only; the training path never builds them.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import DimensionMismatch, PatternViolation, PSDViolation, SingularMatrix, OddLatentDim

PSD_TOL = 1e-9        # eigenvalue tolerance for PSD checks (scaled by block magnitude)
VAR_FLOOR = 1e-8      # applied after every covariance update
PATTERN_TOL = 1e-12   # max magnitude allowed outside the factorized sparsity pattern
COND_LIMIT = 1e12     # innovation covariance condition number bound


def _frozen(values, name: str) -> np.ndarray:
    """Copy to a read-only float64 array"""
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def block_min_eigenvalue(var_u: np.ndarray, var_l: np.ndarray, cov_s: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of each per-coordinate 2x2 block [[u, s], [s, l]]"""
    half_trace = 0.5 * (var_u + var_l)
    radius = np.sqrt((0.5 * (var_u - var_l)) ** 2 + cov_s ** 2)
    return half_trace - radius


def check_block_psd(var_u: np.ndarray, var_l: np.ndarray, cov_s: np.ndarray, where: str = "belief"):
    """Raise PSDViolation if any 2x2 covariance block is indefinite beyond tolerance"""
    if np.any(var_u <= 0) or np.any(var_l <= 0):
        raise PSDViolation(f"{where}: non-positive diagonal variance")
    scale = np.maximum(1.0, var_u + var_l)
    if np.any(block_min_eigenvalue(var_u, var_l, cov_s) < -PSD_TOL * scale):
        raise PSDViolation(f"{where}: 2x2 covariance block is not positive semidefinite")


@dataclass(frozen=True)
class DiagGaussian:
    """
    Gaussian with diagonal covariance over a vector.
    Used for the latent task belief and for encoder outputs. Leading batch
    dimensions are allowed; the last axis is the event dimension.
    """
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean, "mean")
        var = _frozen(self.var, "var")
        if mean.shape != var.shape:
            raise DimensionMismatch(f"mean shape {mean.shape} != var shape {var.shape}")
        if np.any(var <= 0):
            raise ValueError("variance must be strictly positive")
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'var', var)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @classmethod
    def standard(cls, dim: int) -> 'DiagGaussian':
        return cls(np.zeros(dim), np.ones(dim))


@dataclass(frozen=True)
class FactorizedBelief:
    """
    Latent state belief with factorized covariance.

    mean holds 2m values: the observation (upper) part followed by the memory
    (lower) part. The covariance is four m x m diagonal blocks,
        [[diag(var_u), diag(cov_s)],
         [diag(cov_s), diag(var_l)]]
    so every coordinate pair (i, m+i) forms an independent 2x2 block.
    """
    mean: np.ndarray
    var_u: np.ndarray
    var_l: np.ndarray
    cov_s: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean, "mean")
        var_u = _frozen(self.var_u, "var_u")
        var_l = _frozen(self.var_l, "var_l")
        cov_s = _frozen(self.cov_s, "cov_s")
        if not (var_u.shape == var_l.shape == cov_s.shape):
            raise DimensionMismatch("var_u, var_l and cov_s must share a shape")
        if mean.shape[:-1] != var_u.shape[:-1] or mean.shape[-1] != 2 * var_u.shape[-1]:
            raise DimensionMismatch(f"mean shape {mean.shape} does not match covariance blocks {var_u.shape}")
        check_block_psd(var_u, var_l, cov_s, "FactorizedBelief")
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'var_u', var_u)
        object.__setattr__(self, 'var_l', var_l)
        object.__setattr__(self, 'cov_s', cov_s)

    @property
    def m(self) -> int:
        return self.var_u.shape[-1]

    @property
    def upper_mean(self) -> np.ndarray:
        return self.mean[..., :self.m]

    @property
    def lower_mean(self) -> np.ndarray:
        return self.mean[..., self.m:]

    @classmethod
    def initial(cls, m: int, variance: float = 10.0, batch: Optional[int] = None) -> 'FactorizedBelief':
        """Broad start-of-window belief: zero mean, equal variances, no correlation"""
        lead = () if batch is None else (batch,)
        return cls(
            mean=np.zeros(lead + (2 * m,)),
            var_u=np.full(lead + (m,), variance),
            var_l=np.full(lead + (m,), variance),
            cov_s=np.zeros(lead + (m,)),
        )


@dataclass(frozen=True)
class DenseGaussian:
    """Full-covariance Gaussian (oracle representation)"""
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean, "mean")
        cov = _frozen(self.cov, "cov")
        d = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (d, d):
            raise DimensionMismatch(f"mean shape {mean.shape} incompatible with cov shape {cov.shape}")
        scale = max(1.0, float(np.max(np.abs(cov)))) if d else 1.0
        if np.max(np.abs(cov - cov.T), initial=0.0) > PSD_TOL * scale:
            raise PSDViolation("dense covariance is not symmetric")
        if d and np.min(np.linalg.eigvalsh(cov)) < -PSD_TOL * scale:
            raise PSDViolation("dense covariance is not positive semidefinite")
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'cov', cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def blocks_to_dense(a11, a12, a21, a22) -> np.ndarray:
    """Assemble a 2m x 2m matrix from four diagonal m-vectors"""
    a11, a12, a21, a22 = (np.asarray(x, dtype=np.float64) for x in (a11, a12, a21, a22))
    if not (a11.shape == a12.shape == a21.shape == a22.shape) or a11.ndim != 1:
        raise DimensionMismatch("block diagonals must be equal-length vectors")
    return np.block([
        [np.diag(a11), np.diag(a12)],
        [np.diag(a21), np.diag(a22)],
    ])


def to_dense(b: FactorizedBelief) -> DenseGaussian:
    """Expand a (non-batched) factorized belief into its dense covariance"""
    if b.mean.ndim != 1:
        raise DimensionMismatch("to_dense expects a single belief, not a batch")
    return DenseGaussian(b.mean.copy(), blocks_to_dense(b.var_u, b.cov_s, b.cov_s, b.var_l))


def from_dense(g: DenseGaussian) -> FactorizedBelief:
    """Compress a dense Gaussian that follows the factorized sparsity pattern"""
    if g.dim % 2:
        raise OddLatentDim(f"dense dimension {g.dim} is odd")
    m = g.dim // 2
    var_u = np.diag(g.cov[:m, :m]).copy()
    var_l = np.diag(g.cov[m:, m:]).copy()
    cov_s = np.diag(g.cov[:m, m:]).copy()

    pattern = blocks_to_dense(np.ones(m), np.ones(m), np.ones(m), np.ones(m)).astype(bool)
    outside = np.abs(g.cov[~pattern])
    if outside.size and outside.max() > PATTERN_TOL:
        raise PatternViolation(
            f"covariance has entries of magnitude {outside.max():.3e} outside the factorized pattern"
        )
    lower_s = np.diag(g.cov[m:, :m])
    if np.max(np.abs(lower_s - cov_s), initial=0.0) > PATTERN_TOL:
        raise PatternViolation("cross-covariance blocks are not symmetric")
    return FactorizedBelief(g.mean.copy(), var_u, var_l, cov_s)


def dense_condition(prior: DenseGaussian, obs_mean, obs_var, H) -> DenseGaussian:
    """
    Condition a dense Gaussian on y ~ N(Hz, diag(obs_var)) by full matrix inversion.

    Raises:
        SingularMatrix: innovation covariance condition number above COND_LIMIT
    """
    obs_mean = np.atleast_1d(np.asarray(obs_mean, dtype=np.float64))
    obs_var = np.atleast_1d(np.asarray(obs_var, dtype=np.float64))
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    if H.shape != (obs_mean.shape[0], prior.dim) or obs_var.shape != obs_mean.shape:
        raise DimensionMismatch(
            f"H {H.shape}, observation {obs_mean.shape}, variance {obs_var.shape}, prior dim {prior.dim}"
        )
    if np.any(obs_var <= 0):
        raise ValueError("observation variance must be strictly positive")

    P = prior.cov
    S = H @ P @ H.T + np.diag(obs_var)
    if np.linalg.cond(S) > COND_LIMIT:
        raise SingularMatrix("innovation covariance is numerically singular")
    K = P @ H.T @ np.linalg.inv(S)
    mean = prior.mean + K @ (obs_mean - H @ prior.mean)
    cov = P - K @ H @ P
    return DenseGaussian(mean, 0.5 * (cov + cov.T))


def identity1_marginal(mu_u, Sigma_u, mu_v, Sigma_v, A, B, b, Sigma) -> DenseGaussian:
    """
    Marginal of y = A u + b + B v + eps for independent Gaussians
    u ~ N(mu_u, Sigma_u), v ~ N(mu_v, Sigma_v), eps ~ N(0, Sigma):
        y ~ N(A mu_u + b + B mu_v, A Sigma_u A^T + B Sigma_v B^T + Sigma)
    """
    mu_u = np.atleast_1d(np.asarray(mu_u, dtype=np.float64))
    mu_v = np.atleast_1d(np.asarray(mu_v, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    Sigma_u, Sigma_v, Sigma, A, B = (
        np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (Sigma_u, Sigma_v, Sigma, A, B)
    )
    du, dv, dy = mu_u.shape[0], mu_v.shape[0], b.shape[0]
    expected = {
        'Sigma_u': (Sigma_u.shape, (du, du)),
        'Sigma_v': (Sigma_v.shape, (dv, dv)),
        'A': (A.shape, (dy, du)),
        'B': (B.shape, (dy, dv)),
        'Sigma': (Sigma.shape, (dy, dy)),
    }
    for name, (got, want) in expected.items():
        if got != want:
            raise DimensionMismatch(f"{name} has shape {got}, expected {want}")

    mean = A @ mu_u + b + B @ mu_v
    cov = A @ Sigma_u @ A.T + B @ Sigma_v @ B.T + Sigma
    return DenseGaussian(mean, 0.5 * (cov + cov.T))


def dense_kalman_filter(
    initial: DenseGaussian,
    A: np.ndarray,
    Q: np.ndarray,
    H: np.ndarray,
    observations: np.ndarray,
    obs_var: np.ndarray,
    mask: Optional[Sequence[bool]] = None,
    controls: Optional[np.ndarray] = None,
) -> Tuple[List[DenseGaussian], List[DenseGaussian]]:
    """
    Textbook Kalman filter with the update-then-predict ordering of the recurrent cell.

    At each step t the current belief is corrected with observations[t] (unless
    masked) and then propagated through z' = A z + controls[t] with process noise Q.

    Returns:
        (posteriors, priors): filtered belief at t and predicted belief for t+1
    """
    T = observations.shape[0]
    mask = np.ones(T, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    obs_var = np.asarray(obs_var, dtype=np.float64)
    belief = initial
    posteriors, priors = [], []
    for t in range(T):
        if mask[t]:
            var_t = obs_var[t] if obs_var.ndim == 2 else obs_var
            belief = dense_condition(belief, observations[t], var_t, H)
        posteriors.append(belief)
        shift = np.zeros(belief.dim) if controls is None else controls[t]
        belief = identity1_marginal(
            belief.mean, belief.cov, np.zeros(1), np.eye(1),
            A, np.zeros((belief.dim, 1)), shift, Q,
        )
        priors.append(belief)
    return posteriors, priors
