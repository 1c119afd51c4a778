#!/usr/bin/env python3
"""
Error Hierarchy for HiP-RSSM
Every failure the library can raise, each tagged with the CLI exit status it maps to
"""

from typing import Optional


class HiPRSSMError(Exception):
    """Base class for all library errors"""
    exit_code: int = 1


# Numerics

class DimensionMismatch(HiPRSSMError, ValueError):
    """Array shapes do not agree"""


class PatternViolation(HiPRSSMError, ValueError):
    """Dense covariance has entries outside the factorized sparsity pattern"""


class SingularMatrix(HiPRSSMError, ArithmeticError):
    """Innovation covariance is numerically singular"""


class PSDViolation(HiPRSSMError, ArithmeticError):
    """A covariance block lost positive semidefiniteness"""


class OddLatentDim(HiPRSSMError, ValueError):
    """Latent state size cannot be split into observation and memory halves"""


class EmptyTape(HiPRSSMError, RuntimeError):
    """Backward pass requested on a tape with no recorded operations"""


class EmptyMask(HiPRSSMError, ValueError):
    """Loss requested over a prediction mask with no active entries"""


# Data

class IntegrationDiverged(HiPRSSMError, ArithmeticError):
    """Simulator state magnitude exceeded the divergence bound"""


class TrajectoryTooShort(HiPRSSMError, ValueError):
    """Trajectory cannot hold a context window plus a target window"""


class ManifestMismatch(HiPRSSMError):
    """On-disk manifest disagrees with the expected format or the data files"""
    exit_code = 3


class ShortFile(HiPRSSMError):
    """Binary file holds fewer values than its manifest declares"""
    exit_code = 3


# Configuration, training, checkpoints

class ConfigError(HiPRSSMError, ValueError):
    """Run configuration failed validation"""
    exit_code = 2

    def __init__(self, message: str, fields: Optional[list] = None):
        super().__init__(message)
        self.fields = fields or []


class NonFiniteLoss(HiPRSSMError, ArithmeticError):
    """Training produced a NaN or infinite loss"""
    exit_code = 4

    def __init__(self, message: str, dump_path: Optional[str] = None):
        super().__init__(message)
        self.dump_path = dump_path


class CheckpointMismatch(HiPRSSMError):
    """Checkpoint dimensions disagree with the config or dataset"""
    exit_code = 5


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit status"""
    if isinstance(error, HiPRSSMError):
        return error.exit_code
    if isinstance(error, OSError):
        return 3
    return 1
