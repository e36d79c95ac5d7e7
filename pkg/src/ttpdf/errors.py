"""Exception types shared across the package."""

from __future__ import annotations

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class RankDeficientError(np.linalg.LinAlgError):
    """A matrix expected to have full column rank does not."""


class TargetEvaluationError(RuntimeError):
    """Evaluating the target density failed at a specific multi-index."""

    def __init__(self, message: str, index=None):
        super().__init__(message)
        self.index = None if index is None else tuple(int(i) for i in index)


class SolverError(RuntimeError):
    """The finite-element linear solve did not reach the requested residual."""


class ConfigError(ValueError):
    """Invalid experiment or module configuration."""
