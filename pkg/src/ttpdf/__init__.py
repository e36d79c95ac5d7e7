"""Tensor-train surrogates of probability densities.

The pipeline: approximate a density on a tensor grid by TT cross
(:mod:`ttpdf.cross`), draw samples from the multilinear surrogate by the
conditional distribution method (:mod:`ttpdf.cd`), seeded by i.i.d. uniforms
or randomized lattice rules (:mod:`ttpdf.qmc`), and correct them with
Metropolis-Hastings or importance weights (:mod:`ttpdf.estimators`).
"""

from .cd import CDSampler, SampleBatch, invert_cdf
from .cross import CrossConfig, CrossResult, cross_approximate, index_function
from .errors import (
    ConfigError,
    DomainError,
    RankDeficientError,
    SolverError,
    TargetEvaluationError,
)
from .estimators import (
    iact,
    importance_estimate,
    lemma_diagnostics,
    mh_correct,
    two_level_iw,
    two_level_mh,
)
from .qmc import LatticeRule
from .tt import Grid, TTTensor, maxvol

__version__ = "0.1.0"

__all__ = [
    "CDSampler",
    "SampleBatch",
    "invert_cdf",
    "CrossConfig",
    "CrossResult",
    "cross_approximate",
    "index_function",
    "ConfigError",
    "DomainError",
    "RankDeficientError",
    "SolverError",
    "TargetEvaluationError",
    "iact",
    "importance_estimate",
    "lemma_diagnostics",
    "mh_correct",
    "two_level_iw",
    "two_level_mh",
    "LatticeRule",
    "Grid",
    "TTTensor",
    "maxvol",
]
