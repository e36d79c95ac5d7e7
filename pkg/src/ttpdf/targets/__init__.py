"""Benchmark target densities."""

from .base import TargetDensity
from .diffusion import Diffusion, FEMSolution, Q1Solver, boundary_flux, flux, kle_field
from .rosenbrock import Rosenbrock, rosenbrock_r
from .shock import ShockAbsorber, mixture_quantile, shock_qois

__all__ = [
    "TargetDensity",
    "Diffusion",
    "FEMSolution",
    "Q1Solver",
    "boundary_flux",
    "flux",
    "kle_field",
    "Rosenbrock",
    "rosenbrock_r",
    "ShockAbsorber",
    "mixture_quantile",
    "shock_qois",
]
