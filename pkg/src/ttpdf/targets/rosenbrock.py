"""Banana-shaped density ``exp(-r(theta) / 2)`` built from the Rosenbrock-type function."""

from __future__ import annotations

import numpy as np

from ..tt import Grid
from .base import TargetDensity


def rosenbrock_r(theta: np.ndarray) -> np.ndarray:
    """``r = sum_k theta_k^2 + (theta_{k+1} + 5 (theta_k^2 + 1))^2`` over ``k = 1..d-1``."""
    theta = np.atleast_2d(theta)
    a = theta[:, :-1]
    b = theta[:, 1:]
    return np.sum(a * a + (b + 5.0 * (a * a + 1.0)) ** 2, axis=1)


class Rosenbrock(TargetDensity):
    """Rosenbrock density in ``d >= 2`` dimensions.

    The box half-widths are 200 for the last coordinate, 7 for the one
    before and 2 for all others.
    """

    name = "rosenbrock"

    def __init__(self, d: int = 2):
        if d < 2:
            raise ValueError("Rosenbrock density needs d >= 2")
        half = np.full(d, 2.0)
        half[-2] = 7.0
        half[-1] = 200.0
        super().__init__(-half, half)
        # the maximum of -r/2 is attained inside the box for every d
        self._log_scale = float(self.find_log_scale())

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return -0.5 * rosenbrock_r(x), {f"theta_{k + 1}": x[:, k] for k in range(self.dim)}

    def default_sizes(self) -> list[int]:
        """Grid sizes: 128 nodes in the leading coordinates, 512 and 4096 in the last two."""
        return [128] * (self.dim - 2) + [512, 4096]

    def grid(self, n=None) -> Grid:
        return Grid.uniform(self.lower, self.upper, self.default_sizes() if n is None else n)
