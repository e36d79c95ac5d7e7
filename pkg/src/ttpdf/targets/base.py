"""Common interface of target densities on a box."""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy import optimize

from ..tt import Grid


class TargetDensity:
    """Unnormalized density on the box ``[lower, upper]``.

    Subclasses implement :meth:`evaluate`, returning the log density and a
    dictionary of quantities of interest for a batch of points. Densities are
    shifted by :attr:`log_scale` before exponentiation so that values near
    the mode are of order one; estimators only use ratios, so the shift is
    immaterial.
    """

    name = "target"

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.shape != self.upper.shape or np.any(self.lower >= self.upper):
            raise ValueError("box bounds must satisfy lower < upper componentwise")
        self._log_scale: Optional[float] = None

    @property
    def dim(self) -> int:
        return self.lower.size

    def evaluate(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        """Log density and QoI values at ``x`` of shape ``(M, d)``."""
        raise NotImplementedError

    def integrands(self, qoi: dict) -> dict:
        """Per-sample integrands whose posterior means are estimated (all QoI series by default)."""
        return {k: np.asarray(v, dtype=float) for k, v in qoi.items()}

    def surrogate_integrands(self, x) -> dict:
        """Cheap approximations ``g~`` of :meth:`integrands` for two-level estimators.

        The default is ``g~ = g``; subclasses with a cheaper model override it.
        """
        return self.integrands(self.qoi(x))

    def summarize(self, values: dict, weights=None) -> dict:
        """Posterior estimates from integrand samples, weighted means by default.

        ``weights`` are importance weights (any scale); ``None`` means an
        unweighted average, e.g. over a Markov chain.
        """
        out = {}
        for k, v in values.items():
            v = np.asarray(v, dtype=float)
            out[k] = float(np.mean(v)) if weights is None else float(np.dot(weights, v) / np.sum(weights))
        return out

    def default_sizes(self):
        """Grid sizes used when an experiment does not specify any; None if there is no default."""
        return None

    def log_density(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.evaluate(x)[0]

    def qoi(self, x) -> dict:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.evaluate(x)[1]

    @property
    def log_scale(self) -> float:
        if self._log_scale is None:
            self._log_scale = self.find_log_scale()
        return self._log_scale

    @log_scale.setter
    def log_scale(self, value: float) -> None:
        self._log_scale = float(value)

    def find_log_scale(self, n_start: int = 2048, seed: int = 0) -> float:
        """Approximate maximum of the log density (random search polished by L-BFGS-B)."""
        rng = np.random.default_rng(seed)
        x = self.lower + (self.upper - self.lower) * rng.random((n_start, self.dim))
        lp = self.log_density(x)
        best = x[int(np.argmax(lp))]
        res = optimize.minimize(
            lambda z: -float(self.log_density(z[None, :])[0]),
            best,
            method="L-BFGS-B",
            bounds=list(zip(self.lower, self.upper)),
        )
        return float(max(-res.fun, np.max(lp)))

    def density(self, x) -> np.ndarray:
        """``exp(log_density - log_scale)``."""
        return np.exp(self.log_density(x) - self.log_scale)

    def grid(self, n) -> Grid:
        """Uniform grid with ``n`` nodes per dimension (an int or one per dimension)."""
        return Grid.uniform(self.lower, self.upper, n)

    def in_box(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)
