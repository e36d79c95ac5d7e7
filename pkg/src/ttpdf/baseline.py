"""Adaptive random-walk Metropolis with one delayed-rejection stage.

A compact stand-in for DRAM used as the reference MCMC method: Gaussian
random-walk proposals whose covariance is the running empirical covariance
of the chain (scaled by ``2.38**2 / d``), and, after a first-stage rejection,
a second proposal with a shrunk covariance accepted with the
delayed-rejection probability that preserves detailed balance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .estimators import ChainResult, iact


@dataclass
class AMConfig:
    """Settings of :func:`am_run`.

    Attributes
    ----------
    initial_cov : ndarray, optional
        Proposal covariance before adaptation; identity if omitted.
    adapt_start : int
        Number of steps before the covariance is adapted.
    adapt_interval : int
        Steps between covariance updates.
    scale : float, optional
        Multiplier of the empirical covariance; ``2.38**2 / d`` if omitted.
    dr_shrink : float
        Factor applied to the proposal covariance in the second stage.
    burn_in : float
        Fraction of the chain discarded before computing estimates and IACTs.
    eps : float
        Regularization ``eps * I`` added to the empirical covariance.
    adapt : bool
        Set to False for a plain random walk with ``initial_cov``.
    """

    initial_cov: Optional[np.ndarray] = None
    adapt_start: int = 100
    adapt_interval: int = 1
    scale: Optional[float] = None
    dr_shrink: float = 0.2
    burn_in: float = 0.25
    eps: float = 1e-8
    adapt: bool = True

    def __post_init__(self):
        if not 0 < self.dr_shrink < 1:
            raise ConfigError("dr_shrink must lie in (0, 1)")
        if not 0 <= self.burn_in < 1:
            raise ConfigError("burn_in must lie in [0, 1)")
        if self.adapt_start < 1 or self.adapt_interval < 1:
            raise ConfigError("adapt_start and adapt_interval must be positive")


def _chol(cov: np.ndarray, eps: float) -> np.ndarray:
    d = cov.shape[0]
    cov = 0.5 * (cov + cov.T)
    jitter = eps
    for _ in range(20):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(d))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError("proposal covariance could not be regularized")


def am_run(
    log_density: Callable[[np.ndarray], np.ndarray],
    lower,
    upper,
    n_steps: int,
    rng: np.random.Generator,
    cfg: Optional[AMConfig] = None,
    x0=None,
    qoi: Optional[Callable[[np.ndarray], dict]] = None,
) -> ChainResult:
    """Run the adaptive Metropolis chain for ``n_steps`` steps.

    Parameters
    ----------
    log_density : callable
        Log target density for an ``(M, d)`` batch.
    lower, upper : array_like
        Box; proposals outside are rejected without evaluating the target.
    n_steps : int
    rng : numpy.random.Generator
    cfg : AMConfig, optional
    x0 : array_like, optional
        Initial state, the box centre by default.
    qoi : callable, optional
        Maps the post-burn-in states to a dictionary of tracked series.

    Returns
    -------
    ChainResult
        States (whole chain), acceptance flags, rejection rate of the whole
        chain, IACT and mean per coordinate (``x_1``, ...) and per tracked
        series after burn-in. ``estimates["n_evals"]`` counts target
        evaluations.
    """
    cfg = cfg or AMConfig()
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    d = lower.size
    scale = cfg.scale if cfg.scale is not None else 2.38 ** 2 / d
    cov0 = np.eye(d) if cfg.initial_cov is None else np.asarray(cfg.initial_cov, dtype=float)
    x = 0.5 * (lower + upper) if x0 is None else np.asarray(x0, dtype=float).copy()

    n_evals = 0

    def logp(y):
        nonlocal n_evals
        if np.any(y < lower) or np.any(y > upper):
            return -np.inf
        n_evals += 1
        return float(log_density(y[None, :])[0])

    lp = logp(x)
    L = _chol(cov0, cfg.eps)
    Linv = np.linalg.inv(L)
    states = np.empty((n_steps, d))
    accepted = np.zeros(n_steps, dtype=bool)
    mean = x.copy()
    m2 = np.zeros((d, d))
    sqrt_shrink = np.sqrt(cfg.dr_shrink)
    for t in range(n_steps):
        z1 = rng.standard_normal(d)
        y1 = x + L @ z1
        lp1 = logp(y1)
        a1 = 1.0 if lp1 >= lp else (np.exp(lp1 - lp) if np.isfinite(lp1) else 0.0)
        if rng.random() < a1:
            x, lp = y1, lp1
            accepted[t] = True
        else:
            y2 = x + sqrt_shrink * (L @ rng.standard_normal(d))
            lp2 = logp(y2)
            if np.isfinite(lp2):
                # alpha_1(y2 -> y1) and the first-stage proposal density ratio q1(y2, y1) / q1(x, y1)
                a1_rev = 1.0 if lp1 >= lp2 else (np.exp(lp1 - lp2) if np.isfinite(lp1) else 0.0)
                r_new = Linv @ (y1 - y2)
                r_old = Linv @ (y1 - x)
                log_q = -0.5 * (r_new @ r_new) + 0.5 * (r_old @ r_old)
                num = 1.0 - a1_rev
                den = 1.0 - a1
                if num > 0 and den > 0:
                    log_a2 = lp2 - lp + log_q + np.log(num) - np.log(den)
                    if np.log(rng.random()) < log_a2:
                        x, lp = y2, lp2
                        accepted[t] = True
        states[t] = x
        # running mean and scatter of the chain (Welford)
        k = t + 2
        delta = x - mean
        mean = mean + delta / k
        m2 = m2 + np.outer(delta, x - mean)
        if cfg.adapt and t + 1 >= cfg.adapt_start and (t + 1 - cfg.adapt_start) % cfg.adapt_interval == 0:
            cov = scale * (m2 / (k - 1) + cfg.eps * np.eye(d))
            L = _chol(cov, cfg.eps)
            Linv = np.linalg.inv(L)
    start = int(cfg.burn_in * n_steps)
    kept = states[start:]
    series = {f"x_{k + 1}": kept[:, k] for k in range(d)}
    if qoi is not None:
        series.update({k: np.asarray(v, dtype=float) for k, v in qoi(kept).items()})
    tau = {k: (iact(v) if v.size >= 100 else float("nan")) for k, v in series.items()}
    est = {k: float(np.mean(v)) for k, v in series.items()}
    est["n_evals"] = float(n_evals)
    rejection_rate = float(np.count_nonzero(~accepted)) / n_steps
    return ChainResult(states, accepted, rejection_rate, tau, est)
