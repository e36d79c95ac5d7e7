"""Weibull accelerated-failure-time posterior for shock absorber failure data."""

from __future__ import annotations

import numpy as np
from scipy import optimize

from ..tt import Grid
from .base import TargetDensity

# Distance to failure (km) of 38 vehicle shock absorbers; True marks a
# right-censored record (the unit was still working at that distance).
# Data from O'Connor and Kleyner, Practical Reliability Engineering.
FAILURE_DATA = (
    (6700, False), (6950, True), (7820, True), (8790, True), (9120, False),
    (9660, True), (9820, True), (11310, True), (11690, True), (11850, True),
    (11880, True), (12140, True), (12200, False), (12870, True), (13150, False),
    (13330, True), (13470, True), (14040, True), (14300, False), (17520, False),
    (17540, True), (17890, True), (18420, True), (18960, True), (18980, True),
    (19410, True), (20100, False), (20100, True), (20150, True), (20320, True),
    (20900, False), (22700, False), (23490, True), (26510, False), (27410, True),
    (27490, False), (27890, True), (28100, True),
)

GAMMA = 2.2932
ALPHA = 6.8757
M0 = float(np.log(30796.0))
SIGMA0_SQ = 0.1563
THETA2_MAX = 13.0
COVARIATE_SEED = 20190501


def covariates(n_cov: int, seed: int = COVARIATE_SEED) -> np.ndarray:
    """Synthetic standardized covariates, shape ``(38, n_cov)``."""
    return np.random.default_rng(seed).standard_normal((len(FAILURE_DATA), n_cov))


class ShockAbsorber(TargetDensity):
    """Posterior over ``(beta_0, ..., beta_D, theta_2)``.

    The scale is ``theta_1 = exp(beta_0 + sum_k beta_k x_k)``; the prior is
    the s-Normal-Gamma density with the constants of this module. The box is
    ``m_0 +- 3 sigma_0`` for ``beta_0``, ``[-3, 3]`` for the other
    coefficients and ``(0, 13]`` for the shape ``theta_2``.

    Quantities of interest are evaluated for a unit with all covariates at
    their mean (zero), i.e. ``theta_1 = exp(beta_0)``.
    """

    name = "shock"

    def __init__(self, n_cov: int = 2, seed: int = COVARIATE_SEED):
        self.n_cov = int(n_cov)
        if self.n_cov < 0:
            raise ValueError("number of covariates must be nonnegative")
        self.times = np.array([t for t, _ in FAILURE_DATA], dtype=float)
        self.censored = np.array([c for _, c in FAILURE_DATA], dtype=bool)
        self.X = covariates(self.n_cov, seed)
        s0 = np.sqrt(SIGMA0_SQ)
        lower = np.concatenate([[M0 - 3 * s0], -3.0 * np.ones(self.n_cov), [0.0]])
        upper = np.concatenate([[M0 + 3 * s0], 3.0 * np.ones(self.n_cov), [THETA2_MAX]])
        super().__init__(lower, upper)
        self.prior_mean = np.concatenate([[M0], np.zeros(self.n_cov)])
        self.prior_var = np.concatenate([[SIGMA0_SQ], np.ones(self.n_cov)])

    def grid(self, n) -> Grid:
        """Uniform grid; the ``theta_2`` nodes start at ``13 / (2 n)`` to avoid the zero shape."""
        n = np.broadcast_to(np.atleast_1d(n), (self.dim,)).astype(int)
        nodes = [np.linspace(a, b, m) for a, b, m in zip(self.lower[:-1], self.upper[:-1], n[:-1])]
        nodes.append(np.linspace(THETA2_MAX / (2 * n[-1]), THETA2_MAX, n[-1]))
        return Grid(nodes)

    def log_prior(self, beta: np.ndarray, theta2: np.ndarray) -> np.ndarray:
        quad = np.sum((beta - self.prior_mean) ** 2 / (2 * self.prior_var), axis=1)
        with np.errstate(divide="ignore"):
            return (ALPHA - 0.5) * np.log(theta2) - theta2 * quad - GAMMA * theta2

    def log_likelihood(self, beta: np.ndarray, theta2: np.ndarray) -> np.ndarray:
        log_theta1 = beta[:, :1] + beta[:, 1:] @ self.X.T  # (M, 38)
        z = np.log(self.times)[None, :] - log_theta1  # log(t / theta_1)
        k = theta2[:, None]
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            surv = -np.exp(k * z)
            dens = np.log(k) - log_theta1 + (k - 1.0) * z + surv
        terms = np.where(self.censored[None, :], surv, dens)
        return terms.sum(axis=1)

    def evaluate(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        beta = x[:, :-1]
        theta2 = x[:, -1]
        out = np.full(x.shape[0], -np.inf)
        ok = theta2 > 0
        if np.any(ok):
            lp = self.log_prior(beta[ok], theta2[ok]) + self.log_likelihood(beta[ok], theta2[ok])
            out[ok] = np.where(np.isnan(lp), -np.inf, lp)
        theta1 = np.exp(beta[:, 0])
        return out, {"theta1": theta1, "theta2": theta2}

    def integrands(self, qoi: dict) -> dict:
        """Per-sample Weibull 95% quantile, whose mean is the mean quantile."""
        theta1 = np.asarray(qoi["theta1"], dtype=float)
        theta2 = np.asarray(qoi["theta2"], dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            q = theta1 * (-np.log1p(-0.95)) ** (1.0 / theta2)
        return {"mean_quantile": q}

    def summarize(self, values: dict, weights=None) -> dict:
        """Mean quantile and quantile of the mean distribution.

        ``values`` must also carry the ``theta1`` and ``theta2`` series.
        """
        return shock_qois(values["theta1"], values["theta2"], weights)


def mean_quantile(theta1, theta2, p: float = 0.95) -> float:
    """Average over samples of the Weibull ``p``-quantile ``theta_1 (-log(1-p))^(1/theta_2)``."""
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    return float(np.mean(theta1 * (-np.log1p(-p)) ** (1.0 / theta2)))


def _mixture_cdf(t, theta1, theta2, weights):
    return float(np.sum(weights * -np.expm1(-((t / theta1) ** theta2))))


def _mixture_pdf(t, theta1, theta2, weights):
    z = (t / theta1) ** theta2
    return float(np.sum(weights * theta2 / t * z * np.exp(-z)))


def mixture_quantile(theta1, theta2, p: float = 0.95, weights=None, tol: float = 1e-12,
                     max_iter: int = 100) -> float:
    """``t`` with ``sum_i w_i F_Weibull(t; theta_1^i, theta_2^i) = p`` (weights summing to one).

    Newton's method from the mean of the per-sample quantiles, safeguarded by
    a bracketing interval; steps leaving the bracket fall back to bisection.

    Raises
    ------
    RuntimeError
        If no root within ``tol`` relative accuracy is found.
    """
    theta1 = np.asarray(theta1, dtype=float).ravel()
    theta2 = np.asarray(theta2, dtype=float).ravel()
    if np.any(theta1 <= 0) or np.any(theta2 <= 0):
        raise ValueError("Weibull parameters must be positive")
    w = np.full(theta1.size, 1.0 / theta1.size) if weights is None else np.asarray(weights, float)
    w = w / w.sum()
    qs = theta1 * (-np.log1p(-p)) ** (1.0 / theta2)
    lo, hi = float(qs.min()), float(qs.max())
    if hi <= lo * (1 + tol):
        return hi
    t = float(np.clip(np.dot(w, qs), lo, hi))
    for _ in range(max_iter):
        f = _mixture_cdf(t, theta1, theta2, w) - p
        if f > 0:
            hi = t
        else:
            lo = t
        if hi - lo <= tol * hi:
            return 0.5 * (lo + hi)
        fp = _mixture_pdf(t, theta1, theta2, w)
        step = f / fp if fp > 0 else np.inf
        t_new = t - step
        if not (lo < t_new < hi):
            t_new = 0.5 * (lo + hi)
        if abs(t_new - t) <= tol * t:
            return t_new
        t = t_new
    # bracketing fallback
    try:
        return float(optimize.brentq(lambda s: _mixture_cdf(s, theta1, theta2, w) - p, lo, hi,
                                     xtol=tol * hi, rtol=4 * np.finfo(float).eps))
    except ValueError as exc:
        raise RuntimeError(f"quantile iteration failed: {exc}") from exc


def shock_qois(theta1, theta2, weights=None, p: float = 0.95) -> dict:
    """Mean ``p``-quantile and ``p``-quantile of the mean distribution.

    With ``weights`` (importance weights) both averages are weighted.
    """
    theta1 = np.asarray(theta1, dtype=float).ravel()
    theta2 = np.asarray(theta2, dtype=float).ravel()
    if weights is None:
        mq = mean_quantile(theta1, theta2, p)
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        mq = float(np.dot(w, theta1 * (-np.log1p(-p)) ** (1.0 / theta2)))
    return {
        "mean_quantile": mq,
        "quantile_of_mean": mixture_quantile(theta1, theta2, p, weights),
    }
