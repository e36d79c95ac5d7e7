"""Bias correction of surrogate samples and chain diagnostics.

* :func:`mh_correct` runs an independence Metropolis-Hastings chain whose
  proposals are the surrogate samples, in seed order.
* :func:`importance_estimate` is the self-normalized importance-weighted
  ratio estimator; it accepts i.i.d. or lattice seeds.
* :func:`two_level_mh` and :func:`two_level_iw` add a correction term to a
  cheap surrogate expectation of a control variate ``g~``.
* :func:`iact` estimates the integrated autocorrelation time with Geyer's
  initial positive sequence.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .cd import SampleBatch
from .errors import DomainError

METHODS = ("TT-MH", "TT-rIW", "TT-qIW", "TT-MH-2L", "TT-qIW-2L", "AM")


def iact(series) -> float:
    """Integrated autocorrelation time ``1 + 2 sum_t rho(t)``.

    The sum is truncated with Geyer's initial positive sequence: pair sums
    ``Gamma_m = gamma(2m) + gamma(2m+1)`` are accumulated while positive.
    ``Gamma_0`` is always kept, so antithetic series give values below one.

    Raises
    ------
    ValueError
        If the series has fewer than 100 entries.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if n < 100:
        raise ValueError(f"IACT needs at least 100 values, got {n}")
    scale = float(np.max(np.abs(x)))
    x = x - x.mean()
    var = np.dot(x, x) / n
    if var <= (1e-14 * scale) ** 2:
        warnings.warn("constant series; IACT set to 1")
        return 1.0
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    pairs = acov[: n - n % 2].reshape(-1, 2).sum(axis=1)
    total = pairs[0]
    for g in pairs[1:]:
        if g <= 0:
            break
        total += g
    return float(-1.0 + 2.0 * total / var)


@dataclass
class ChainResult:
    """Output of a Markov chain run.

    Attributes
    ----------
    states : ndarray, shape (N, d)
    accepted : ndarray of bool, shape (N,)
    rejection_rate : float
        Number of rejected proposals divided by ``N``.
    tau : dict
        IACT per tracked statistic.
    estimates : dict
        Chain average per tracked statistic.
    index : ndarray, optional
        For independence chains, the proposal index held at each step.
    """

    states: np.ndarray
    accepted: np.ndarray
    rejection_rate: float
    tau: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict)
    index: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.accepted.size


def _track(values: Mapping[str, np.ndarray]) -> tuple[dict, dict]:
    tau, est = {}, {}
    for name, v in values.items():
        v = np.asarray(v, dtype=float)
        est[name] = float(v.mean())
        tau[name] = iact(v) if v.size >= 100 else float("nan")
    return tau, est


def independence_chain(log_w: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Indices held by an independence sampler with log weights ``log_w`` and uniforms ``u``.

    The first proposal initializes the chain; proposal ``j`` replaces the
    current state ``c`` iff ``log u_j < log_w[j] - log_w[c]``.
    """
    n = log_w.size
    idx = np.empty(n, dtype=np.intp)
    logu = np.log(u)
    cur = 0
    cur_w = log_w[0]
    idx[0] = 0
    for j in range(1, n):
        lw = log_w[j]
        if logu[j] < lw - cur_w:
            cur = j
            cur_w = lw
        idx[j] = cur
    return idx


def mh_correct(
    batch: SampleBatch,
    rng: np.random.Generator,
    qoi: Optional[Mapping[str, np.ndarray]] = None,
) -> ChainResult:
    """Independence Metropolis-Hastings over the surrogate samples in ``batch``.

    Acceptance uses ``h = pi(x') pistar(x) / (pi(x) pistar(x'))``. ``qoi``
    maps names to per-proposal values; the chain averages and IACTs of these
    are reported.

    Raises
    ------
    DomainError
        For lattice-seeded batches (MH is only valid with i.i.d. proposals) or
        batches without target densities.
    """
    if batch.seed_kind != "iid":
        raise DomainError("MH correction requires i.i.d. seeds; use importance weighting for lattices")
    if batch.log_pi is None:
        raise DomainError("batch has no target densities")
    log_w = batch.log_weights
    if np.any(np.isnan(log_w)) or np.any(log_w == np.inf):
        raise DomainError("target or surrogate densities are not finite and positive")
    n = len(batch)
    idx = independence_chain(log_w, rng.random(n))
    accepted = np.empty(n, dtype=bool)
    accepted[0] = True
    accepted[1:] = idx[1:] == np.arange(1, n)
    rejection_rate = float(np.count_nonzero(~accepted)) / n
    values = {k: np.asarray(v)[idx] for k, v in (qoi or {}).items()}
    tau, est = _track(values)
    return ChainResult(batch.x[idx], accepted, rejection_rate, tau, est, idx)


@dataclass
class WeightedEstimate:
    """Self-normalized importance-weighted estimate.

    Attributes
    ----------
    estimate : float or ndarray
    z_tilde : float
        Mean weight (estimate of the normalizing constant ratio).
    max_w : float
        Largest weight divided by ``z_tilde``.
    e_l1 : float
        Mean of ``|w / z_tilde - 1|``.
    stderr : float or ndarray
        Delta-method standard error, meaningful for i.i.d. seeds only.
    n : int
    """

    estimate: np.ndarray
    z_tilde: float
    max_w: float
    e_l1: float
    stderr: np.ndarray
    n: int


def importance_estimate(weights, g) -> WeightedEstimate:
    """Ratio estimator ``sum g w / sum w``.

    Parameters
    ----------
    weights : array_like, shape (N,)
        Nonnegative importance weights ``pi / pistar`` (any common scale).
    g : array_like, shape (N,) or (N, m)
        Integrand values.
    """
    w = np.asarray(weights, dtype=float).ravel()
    g = np.asarray(g, dtype=float)
    if g.shape[0] != w.size:
        raise DomainError(f"{w.size} weights but {g.shape[0]} integrand values")
    if w.size == 0:
        raise DomainError("need at least one sample")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DomainError("weights must be finite and nonnegative")
    z = float(w.mean())
    if z <= 0:
        raise DomainError("all importance weights are zero")
    wn = w / z
    gm = g.reshape(w.size, -1)
    est = (wn @ gm) / w.size
    resid = wn[:, None] * (gm - est[None, :])
    se = np.sqrt(np.sum(resid * resid, axis=0)) / w.size
    if g.ndim == 1:
        est, se = float(est[0]), float(se[0])
    return WeightedEstimate(est, z, float(wn.max()), float(np.mean(np.abs(wn - 1.0))), se, w.size)


@dataclass
class TwoLevelEstimate:
    estimate: float
    coarse: float
    correction: float
    correction_var: float
    n_coarse: int
    n_fine: int
    chain: Optional[ChainResult] = None


def two_level_mh(
    gt_coarse,
    batch: SampleBatch,
    g_fine,
    gt_fine,
    rng: np.random.Generator,
) -> TwoLevelEstimate:
    """Surrogate mean of ``g~`` plus the MH-corrected mean of ``g(x_MH) - g~(x)``.

    Parameters
    ----------
    gt_coarse : array_like, shape (N0,)
        ``g~`` at independent surrogate samples (no correction needed).
    batch : SampleBatch
        ``N1`` proposals with target densities attached.
    g_fine, gt_fine : array_like, shape (N1,)
        ``g`` and ``g~`` at the proposals of ``batch``.
    """
    gt_coarse = np.asarray(gt_coarse, dtype=float)
    g_fine = np.asarray(g_fine, dtype=float)
    gt_fine = np.asarray(gt_fine, dtype=float)
    chain = mh_correct(batch, rng)
    diff = g_fine[chain.index] - gt_fine
    coarse = float(gt_coarse.mean())
    corr = float(diff.mean())
    return TwoLevelEstimate(
        coarse + corr, coarse, corr, float(diff.var()), gt_coarse.size, diff.size, chain
    )


def two_level_iw(gt_coarse, weights, g_fine, gt_fine) -> TwoLevelEstimate:
    """Surrogate mean of ``g~`` plus the importance-weighted mean of ``g w / Z~ - g~``."""
    gt_coarse = np.asarray(gt_coarse, dtype=float)
    w = np.asarray(weights, dtype=float)
    g_fine = np.asarray(g_fine, dtype=float)
    gt_fine = np.asarray(gt_fine, dtype=float)
    z = float(w.mean())
    if z <= 0:
        raise DomainError("all importance weights are zero")
    diff = g_fine * (w / z) - gt_fine
    coarse = float(gt_coarse.mean()) if gt_coarse.size else 0.0
    corr = float(diff.mean())
    return TwoLevelEstimate(coarse + corr, coarse, corr, float(diff.var()), gt_coarse.size, diff.size)


def lemma_diagnostics(batch: SampleBatch, chain: Optional[ChainResult] = None,
                      rng: Optional[np.random.Generator] = None) -> dict:
    """Weight diagnostics next to the observed rejection rate.

    Returns ``e_l1`` (mean ``|w/Z~ - 1|``), ``w_max`` (largest normalized
    weight), ``rejection_rate``, ``rejection_bound = 2 e_l1`` and
    ``tau_bound = (1 + a) / (1 - a)`` with ``a = 1 - 1/w_max``.
    """
    if chain is None:
        chain = mh_correct(batch, rng if rng is not None else np.random.default_rng())
    w = batch.weights
    z = w.mean()
    wn = w / z
    e_l1 = float(np.mean(np.abs(wn - 1.0)))
    w_max = float(wn.max())
    return {
        "e_l1": e_l1,
        "w_max": w_max,
        "rejection_rate": chain.rejection_rate,
        "rejection_bound": 2.0 * e_l1,
        "tau_bound": 2.0 * w_max - 1.0,
    }


def estimate_record(method: str, n: int, estimate, stderr=None, tau=None,
                    rejection_rate=None, e_l1=None, **extra) -> dict:
    """JSON-ready record of one estimate.

    Scalars, arrays and dictionaries of them are converted to plain Python
    values; non-finite numbers become ``None``.
    """
    if method not in METHODS:
        raise DomainError(f"unknown method tag {method!r}")

    def plain(v):
        if v is None:
            return None
        if isinstance(v, Mapping):
            return {str(k): plain(x) for k, x in v.items()}
        a = np.asarray(v, dtype=float)
        if a.ndim == 0:
            f = float(a)
            return f if np.isfinite(f) else None
        return [plain(x) for x in a]

    rec = {
        "method": method,
        "N": int(n),
        "estimate": plain(estimate),
        "stderr": plain(stderr),
        "tau": plain(tau),
        "rejection_rate": plain(rejection_rate),
        "e_l1": plain(e_l1),
    }
    rec.update(extra)
    return rec
