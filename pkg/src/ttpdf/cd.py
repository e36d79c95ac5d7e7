"""Conditional-distribution sampling from a TT density surrogate.

Seeds ``q`` in the unit cube are mapped coordinate by coordinate through the
inverse CDFs of the conditional marginals of the TT interpolant (the inverse
Rosenblatt transform). Each conditional marginal is the piecewise-linear
interpolant of nodal values ``|phi @ Psi_k|`` and its CDF is the exact
piecewise-quadratic antiderivative, so the map is exact for the surrogate.
Negative interpolant values are replaced by their modulus.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import DomainError
from .tt import TTTensor

_SEED_KINDS = ("iid", "lattice")


@dataclass(frozen=True)
class SampleBatch:
    """Seeds, mapped points and densities of one sampling run.

    Attributes
    ----------
    seeds : ndarray, shape (N, d)
    x : ndarray, shape (N, d)
    log_pistar : ndarray, shape (N,)
        Log of the normalized surrogate density at ``x``.
    log_pi : ndarray, shape (N,), optional
        Log of the (unnormalized) target density at ``x``.
    seed_kind : {"iid", "lattice"}
    """

    seeds: np.ndarray
    x: np.ndarray
    log_pistar: np.ndarray
    log_pi: Optional[np.ndarray] = None
    seed_kind: str = "iid"

    def __post_init__(self):
        if self.seed_kind not in _SEED_KINDS:
            raise DomainError(f"seed_kind must be one of {_SEED_KINDS}")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def pistar(self) -> np.ndarray:
        return np.exp(self.log_pistar)

    @property
    def pi(self) -> Optional[np.ndarray]:
        return None if self.log_pi is None else np.exp(self.log_pi)

    @property
    def log_weights(self) -> np.ndarray:
        if self.log_pi is None:
            raise DomainError("target densities have not been attached to this batch")
        return self.log_pi - self.log_pistar

    @property
    def weights(self) -> np.ndarray:
        """Importance weights ``w = pi / pistar``."""
        return np.exp(self.log_weights)

    def with_target(self, log_pi) -> "SampleBatch":
        log_pi = np.asarray(log_pi, dtype=float).reshape(-1)
        if log_pi.size != len(self):
            raise DomainError(f"expected {len(self)} target values, got {log_pi.size}")
        return replace(self, log_pi=log_pi)

    def take(self, n: int) -> "SampleBatch":
        """The first ``n`` samples."""
        lp = None if self.log_pi is None else self.log_pi[:n]
        return SampleBatch(self.seeds[:n], self.x[:n], self.log_pistar[:n], lp, self.seed_kind)

    def to_csv(self, path) -> None:
        """Write columns ``q_1..q_d, x_1..x_d, pistar`` and, if known, ``pi, w``."""
        d = self.d
        header = [f"q_{k + 1}" for k in range(d)] + [f"x_{k + 1}" for k in range(d)] + ["pistar"]
        cols = [self.seeds, self.x, self.pistar[:, None]]
        if self.log_pi is not None:
            header += ["pi", "w"]
            cols += [self.pi[:, None], self.weights[:, None]]
        table = np.hstack(cols)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in table:
                writer.writerow([repr(float(v)) for v in row])


def _cell_masses(p: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Trapezoid masses of the linear interpolant per cell; ``p`` has nodes on the last axis."""
    return 0.5 * h * (p[..., :-1] + p[..., 1:])


def _invert(p: np.ndarray, nodes: np.ndarray, q: np.ndarray):
    """Row-wise inversion; ``p`` is ``(N, n)``, ``q`` is ``(N,)``.

    Returns the cell index, the local coordinate ``t`` in ``[0, 1]`` and the
    normalizing constant of each row.
    """
    h = np.diff(nodes)
    masses = _cell_masses(p, h)
    cum = np.cumsum(masses, axis=1)
    total = cum[:, -1]
    target = q * total
    n_cells = h.size
    # first cell whose cumulative mass exceeds the target
    j = np.minimum(np.count_nonzero(cum <= target[:, None], axis=1), n_cells - 1)
    rows = np.arange(q.size)
    before = np.where(j > 0, cum[rows, np.maximum(j - 1, 0)], 0.0)
    rem = np.clip(target - before, 0.0, None)
    pl = p[rows, j]
    pr = p[rows, j + 1]
    # mass over [x_j, x_j + t h] is h (pl t + (pr - pl) t^2 / 2) = rem
    a = 0.5 * (pr - pl) * h[j]
    b = pl * h[j]
    disc = np.sqrt(np.maximum(b * b + 4.0 * a * rem, 0.0))
    denom = b + disc
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom > 0, 2.0 * rem / denom, 0.0)
    t = np.clip(t, 0.0, 1.0)
    # a seed hitting the exact edge of the support (q = 0 at a zero node) is
    # moved inside so that the reported density stays positive
    edge = (pl <= 0) & (t == 0)
    t[edge] = np.minimum(1.0, 1e-12 + t[edge])
    return j, t, total


def _check_seeds(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if np.any(~np.isfinite(q)) or np.any(q < 0) or np.any(q > 1):
        raise DomainError("seeds must lie in [0, 1)")
    # q == 1 would map to the upper box edge only by accident of rounding
    return np.where(q >= 1.0, np.nextafter(1.0, 0.0), q)


def invert_cdf(p, nodes, q):
    """Inverse CDF of the piecewise-linear density with nodal values ``p``.

    Parameters
    ----------
    p : array_like, shape (n,)
        Nonnegative nodal density values, not all zero; need not be normalized.
    nodes : array_like, shape (n,)
        Strictly increasing nodes.
    q : float or array_like
        Probabilities in ``[0, 1)``.

    Returns
    -------
    float or ndarray
        ``x`` with ``C(x) = q`` where ``C`` is the normalized exact CDF.
    """
    p = np.asarray(p, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    if p.shape != nodes.shape or p.ndim != 1:
        raise DomainError("p and nodes must be 1-D arrays of equal length")
    if np.any(p < 0) or not np.any(p > 0):
        raise DomainError("density values must be nonnegative and not all zero")
    qa = np.atleast_1d(np.asarray(q, dtype=float))
    if np.any(qa < 0) or np.any(qa >= 1) or np.any(~np.isfinite(qa)):
        raise DomainError("q must lie in [0, 1)")
    j, t, _ = _invert(np.broadcast_to(p, (qa.size, p.size)), nodes, qa)
    x = nodes[j] + t * (nodes[j + 1] - nodes[j])
    return float(x[0]) if np.ndim(q) == 0 else x.reshape(np.shape(q))


def cdf(p, nodes, x):
    """Normalized exact CDF of the piecewise-linear density with nodal values ``p``."""
    p = np.asarray(p, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    h = np.diff(nodes)
    masses = _cell_masses(p, h)
    cum = np.concatenate([[0.0], np.cumsum(masses)])
    j = np.clip(np.searchsorted(nodes, xa, side="right") - 1, 0, h.size - 1)
    t = np.clip((xa - nodes[j]) / h[j], 0.0, 1.0)
    part = h[j] * (p[j] * t + 0.5 * (p[j + 1] - p[j]) * t * t)
    out = (cum[j] + part) / cum[-1]
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))


class CDSampler:
    """Inverse Rosenblatt map of a TT density surrogate.

    Parameters
    ----------
    tt : TTTensor
        Nodal values of the (unnormalized) density.
    chunk_size : int, optional
        Seeds processed per block; defaults to ``min(2**14, 2**24 // max(n_k))``.
    """

    def __init__(self, tt: TTTensor, chunk_size: Optional[int] = None):
        self.tt = tt
        self.P = tt.partial_integrals()
        total = float(self.P[0][0])
        scale = max(np.max(np.abs(c)) for c in tt.cores)
        if not np.isfinite(total) or abs(total) <= 1e-300 or scale == 0:
            raise DomainError("TT density integrates to zero; nothing to sample")
        self.total = total
        # deterministic part of each conditional: Psi_k = G_k . P_{k+1}, shape (r_k, n_k)
        self.psi = [np.tensordot(c, self.P[k + 1], axes=(2, 0)) for k, c in enumerate(tt.cores)]
        self.chunk_size = chunk_size or min(1 << 14, (1 << 24) // max(tt.shape))

    @property
    def d(self) -> int:
        return self.tt.d

    def marginal_pdf(self, k: int, phi) -> np.ndarray:
        """Nodal values ``|phi @ Psi_k|`` of the conditional marginal in dimension ``k``.

        ``phi`` is a row of length ``r_k`` (or a stack of rows).
        """
        phi = np.asarray(phi, dtype=float)
        if phi.shape[-1] != self.psi[k].shape[0]:
            raise DomainError(f"phi must have length {self.psi[k].shape[0]} for dimension {k}")
        p = np.abs(phi @ self.psi[k])
        if np.any(np.max(p, axis=-1) <= 0):
            raise DomainError(f"conditional marginal in dimension {k} vanishes identically")
        return p

    def transform(self, seeds, seed_kind: str = "iid") -> SampleBatch:
        """Map ``(N, d)`` seeds in ``[0, 1)`` to surrogate samples."""
        seeds = np.asarray(seeds, dtype=float)
        if seeds.ndim != 2 or seeds.shape[1] != self.d:
            raise DomainError(f"seeds must have shape (N, {self.d})")
        q = _check_seeds(seeds)
        N = q.shape[0]
        x = np.empty_like(q)
        logp = np.zeros(N)
        for s in range(0, N, self.chunk_size):
            sl = slice(s, s + self.chunk_size)
            x[sl], logp[sl] = self._transform_block(q[sl])
        return SampleBatch(seeds, x, logp, None, seed_kind)

    def _transform_block(self, q: np.ndarray):
        N = q.shape[0]
        x = np.empty_like(q)
        logp = np.zeros(N)
        phi = np.ones((N, 1))
        grid = self.tt.grid
        for k, core in enumerate(self.tt.cores):
            nodes = grid.nodes[k]
            p = self.marginal_pdf(k, phi)
            j, t, total = _invert(p, nodes, q[:, k])
            x[:, k] = nodes[j] + t * (nodes[j + 1] - nodes[j])
            rows = np.arange(N)
            dens = (1 - t) * p[rows, j] + t * p[rows, j + 1]
            with np.errstate(divide="ignore"):
                logp += np.log(dens) - np.log(total)
            if k + 1 < self.d:
                phi = _advance(phi, core, j, t)
        return x, logp


def _advance(phi: np.ndarray, core: np.ndarray, j: np.ndarray, t: np.ndarray) -> np.ndarray:
    """``phi @ G(x)`` with ``G`` interpolated linearly inside cell ``j``; rows rescaled to unit max."""
    out = np.empty((phi.shape[0], core.shape[2]))
    order = np.argsort(j, kind="stable")
    cells, starts = np.unique(j[order], return_index=True)
    bounds = np.append(starts, order.size)
    for c, lo, hi in zip(cells, bounds[:-1], bounds[1:]):
        rows = order[lo:hi]
        tt = t[rows, None]
        out[rows] = (1 - tt) * (phi[rows] @ core[:, c, :]) + tt * (phi[rows] @ core[:, c + 1, :])
    scale = np.max(np.abs(out), axis=1, keepdims=True)
    scale[scale == 0] = 1.0
    return out / scale
