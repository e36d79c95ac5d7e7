"""Randomly shifted rank-1 lattice rules.

The generating vector is built component by component (CBC) for ``N = 2**m``
points, minimizing the shift-averaged worst-case error in the weighted
unanchored Sobolev space with product weights ``gamma_k``:

    e^2(z) = -1 + (1/N) sum_l prod_k (1 + gamma_k B2({l z_k / N})),
    B2(x) = x^2 - x + 1/6.

Each CBC step needs ``sum_l p(l) B2({z l / N})`` for every odd ``z``; the fast
construction writes the odd residues modulo ``2**j`` as ``+-5**a`` and turns
this sum into a cyclic correlation evaluated with the FFT.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError

MAX_DIM = 64
MAX_LOG2_POINTS = 24


def bernoulli2(x):
    return x * x - x + 1.0 / 6.0


def default_weights(d: int) -> np.ndarray:
    """Product weights ``gamma_k = 1 / k**2`` (``k`` one-based)."""
    return 1.0 / np.arange(1, d + 1, dtype=float) ** 2


def _check_size(d: int, n_points: int) -> int:
    if not 1 <= d <= MAX_DIM:
        raise ConfigError(f"lattice dimension must be in [1, {MAX_DIM}], got {d}")
    m = int(n_points).bit_length() - 1
    if n_points < 2 or n_points != 1 << m:
        raise ConfigError(f"number of lattice points must be a power of 2 (>= 2), got {n_points}")
    if m > MAX_LOG2_POINTS:
        raise ConfigError(f"at most 2**{MAX_LOG2_POINTS} lattice points supported, got 2**{m}")
    return m


def worst_case_error_sq(z: Sequence[int], n_points: int, weights=None) -> float:
    """Shift-averaged squared worst-case error of the lattice with vector ``z``."""
    z = np.asarray(z, dtype=np.int64)
    weights = default_weights(z.size) if weights is None else np.asarray(weights, dtype=float)
    ell = np.arange(n_points, dtype=np.int64)
    prod = np.ones(n_points)
    for zk, gk in zip(z, weights):
        prod *= 1.0 + gk * bernoulli2((ell * zk % n_points) / n_points)
    return float(prod.mean() - 1.0)


def cbc_naive(d: int, n_points: int, weights=None) -> np.ndarray:
    """Plain ``O(d N^2)`` CBC over odd candidates; a reference for :func:`build_generating_vector`."""
    _check_size(d, n_points)
    weights = default_weights(d) if weights is None else np.asarray(weights, dtype=float)
    ell = np.arange(n_points, dtype=np.int64)
    cands = np.arange(1, n_points, 2, dtype=np.int64)
    prod = np.ones(n_points)
    z = []
    for k in range(d):
        if k == 0:
            best = 1
        else:
            omega = bernoulli2((np.outer(cands, ell) % n_points) / n_points)
            best = int(cands[np.argmin(omega @ prod)])
        z.append(best)
        prod *= 1.0 + weights[k] * bernoulli2((ell * best % n_points) / n_points)
    return np.array(z, dtype=np.int64)


class _Level:
    """Odd residues modulo ``M = 2**j`` indexed as ``s * 5**a`` (``s = +-1``)."""

    def __init__(self, modulus: int):
        self.M = modulus
        half = max(modulus // 4, 1)
        self.half = half
        pw = np.ones(half, dtype=np.int64)
        for a in range(1, half):
            pw[a] = pw[a - 1] * 5 % modulus
        # table[s, a] = (+-1) * 5**a mod M
        self.table = np.vstack([pw, (-pw) % modulus])
        self.sign = np.zeros(modulus, dtype=np.intp)
        self.expo = np.zeros(modulus, dtype=np.intp)
        for s in (1, 0):
            self.sign[self.table[s]] = s
            self.expo[self.table[s]] = np.arange(half)


def _odd_sums(p: np.ndarray, m: int, levels: list) -> np.ndarray:
    """``T(z) = sum_l p(l) B2({z l / N})`` for all odd ``z``, returned at index ``(z - 1) // 2``."""
    N = 1 << m
    odd = np.arange(1, N, 2, dtype=np.int64)
    total = np.full(odd.size, p[0] * bernoulli2(0.0))
    for j in range(m):
        M = N >> j
        if M == 2:
            # the only odd residue is 1, and z * 1 = 1 mod 2 for every odd z
            total += p[N // 2] * bernoulli2(0.5)
            continue
        lev = levels[m - j]
        # ell = 2**j * u with u odd mod M; z * ell mod N = 2**j * (z u mod M)
        u = lev.table  # (2, half) residues
        P = p[(u << j)]
        W = bernoulli2(u / M)
        corr = np.fft.ifft2(np.conj(np.fft.fft2(P)) * np.fft.fft2(W)).real
        zr = odd % M
        total += corr[lev.sign[zr], lev.expo[zr]]
    return total


def build_generating_vector(d: int, n_points: int, weights=None) -> np.ndarray:
    """Fast CBC generating vector with odd components and ``z_1 = 1``.

    Parameters
    ----------
    d : int
        Dimension, at most 64.
    n_points : int
        Number of points, a power of 2.
    weights : array_like, optional
        Product weights; defaults to ``1 / k**2``.
    """
    m = _check_size(d, n_points)
    weights = default_weights(d) if weights is None else np.asarray(weights, dtype=float)
    if weights.size < d:
        raise ConfigError(f"need {d} weights, got {weights.size}")
    N = n_points
    levels = [None] + [_Level(1 << i) for i in range(1, m + 1)]
    ell = np.arange(N, dtype=np.int64)
    prod = np.ones(N)
    z = []
    for k in range(d):
        if k == 0:
            best = 1
        else:
            sums = _odd_sums(prod, m, levels)
            best = 2 * int(np.argmin(sums)) + 1
        z.append(best)
        prod *= 1.0 + weights[k] * bernoulli2((ell * best % N) / N)
    return np.array(z, dtype=np.int64)


def save_generating_vector(path, z, n_points: int, criterion: float) -> None:
    """Cache format: ``d N`` on the first line, the criterion on the second, then one component per line."""
    z = np.asarray(z, dtype=np.int64)
    lines = [f"{z.size} {n_points}", repr(float(criterion))] + [str(int(v)) for v in z]
    Path(path).write_text("\n".join(lines) + "\n")


def load_generating_vector(path):
    """Inverse of :func:`save_generating_vector`; returns ``(z, n_points, criterion)``."""
    lines = Path(path).read_text().split()
    d, n_points = int(lines[0]), int(lines[1])
    criterion = float(lines[2])
    z = np.array([int(v) for v in lines[3:3 + d]], dtype=np.int64)
    if z.size != d:
        raise ConfigError(f"{path}: expected {d} components, found {z.size}")
    return z, n_points, criterion


def generating_vector(d: int, n_points: int, cache_dir=None) -> np.ndarray:
    """CBC vector with default weights, read from or written to ``cache_dir`` if given."""
    if cache_dir is None:
        return build_generating_vector(d, n_points)
    path = Path(cache_dir) / f"lattice-d{d}-n{n_points}.txt"
    if path.exists():
        z, n_cached, _ = load_generating_vector(path)
        if n_cached == n_points and z.size == d:
            return z
    z = build_generating_vector(d, n_points)
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    save_generating_vector(path, z, n_points, worst_case_error_sq(z, n_points))
    return z


@dataclass
class LatticeRule:
    """Rank-1 lattice ``frac(l z / N + shift)``, ``l = 0..N-1``.

    The shift is drawn from ``numpy.random.default_rng(seed)`` unless given.
    """

    z: np.ndarray
    n_points: int
    shift: Optional[np.ndarray] = None
    seed: Optional[int] = None
    _points: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.int64).reshape(-1)
        if self.n_points < 1:
            raise ConfigError("n_points must be positive")
        if np.any(self.z < 0):
            raise ConfigError("generating vector components must be nonnegative")
        if self.shift is None:
            self.shift = np.random.default_rng(self.seed).random(self.z.size)
        self.shift = np.asarray(self.shift, dtype=float).reshape(-1)
        if self.shift.size != self.z.size:
            raise ConfigError("shift and generating vector differ in length")

    @property
    def d(self) -> int:
        return self.z.size

    @classmethod
    def cbc(cls, d: int, n_points: int, seed: Optional[int] = None, cache_dir=None) -> "LatticeRule":
        return cls(generating_vector(d, n_points, cache_dir), n_points, seed=seed)

    def points(self) -> np.ndarray:
        return lattice_points(self)


def lattice_points(rule: LatticeRule) -> np.ndarray:
    """``N x d`` array with rows ``frac(l z / N + shift)``."""
    ell = np.arange(rule.n_points, dtype=np.int64)[:, None]
    base = (ell * rule.z[None, :] % rule.n_points) / rule.n_points
    pts = base + rule.shift[None, :]
    pts -= np.floor(pts)
    return pts
