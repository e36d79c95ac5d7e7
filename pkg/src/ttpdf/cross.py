"""Alternating TT-cross interpolation of a function given on a tensor grid.

The target is any callable ``f(index) -> values`` taking an ``(M, d)`` array
of zero-based grid indices. Index sets are stored per interface: ``left[k]``
holds ``r_k`` tuples of length ``k`` (positions in dimensions ``0..k-1``) and
``right[k]`` holds ``r_k`` tuples of length ``d - k`` (dimensions ``k..d-1``).

Forward sweeps evaluate the unfolding ``f(left[k], i_k; right[k+1])``,
truncate it by SVD, pick interpolation rows with :func:`maxvol` and extend the
left sets. Backward sweeps do the same on columns and refresh the right sets.
The iterate after each backward sweep is compared with the previous one in
the exact TT Frobenius norm.
"""

from __future__ import annotations

import csv
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, DomainError, TargetEvaluationError
from .tt import Grid, TTTensor, frobenius_distance, maxvol, truncation_rank

logger = logging.getLogger(__name__)

IndexFunction = Callable[[np.ndarray], np.ndarray]

#: singular values below this fraction of the largest are always dropped in grow mode
_NUMERICAL_FLOOR = 1e-14

RANK_MODES = ("grow", "fixed")


def worker_count() -> int:
    """Worker cap from the ``TTPDF_THREADS`` environment variable (default 1)."""
    raw = os.environ.get("TTPDF_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"TTPDF_THREADS must be an integer, got {raw!r}") from None


@dataclass
class CrossConfig:
    """Parameters of the cross iteration.

    Attributes
    ----------
    rank : int or sequence of int
        Initial rank of every interface (size of the random right sets), or
        one value per interface ``1..d-1``.
    rho : int
        Number of random tuples appended to each index set before every
        unfolding; this is how ranks grow in ``"grow"`` mode.
    local_fraction : float
        Share of the ``rho`` tuples drawn as random neighbours of existing
        tuples instead of uniformly on the grid. Neighbours find the support
        of sharply peaked functions that uniform draws almost never hit.
    tol : float
        Stopping tolerance on the relative change between iterates; also the
        relative SVD truncation threshold, split as ``tol / sqrt(d - 1)``.
    max_sweeps : int
        Maximal number of forward/backward sweep pairs.
    max_evals : int, optional
        Budget on target evaluations, checked between sweeps.
    rank_mode : {"grow", "fixed"}
        ``"grow"`` enriches every unfolding and truncates it by SVD, so ranks
        start low and increase until the accuracy is met. ``"fixed"``
        disables enrichment and truncation, so every interface keeps the
        size of its initial index set.
    max_rank : int, optional
        Hard cap on interface ranks.
    chunk_size : int
        Number of multi-indices passed to the target per call.
    """

    rank: Union[int, Sequence[int]] = 2
    rho: int = 4
    local_fraction: float = 0.5
    tol: float = 1e-3
    max_sweeps: int = 10
    max_evals: Optional[int] = None
    rank_mode: str = "grow"
    max_rank: Optional[int] = None
    chunk_size: int = 1 << 15
    workers: int = field(default_factory=worker_count)

    def __post_init__(self):
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.max_sweeps < 1:
            raise ConfigError("max_sweeps must be at least 1")
        if np.any(np.asarray(self.rank) < 1):
            raise ConfigError("rank must be at least 1")
        if self.rho < 0:
            raise ConfigError("rho must be nonnegative")
        if not 0 <= self.local_fraction <= 1:
            raise ConfigError("local_fraction must lie in [0, 1]")
        if self.rank_mode not in RANK_MODES:
            raise ConfigError(f"rank_mode must be one of {RANK_MODES}, got {self.rank_mode!r}")
        if self.max_rank is not None and self.max_rank < 1:
            raise ConfigError("max_rank must be at least 1")
        if self.chunk_size < 1:
            raise ConfigError("chunk_size must be positive")


@dataclass
class SweepRecord:
    sweep: int
    max_rank: int
    n_evals: int
    rel_change: float


@dataclass
class CrossResult:
    tt: TTTensor
    records: list[SweepRecord]
    n_evals: int
    converged: bool
    left: list[np.ndarray]
    right: list[np.ndarray]

    @property
    def sweeps(self) -> int:
        return len(self.records)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sweep", "max_rank", "n_evals", "rel_change"])
            for r in self.records:
                writer.writerow([r.sweep, r.max_rank, r.n_evals, repr(r.rel_change)])


class _Counter:
    """Wraps the target, counts evaluations and localizes failures."""

    def __init__(self, f: IndexFunction, chunk_size: int, workers: int):
        self.f = f
        self.chunk_size = chunk_size
        self.workers = workers
        self.count = 0

    def _call(self, idx: np.ndarray) -> np.ndarray:
        try:
            vals = np.asarray(self.f(idx), dtype=float).reshape(-1)
        except TargetEvaluationError:
            raise
        except Exception as exc:
            bad = _bisect_failure(self.f, idx)
            raise TargetEvaluationError(
                f"target evaluation failed at multi-index {tuple(int(i) for i in bad)}: {exc}", bad
            ) from exc
        if vals.size != idx.shape[0]:
            raise TargetEvaluationError(
                f"target returned {vals.size} values for {idx.shape[0]} indices"
            )
        if not np.all(np.isfinite(vals)):
            j = int(np.nonzero(~np.isfinite(vals))[0][0])
            raise TargetEvaluationError(
                f"target returned {vals[j]} at multi-index {tuple(int(i) for i in idx[j])}", idx[j]
            )
        return vals

    def __call__(self, idx: np.ndarray) -> np.ndarray:
        m = idx.shape[0]
        self.count += m
        chunks = [idx[s:s + self.chunk_size] for s in range(0, m, self.chunk_size)]
        if self.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                parts = list(pool.map(self._call, chunks))
        else:
            parts = [self._call(c) for c in chunks]
        return np.concatenate(parts) if parts else np.empty(0)


def _bisect_failure(f: IndexFunction, idx: np.ndarray) -> np.ndarray:
    """Narrow a failing batch down to one failing multi-index."""
    while idx.shape[0] > 1:
        half = idx.shape[0] // 2
        try:
            f(idx[:half])
        except Exception:
            idx = idx[:half]
            continue
        idx = idx[half:]
    return idx[0]


def assemble_indices(left: np.ndarray, n_k: int, right: np.ndarray) -> np.ndarray:
    """All multi-indices ``(alpha, i, beta)`` in row-major order, shape ``(ra * n * rb, d)``."""
    ra, kl = left.shape
    rb, kr = right.shape
    out = np.empty((ra, n_k, rb, kl + 1 + kr), dtype=np.intp)
    out[..., :kl] = left[:, None, None, :]
    out[..., kl] = np.arange(n_k)[None, :, None]
    out[..., kl + 1:] = right[None, None, :, :]
    return out.reshape(-1, kl + 1 + kr)


def evaluate_unfolding(
    f: IndexFunction, left: np.ndarray, n_k: int, right: np.ndarray, block: int = 1 << 18
) -> np.ndarray:
    """Unfolding ``f(left, i_k; right)`` as an ``(r_left * n_k) x r_right`` matrix.

    Row ``alpha * n_k + i`` and column ``beta`` hold ``f`` at the concatenation
    of ``left[alpha]``, ``i`` and ``right[beta]``. Exactly
    ``r_left * n_k * r_right`` evaluations are made.
    """
    left = np.asarray(left)
    right = np.asarray(right)
    ra, rb = left.shape[0], right.shape[0]
    out = np.empty((ra, n_k * rb))
    step = max(1, block // max(1, n_k * rb))
    for a in range(0, ra, step):
        idx = assemble_indices(left[a:a + step], n_k, right)
        out[a:a + step] = np.asarray(f(idx), dtype=float).reshape(-1, n_k * rb)
    return out.reshape(ra * n_k, rb)


def _n_tuples(sizes) -> int:
    total = 1
    for s in sizes:
        total *= int(s)
    return total


def enrich_indices(
    index: np.ndarray,
    rho: int,
    sizes,
    rng: np.random.Generator,
    warn: bool = True,
    local: int = 0,
) -> np.ndarray:
    """Append up to ``rho`` new distinct random tuples to ``index``.

    Parameters
    ----------
    index : ndarray, shape (r, m)
        Existing tuples; each row addresses dimensions with ``sizes``.
    rho : int
        Number of tuples to add.
    sizes : sequence of int
        Grid sizes of the ``m`` dimensions the tuples live in.
    rng : numpy.random.Generator
    local : int
        How many of the new tuples are neighbours of existing ones: a random
        row with one coordinate moved by a random step of at most an eighth
        of that dimension. The rest are uniform on the grid.

    Returns
    -------
    ndarray, shape (r + rho', m)
        ``rho' = rho`` unless the grid has fewer unused tuples, in which case
        all remaining tuples are appended and a warning is issued.
    """
    if rho < 0:
        raise DomainError("rho must be nonnegative")
    index = np.asarray(index, dtype=np.intp).reshape(-1, len(sizes))
    if rho == 0:
        return index
    sizes = [int(s) for s in sizes]
    total = _n_tuples(sizes)
    seen = {tuple(row) for row in index.tolist()}
    free = total - len(seen)
    if rho > free:
        if warn:
            warnings.warn(f"only {free} unused index tuples available; enrichment reduced from {rho}")
        rho = free
    if rho == 0:
        return index
    new = []
    local = min(local, rho) if index.shape[0] else 0
    for _ in range(8 * local):
        if len(new) == local:
            break
        row = index[rng.integers(index.shape[0])].copy()
        j = int(rng.integers(len(sizes)))
        reach = max(1, sizes[j] // 8)
        step = int(rng.integers(1, reach + 1)) * (1 if rng.random() < 0.5 else -1)
        row[j] = min(max(row[j] + step, 0), sizes[j] - 1)
        t = tuple(row.tolist())
        if t not in seen:
            seen.add(t)
            new.append(list(t))
    need = rho - len(new)
    if need and (free <= 4 * rho or free <= 4096):
        # small space: enumerate the complement and draw without replacement
        allidx = np.array(np.unravel_index(np.arange(total), sizes)).T
        mask = np.array([tuple(row) not in seen for row in allidx.tolist()], dtype=bool)
        pool = allidx[mask]
        pick = rng.choice(pool.shape[0], size=need, replace=False)
        new.extend(pool[np.sort(pick)].tolist())
    while len(new) < rho:
        cand = np.column_stack([rng.integers(0, s, size=rho) for s in sizes])
        for row in cand.tolist():
            t = tuple(row)
            if t not in seen:
                seen.add(t)
                new.append(row)
                if len(new) == rho:
                    break
    return np.vstack([index, np.array(new, dtype=np.intp)])


def initial_right_sets(
    shape, rank, rng: np.random.Generator, init_index: Optional[np.ndarray] = None
) -> list[np.ndarray]:
    """Random right index sets ``right[k]`` for ``k = 1..d-1`` (``right[0]`` unused, ``right[d]`` empty).

    ``init_index`` rows (full multi-indices, e.g. near the mode of a density)
    are placed first so their suffixes always participate.
    """
    d = len(shape)
    ranks = np.broadcast_to(np.atleast_1d(np.asarray(rank, dtype=int)), (d - 1,))
    right: list[np.ndarray] = [np.zeros((1, d), dtype=np.intp)] + [None] * d
    right[d] = np.zeros((1, 0), dtype=np.intp)
    for k in range(1, d):
        sizes = shape[k:]
        if init_index is not None:
            base = np.unique(np.asarray(init_index, dtype=np.intp)[:, k:], axis=0)
        else:
            base = np.zeros((0, d - k), dtype=np.intp)
        cap = min(int(ranks[k - 1]), _n_tuples(sizes))
        need = max(0, cap - base.shape[0])
        right[k] = enrich_indices(base, need, sizes, rng, warn=False)
    return right


def _truncate(s: np.ndarray, eps: float, mode: str, max_rank: Optional[int]) -> int:
    if mode == "fixed":
        # keep every direction: a rank lost to an unlucky index set could never be regained
        r = s.size
    else:
        r = truncation_rank(s, max(eps, _NUMERICAL_FLOOR * s[0]))
    if max_rank is not None:
        r = min(r, max_rank)
    return max(1, r)


def cross_approximate(
    f: IndexFunction,
    grid: Grid,
    cfg: Optional[CrossConfig] = None,
    rng: Optional[np.random.Generator] = None,
    init_index: Optional[np.ndarray] = None,
    right: Optional[list[np.ndarray]] = None,
) -> CrossResult:
    """Build a TT approximation of ``f`` on ``grid`` by alternating cross sweeps.

    Parameters
    ----------
    f : callable
        Maps an ``(M, d)`` integer array of grid indices to ``M`` finite reals.
    grid : Grid
    cfg : CrossConfig, optional
    rng : numpy.random.Generator, optional
        Source of the random initial and enrichment index sets.
    init_index : ndarray, optional
        Multi-indices whose suffixes seed the initial right sets.
    right : list of ndarray, optional
        Explicit initial right sets (``right[k]`` of shape ``(r_k, d - k)``
        for ``k = 1..d-1``); overrides ``cfg.rank``.

    Returns
    -------
    CrossResult
        The iterate after the last backward sweep, per-sweep diagnostics and
        whether the stopping rule was met.
    """
    cfg = cfg or CrossConfig()
    rng = rng if rng is not None else np.random.default_rng()
    shape = grid.shape
    d = grid.d
    counter = _Counter(f, cfg.chunk_size, cfg.workers)
    mode = cfg.rank_mode
    rho = 0 if mode == "fixed" else cfg.rho
    eps_rel = cfg.tol / np.sqrt(max(d - 1, 1))

    if d == 1:
        vals = counter(np.arange(shape[0])[:, None])
        tt = TTTensor([vals.reshape(1, -1, 1)], grid)
        rec = SweepRecord(1, 1, counter.count, 0.0)
        return CrossResult(tt, [rec], counter.count, True, [], [])

    if right is None:
        right = initial_right_sets(shape, cfg.rank, rng, init_index)
    else:
        right = [np.zeros((1, d), dtype=np.intp)] + [np.asarray(r, dtype=np.intp) for r in right[1:d]]
        right.append(np.zeros((1, 0), dtype=np.intp))
        for k in range(1, d):
            if right[k].ndim != 2 or right[k].shape[1] != d - k:
                raise DomainError(f"right set {k} must have {d - k} columns")
            if np.any(right[k] < 0) or np.any(right[k] >= np.array(shape[k:])):
                raise DomainError(f"right set {k} addresses nodes outside the grid")
    left: list[np.ndarray] = [np.zeros((1, 0), dtype=np.intp)] + [None] * d

    records: list[SweepRecord] = []
    previous: Optional[TTTensor] = None
    converged = False
    tt: Optional[TTTensor] = None
    for sweep in range(1, cfg.max_sweeps + 1):
        if sweep > 1 and cfg.max_evals is not None and counter.count >= cfg.max_evals:
            logger.info("cross: evaluation budget %d exhausted after %d sweeps", cfg.max_evals, sweep - 1)
            break

        # forward sweep: refresh left sets
        for k in range(d - 1):
            r_left = left[k].shape[0]
            rset = right[k + 1]
            useful = min(r_left * shape[k], _n_tuples(shape[k + 1:])) - rset.shape[0]
            if rho and useful > 0:
                m = min(rho, useful)
                rset = enrich_indices(rset, m, shape[k + 1:], rng, local=round(cfg.local_fraction * m))
            mat = evaluate_unfolding(counter, left[k], shape[k], rset)
            u, s, _ = np.linalg.svd(mat, full_matrices=False)
            r = _truncate(s, eps_rel * np.linalg.norm(s), mode, cfg.max_rank)
            piv = maxvol(u[:, :r])
            left[k + 1] = np.column_stack([left[k][piv // shape[k]], piv % shape[k]])

        # backward sweep: refresh right sets and build the iterate
        cores: list[np.ndarray] = [None] * d
        for k in range(d - 1, 0, -1):
            r_right = right[k + 1].shape[0]
            lset = left[k]
            useful = min(r_right * shape[k], _n_tuples(shape[:k])) - lset.shape[0]
            if rho and useful > 0:
                m = min(rho, useful)
                lset = enrich_indices(lset, m, shape[:k], rng, local=round(cfg.local_fraction * m))
            mat = evaluate_unfolding(counter, lset, shape[k], right[k + 1])
            # columns of the (r_left x n_k r_right) unfolding are rows of mat.T
            cols = mat.reshape(lset.shape[0], shape[k] * r_right).T
            u, s, _ = np.linalg.svd(cols, full_matrices=False)
            r = _truncate(s, eps_rel * np.linalg.norm(s), mode, cfg.max_rank)
            u = u[:, :r]
            piv = maxvol(u)
            basis = np.linalg.solve(u[piv].T, u.T)  # (r, n_k r_right), identity at piv
            cores[k] = basis.reshape(r, shape[k], r_right)
            right[k] = np.column_stack([piv // r_right, right[k + 1][piv % r_right]])
        cores[0] = evaluate_unfolding(counter, left[0], shape[0], right[1]).reshape(1, shape[0], -1)
        tt = TTTensor(cores, grid)

        if previous is None:
            change = np.inf
        else:
            nrm = tt.norm()
            change = frobenius_distance(tt, previous) / nrm if nrm > 0 else np.inf
        records.append(SweepRecord(sweep, tt.max_rank, counter.count, float(change)))
        logger.debug("cross sweep %d: ranks %s, evals %d, change %.3e", sweep, tt.ranks, counter.count, change)
        if change <= cfg.tol:
            converged = True
            break
        previous = tt

    return CrossResult(tt, records, counter.count, converged, left, right)


def index_function(point_fn: Callable[[np.ndarray], np.ndarray], grid: Grid) -> IndexFunction:
    """Adapt a point-wise function ``g(x)`` with ``x`` of shape ``(M, d)`` to grid indices."""

    def f(index: np.ndarray) -> np.ndarray:
        return point_fn(grid.points(index))

    return f
