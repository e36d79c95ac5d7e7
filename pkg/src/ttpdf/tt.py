"""Interpolated tensor-train representation of functions on tensor grids.

A :class:`TTTensor` stores ``d`` three-way blocks ``G_k`` of shape
``(r_k, n_k, r_{k+1})`` together with the univariate :class:`Grid` the blocks
were collocated on. Nodal values are chain products of block slices; values
between nodes come from multilinear (piecewise-linear per axis) interpolation,
and integrals use the trapezoidal weights that integrate that interpolant
exactly.

Indices are zero-based throughout.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DomainError, RankDeficientError

MAGIC = b"TTPDF1\n"


class Grid:
    """Tensor product of strictly increasing univariate node arrays."""

    def __init__(self, nodes: Sequence[Sequence[float]]):
        arrays = []
        for k, xs in enumerate(nodes):
            xs = np.array(xs, dtype=float).ravel()
            if xs.size < 2:
                raise DomainError(f"grid dimension {k} needs at least 2 nodes, got {xs.size}")
            if not np.all(np.isfinite(xs)):
                raise DomainError(f"grid dimension {k} has non-finite nodes")
            if np.any(np.diff(xs) <= 0):
                raise DomainError(f"grid dimension {k} nodes are not strictly increasing")
            xs.setflags(write=False)
            arrays.append(xs)
        if not arrays:
            raise DomainError("grid needs at least one dimension")
        self.nodes: tuple[np.ndarray, ...] = tuple(arrays)

    @classmethod
    def uniform(cls, lower, upper, n) -> "Grid":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        n = np.broadcast_to(np.atleast_1d(n), lower.shape)
        return cls([np.linspace(a, b, int(m)) for a, b, m in zip(lower, upper, n)])

    @property
    def d(self) -> int:
        return len(self.nodes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(xs.size for xs in self.nodes)

    @property
    def lower(self) -> np.ndarray:
        return np.array([xs[0] for xs in self.nodes])

    @property
    def upper(self) -> np.ndarray:
        return np.array([xs[-1] for xs in self.nodes])

    def weights(self, k: int) -> np.ndarray:
        """Trapezoidal quadrature weights for dimension ``k``."""
        h = np.diff(self.nodes[k])
        w = np.zeros(self.nodes[k].size)
        w[:-1] += h / 2
        w[1:] += h / 2
        return w

    def points(self, index: np.ndarray) -> np.ndarray:
        """Map an ``(M, d)`` integer index array to grid coordinates."""
        index = np.asarray(index)
        out = np.empty(index.shape, dtype=float)
        for k, xs in enumerate(self.nodes):
            out[..., k] = xs[index[..., k]]
        return out

    def locate(self, k: int, x) -> tuple[np.ndarray, np.ndarray]:
        """Cell index ``i`` and local coordinate ``t`` with ``x = x_i + t (x_{i+1} - x_i)``."""
        xs = self.nodes[k]
        x = np.asarray(x, dtype=float)
        if np.any(x < xs[0]) or np.any(x > xs[-1]) or np.any(np.isnan(x)):
            raise DomainError(f"coordinate {k} outside [{xs[0]}, {xs[-1]}]")
        i = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2)
        t = (x - xs[i]) / (xs[i + 1] - xs[i])
        return i, t

    def __eq__(self, other) -> bool:
        if not isinstance(other, Grid) or other.d != self.d:
            return False
        return all(a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.nodes, other.nodes))

    def __hash__(self):
        return hash(tuple(xs.tobytes() for xs in self.nodes))

    def __repr__(self) -> str:
        return f"Grid(shape={self.shape})"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, order="C")
    a.setflags(write=False)
    return a


class TTTensor:
    """Tensor train with blocks ``cores[k]`` of shape ``(r_k, n_k, r_{k+1})``.

    Instances are immutable; every operation returns a new tensor.
    """

    def __init__(self, cores: Sequence[np.ndarray], grid: Grid):
        if len(cores) != grid.d:
            raise DomainError(f"{len(cores)} cores for a {grid.d}-dimensional grid")
        cores = [_frozen(c) for c in cores]
        for k, c in enumerate(cores):
            if c.ndim != 3:
                raise DomainError(f"core {k} must be 3-way, got shape {c.shape}")
            if c.shape[1] != grid.shape[k]:
                raise DomainError(f"core {k} has {c.shape[1]} nodes, grid has {grid.shape[k]}")
            if k > 0 and cores[k - 1].shape[2] != c.shape[0]:
                raise DomainError(f"rank mismatch between cores {k - 1} and {k}")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise DomainError("boundary ranks must be 1")
        self.cores: tuple[np.ndarray, ...] = tuple(cores)
        self.grid = grid

    # -- basic properties -------------------------------------------------

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(c.shape[0] for c in self.cores) + (1,)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.grid.shape

    @property
    def max_rank(self) -> int:
        return max(self.ranks)

    @property
    def storage(self) -> int:
        return sum(c.size for c in self.cores)

    def __repr__(self) -> str:
        return f"TTTensor(shape={self.shape}, ranks={self.ranks})"

    # -- evaluation -------------------------------------------------------

    def eval_index(self, index):
        """Nodal value(s) at zero-based multi-index ``index`` (shape ``(d,)`` or ``(M, d)``)."""
        idx = np.asarray(index)
        single = idx.ndim == 1
        idx = np.atleast_2d(idx)
        if idx.shape[1] != self.d:
            raise DomainError(f"expected {self.d} indices, got {idx.shape[1]}")
        if not np.issubdtype(idx.dtype, np.integer):
            raise DomainError("indices must be integers")
        n = np.array(self.shape)
        if np.any(idx < 0) or np.any(idx >= n):
            raise DomainError("multi-index out of range")
        v = self.cores[0][0, idx[:, 0], :]
        for k in range(1, self.d):
            v = np.einsum("mr,rms->ms", v, self.cores[k][:, idx[:, k], :])
        out = v[:, 0]
        return float(out[0]) if single else out

    def eval_point(self, x):
        """Multilinear interpolant at point(s) ``x`` (shape ``(d,)`` or ``(M, d)``)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.d:
            raise DomainError(f"expected {self.d} coordinates, got {x.shape[1]}")
        v = np.ones((x.shape[0], 1))
        for k, core in enumerate(self.cores):
            i, t = self.grid.locate(k, x[:, k])
            left = np.einsum("mr,rms->ms", v, core[:, i, :])
            right = np.einsum("mr,rms->ms", v, core[:, i + 1, :])
            v = (1 - t)[:, None] * left + t[:, None] * right
        out = v[:, 0]
        return float(out[0]) if single else out

    def full(self) -> np.ndarray:
        """Materialize all nodal values; only sensible for small grids."""
        v = self.cores[0].reshape(self.shape[0], -1)
        for core in self.cores[1:]:
            r = core.shape[0]
            v = v.reshape(-1, r) @ core.reshape(r, -1)
        return v.reshape(self.shape)

    # -- integration ------------------------------------------------------

    def integrated_cores(self) -> list[np.ndarray]:
        """Per-block ``r_k x r_{k+1}`` matrices of trapezoidal integrals."""
        return [np.einsum("anb,n->ab", c, self.grid.weights(k)) for k, c in enumerate(self.cores)]

    def partial_integrals(self) -> list[np.ndarray]:
        """Right-to-left partial integrals.

        Returns a list ``P`` of length ``d + 1`` where ``P[d] = [1]`` and
        ``P[k] = (int G_k) P[k+1]`` has length ``r_k``. ``P[0]`` is the total
        integral as a length-1 vector.
        """
        mats = self.integrated_cores()
        P = [None] * (self.d + 1)
        P[self.d] = np.ones(1)
        for k in range(self.d - 1, -1, -1):
            P[k] = mats[k] @ P[k + 1]
        return P

    def integrate(self) -> float:
        return float(self.partial_integrals()[0][0])

    # -- arithmetic -------------------------------------------------------

    def __mul__(self, alpha: float) -> "TTTensor":
        cores = list(self.cores)
        cores[0] = cores[0] * float(alpha)
        return TTTensor(cores, self.grid)

    __rmul__ = __mul__

    def __neg__(self) -> "TTTensor":
        return self * -1.0

    def __add__(self, other: "TTTensor") -> "TTTensor":
        _check_same_grid(self, other)
        if self.d == 1:
            return TTTensor([self.cores[0] + other.cores[0]], self.grid)
        cores = []
        for k, (a, b) in enumerate(zip(self.cores, other.cores)):
            ra0, n, ra1 = a.shape
            rb0, _, rb1 = b.shape
            if k == 0:
                c = np.concatenate([a, b], axis=2)
            elif k == self.d - 1:
                c = np.concatenate([a, b], axis=0)
            else:
                c = np.zeros((ra0 + rb0, n, ra1 + rb1))
                c[:ra0, :, :ra1] = a
                c[ra0:, :, ra1:] = b
            cores.append(c)
        return TTTensor(cores, self.grid)

    def __sub__(self, other: "TTTensor") -> "TTTensor":
        return self + (-other)

    # -- norms ------------------------------------------------------------

    def inner(self, other: "TTTensor") -> float:
        """Frobenius inner product of nodal values."""
        _check_same_grid(self, other)
        z = np.ones((1, 1))
        for a, b in zip(self.cores, other.cores):
            # z <- sum_i A(i)^T z B(i)
            t = np.tensordot(z, b, axes=(1, 0))
            z = np.tensordot(a, t, axes=([0, 1], [0, 1]))
        return float(z[0, 0])

    def norm(self) -> float:
        """Frobenius norm via left-orthogonalization (no cancellation)."""
        r = np.ones((1, 1))
        for core in self.cores:
            c = np.tensordot(r, core, axes=(1, 0))
            r = np.linalg.qr(c.reshape(-1, c.shape[2]), mode="r")
        return float(np.linalg.norm(r))

    def orthogonalize_right(self) -> list[np.ndarray]:
        """Cores with blocks 1..d-1 right-orthonormal; block 0 carries the norm."""
        cores = [np.array(c) for c in self.cores]
        for k in range(self.d - 1, 0, -1):
            r0, n, r1 = cores[k].shape
            q, rr = np.linalg.qr(cores[k].reshape(r0, n * r1).T)
            cores[k] = q.T.reshape(-1, n, r1)
            cores[k - 1] = np.tensordot(cores[k - 1], rr.T, axes=(2, 0))
        return cores

    def round(self, delta: float) -> "TTTensor":
        """SVD-based recompression with ``||out - self||_F <= delta ||self||_F``."""
        if delta < 0:
            raise DomainError("delta must be nonnegative")
        if self.d == 1:
            return self
        cores = self.orthogonalize_right()
        nrm = np.linalg.norm(cores[0])
        eps = delta * nrm / np.sqrt(self.d - 1)
        for k in range(self.d - 1):
            r0, n, r1 = cores[k].shape
            u, s, vt = np.linalg.svd(cores[k].reshape(r0 * n, r1), full_matrices=False)
            r = truncation_rank(s, eps)
            cores[k] = u[:, :r].reshape(r0, n, r)
            cores[k + 1] = np.tensordot(s[:r, None] * vt[:r], cores[k + 1], axes=(1, 0))
        return TTTensor(cores, self.grid)

    # -- serialization ----------------------------------------------------

    def save(self, path) -> None:
        """Write the ``TTPDF1`` format: magic, header length, JSON header, float64 payload."""
        header = {
            "format": "TTPDF1",
            "version": 1,
            "d": self.d,
            "ranks": list(self.ranks),
            "n": list(self.shape),
            "nodes": [xs.tolist() for xs in self.grid.nodes],
            "dtype": "<f8",
            "order": "C",
        }
        blob = json.dumps(header).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            for c in self.cores:
                fh.write(np.ascontiguousarray(c, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "TTTensor":
        data = Path(path).read_bytes()
        if not data.startswith(MAGIC):
            raise ValueError(f"{path}: not a TTPDF1 file")
        pos = len(MAGIC)
        (hlen,) = struct.unpack("<Q", data[pos:pos + 8])
        pos += 8
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        grid = Grid(header["nodes"])
        ranks = header["ranks"]
        cores = []
        for k, n in enumerate(header["n"]):
            shape = (ranks[k], n, ranks[k + 1])
            size = int(np.prod(shape))
            cores.append(np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape))
            pos += 8 * size
        if pos != len(data):
            raise ValueError(f"{path}: trailing bytes after payload")
        return cls(cores, grid)


def _check_same_grid(a: TTTensor, b: TTTensor) -> None:
    if a.grid != b.grid:
        raise DomainError("TT tensors live on different grids")


def truncation_rank(s: np.ndarray, eps: float) -> int:
    """Smallest rank ``r >= 1`` whose discarded singular values have 2-norm ``<= eps``.

    With ``eps == 0`` only exactly-zero singular values are dropped.
    """
    if s.size == 0:
        return 0
    tail = np.sqrt(np.cumsum((s ** 2)[::-1]))[::-1]  # tail[r] = ||s[r:]||
    keep = np.nonzero(tail > eps)[0]
    return max(1, int(keep[-1]) + 1 if keep.size else 1)


def frobenius_distance(a: TTTensor, b: TTTensor) -> float:
    """``||a - b||_F`` over nodal values without materializing either tensor.

    Uses the Gram expansion first; when the result is below the level where
    cancellation matters it is recomputed from the orthogonalized difference.
    """
    _check_same_grid(a, b)
    aa, bb, ab = a.inner(a), b.inner(b), a.inner(b)
    sq = aa + bb - 2 * ab
    scale = max(aa, bb)
    if scale == 0:
        return 0.0
    if sq > 1e-12 * scale:
        return float(np.sqrt(sq))
    return (a - b).norm()


def maxvol(m: np.ndarray, tol: float = 5e-2, max_swaps: int = 100) -> np.ndarray:
    """Rows of a tall ``M x r`` matrix spanning a quasi-maximal-volume submatrix.

    Starts from the pivots of a column-pivoted QR of ``m.T`` and swaps rows
    until every entry of ``m @ inv(m[I])`` is bounded by ``1 + tol`` in
    magnitude, or ``max_swaps`` swaps were made.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise DomainError("maxvol needs a matrix")
    M, r = m.shape
    if M < r:
        raise DomainError(f"maxvol needs at least as many rows as columns, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("maxvol input has non-finite entries")
    _, R, piv = scipy.linalg.qr(m.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if r == 0 or diag[-1] <= max(M, r) * np.finfo(float).eps * diag[0]:
        smin = diag[-1] if r else 0.0
        smax = diag[0] if r else 0.0
        raise RankDeficientError(
            f"maxvol: {M}x{r} matrix is numerically rank deficient "
            f"(pivoted-QR diagonal ratio {smin:.3e}/{smax:.3e})"
        )
    idx = np.array(piv[:r], dtype=np.intp)
    if M == r:
        return idx
    B = scipy.linalg.solve(m[idx].T, m.T).T
    for _ in range(max_swaps):
        i, j = np.unravel_index(np.argmax(np.abs(B)), B.shape)
        if abs(B[i, j]) <= 1 + tol:
            break
        idx[j] = i
        bij = B[i, j]
        col = B[:, j].copy()
        row = B[i, :].copy()
        row[j] -= 1.0
        B -= np.outer(col, row) / bij
    return idx
