"""Bayesian inverse problem for a 2-D diffusion equation with log-cosine coefficient.

Forward model: ``-div(kappa grad u) = 0`` on the unit square with ``u = 1`` at
``x1 = 0``, ``u = 0`` at ``x1 = 1`` and zero flux elsewhere, discretized by
bilinear (Q1) finite elements on a uniform mesh with cellwise constant
``kappa`` (midpoint values). Observations are noisy averages of ``u_h`` over
overlapping squares; the parameters are uniform on ``[-sqrt 3, sqrt 3]^d``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import isqrt
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from ..errors import SolverError
from .base import TargetDensity

NOISE_SEED = 20190502
FLUX_THRESHOLD = 1.5

# Q1 stiffness matrix of the unit-coefficient Laplacian on a square cell,
# local node order (0,0), (1,0), (1,1), (0,1)
ELEMENT_STIFFNESS = np.array(
    [[4.0, -1.0, -2.0, -1.0],
     [-1.0, 4.0, -1.0, -2.0],
     [-2.0, -1.0, 4.0, -1.0],
     [-1.0, -2.0, -1.0, 4.0]]
) / 6.0


def frequencies(k):
    """Diagonal enumeration ``(rho_1(k), rho_2(k))`` for one-based ``k``."""
    k = int(k)
    tau = (isqrt(8 * k + 1) - 1) // 2
    rho1 = k - tau * (tau + 1) // 2
    return rho1, tau - rho1


def kle_weights(d: int, nu: float) -> np.ndarray:
    """``eta_k = k^-(nu+1) / K`` with ``K`` normalizing the sum to one."""
    eta = np.arange(1, d + 1, dtype=float) ** (-(nu + 1.0))
    return eta / eta.sum()


def kle_field(theta, x, nu: float = 2.0) -> np.ndarray:
    """``kappa(theta, x) = exp(sum_k theta_k sqrt(eta_k) cos(2 pi rho_1 x_1) cos(2 pi rho_2 x_2))``.

    ``theta`` has shape ``(d,)`` and ``x`` shape ``(M, 2)``.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    amp = theta * np.sqrt(kle_weights(theta.size, nu))
    log_k = np.zeros(x.shape[0])
    for k in range(theta.size):
        r1, r2 = frequencies(k + 1)
        log_k += amp[k] * np.cos(2 * np.pi * r1 * x[:, 0]) * np.cos(2 * np.pi * r2 * x[:, 1])
    return np.exp(log_k)


@dataclass
class FEMSolution:
    """Nodal values ``u[i, j] = u_h(i h, j h)`` and the cellwise coefficient ``kappa[i, j]``."""

    u: np.ndarray
    kappa: np.ndarray
    h: float
    residual: float = 0.0


class Q1Solver:
    """Bilinear finite elements on the uniform ``P x P`` mesh of the unit square, ``h = 1 / P``.

    Unknowns are the nodes with ``0 < i < P`` (``x1`` index, fastest) and all
    ``0 <= j <= P``. The system is symmetric positive definite with
    half-bandwidth ``P``; it is solved with a banded Cholesky factorization
    for ``P <= 128`` and by conjugate gradients (relative tolerance 1e-10)
    beyond.
    """

    def __init__(self, n_cells: int, direct_limit: int = 128):
        if n_cells < 2:
            raise ValueError("need at least 2 cells per direction")
        self.P = int(n_cells)
        self.h = 1.0 / self.P
        self.m = self.P - 1
        self.n_unknowns = self.m * (self.P + 1)
        self.direct = self.P <= direct_limit

    def _couplings(self, kappa: np.ndarray):
        """Node-based coupling arrays over the full ``(P+1) x (P+1)`` node grid."""
        P = self.P
        K = np.zeros((P + 2, P + 2))  # padded: K[ci + 1, cj + 1] = kappa of cell (ci, cj)
        K[1:-1, 1:-1] = kappa
        # node (i, j) touches cells (i-1..i, j-1..j)
        Kc = lambda di, dj: K[1 + di:P + 2 + di, 1 + dj:P + 2 + dj]  # cell (i+di, j+dj) at node (i, j)
        diag = (4.0 / 6.0) * (Kc(0, 0) + Kc(-1, 0) + Kc(0, -1) + Kc(-1, -1))
        east = -(1.0 / 6.0) * (Kc(0, -1) + Kc(0, 0))
        north = -(1.0 / 6.0) * (Kc(-1, 0) + Kc(0, 0))
        ne = -(2.0 / 6.0) * Kc(0, 0)
        nw = -(2.0 / 6.0) * Kc(-1, 0)
        return diag, east, north, ne, nw

    def assemble_banded(self, kappa: np.ndarray):
        """Upper banded storage ``ab`` for :func:`scipy.linalg.solveh_banded` and the right-hand side."""
        P, m = self.P, self.m
        diag, east, north, ne, nw = self._couplings(kappa)
        n = self.n_unknowns
        u = m + 1  # NE offset
        ab = np.zeros((u + 1, n))
        inner = slice(1, P)  # i = 1..P-1

        def put(offset, vals):
            # vals indexed [i, j] over unknown nodes; coupling to unknown (index + offset)
            flat = vals[inner, :].T.reshape(-1)
            ab[u - offset, offset:] = flat[: n - offset]

        put(0, diag)
        e = east.copy()
        e[P - 1, :] = 0.0  # east neighbour of i = P-1 is on the Dirichlet boundary
        put(1, e)
        put(m, north)
        n_e = ne.copy()
        n_e[P - 1, :] = 0.0
        put(m + 1, n_e)
        n_w = nw.copy()
        n_w[1, :] = 0.0  # north-west neighbour of i = 1 is on the Dirichlet boundary
        put(m - 1, n_w)
        # right-hand side from u = 1 at i = 0: couplings of (1, j) with (0, j-1), (0, j), (0, j+1)
        rhs = np.zeros((P + 1,))
        rhs -= east[0, :]  # (0, j) -- (1, j)
        rhs[1:] -= ne[0, :-1]  # (0, j-1) -- (1, j)
        rhs[:-1] -= nw[1, :-1]  # (0, j+1) -- (1, j)
        b = np.zeros((P + 1, m))
        b[:, 0] = rhs
        return ab, b.reshape(-1)

    def assemble_sparse(self, kappa: np.ndarray):
        """Reference assembly by element loops: full stiffness over all nodes, then Dirichlet elimination."""
        P = self.P
        nn = (P + 1) ** 2
        node = lambda i, j: j * (P + 1) + i
        rows, cols, vals = [], [], []
        for ci in range(P):
            for cj in range(P):
                loc = [node(ci, cj), node(ci + 1, cj), node(ci + 1, cj + 1), node(ci, cj + 1)]
                for a in range(4):
                    for b in range(4):
                        rows.append(loc[a])
                        cols.append(loc[b])
                        vals.append(kappa[ci, cj] * ELEMENT_STIFFNESS[a, b])
        A = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(nn, nn)).tocsr()
        ii, jj = np.meshgrid(np.arange(P + 1), np.arange(P + 1), indexing="ij")
        ids = node(ii, jj)
        free = ids[1:P, :].T.reshape(-1)
        left = ids[0, :]
        A_ff = A[free][:, free]
        b = -A[free][:, left] @ np.ones(P + 1)
        return A_ff, np.asarray(b).ravel()

    def _expand(self, sol: np.ndarray) -> np.ndarray:
        P = self.P
        u = np.zeros((P + 1, P + 1))
        u[0, :] = 1.0
        u[1:P, :] = sol.reshape(P + 1, self.m).T
        return u

    def solve(self, kappa: np.ndarray) -> FEMSolution:
        """Solve for the cellwise coefficient ``kappa`` of shape ``(P, P)``."""
        kappa = np.asarray(kappa, dtype=float)
        if kappa.shape != (self.P, self.P):
            raise ValueError(f"kappa must have shape {(self.P, self.P)}")
        if np.any(kappa <= 0) or not np.all(np.isfinite(kappa)):
            raise SolverError("diffusion coefficient must be positive and finite")
        ab, b = self.assemble_banded(kappa)
        if self.direct:
            try:
                sol = scipy.linalg.solveh_banded(ab, b, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise SolverError(f"banded Cholesky failed: {exc}") from exc
            return FEMSolution(self._expand(sol), kappa, self.h)
        A, b = self.assemble_sparse(kappa)
        sol, info = scipy.sparse.linalg.cg(A, b, rtol=1e-10, maxiter=20 * self.n_unknowns)
        res = float(np.linalg.norm(A @ sol - b) / np.linalg.norm(b))
        if info != 0 or res > 1e-9:
            raise SolverError(f"CG did not converge: relative residual {res:.3e}")
        return FEMSolution(self._expand(sol), kappa, self.h, res)


def interval_weights(nodes: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """``w_i = int_lo^hi phi_i(x) dx`` for the piecewise-linear hat functions on ``nodes``."""
    x0, x1 = nodes[:-1], nodes[1:]
    h = x1 - x0
    a = np.clip(lo, x0, x1)
    b = np.clip(hi, x0, x1)
    t0 = (a - x0) / h
    t1 = (b - x0) / h
    right = h * (t1 ** 2 - t0 ** 2) / 2.0  # integral of t over the overlap
    left = h * (t1 - t0) - right  # integral of 1 - t
    w = np.zeros(nodes.size)
    w[:-1] += left
    w[1:] += right
    return w


def observation_squares(m0: int):
    """Centres and side length of the ``m0`` observation squares (``m0`` a perfect square)."""
    s = isqrt(m0)
    if s * s != m0:
        raise ValueError(f"number of observations must be a perfect square, got {m0}")
    g = 1.0 / (s + 1)
    c = g * np.arange(1, s + 1)
    centres = np.array([(a, b) for a in c for b in c])
    return centres, 2.0 * g


def flux(sol: FEMSolution) -> float:
    """Average outflow through ``x1 = 1``, ``-int kappa grad w . grad u_h`` with ``w = x1``.

    For the Galerkin solution this is independent of the choice of ``w``
    among finite-element functions equal to 0 at ``x1 = 0`` and 1 at ``x1 = 1``.
    """
    u, k, h = sol.u, sol.kappa, sol.h
    du = (u[1:, :-1] + u[1:, 1:] - u[:-1, :-1] - u[:-1, 1:])  # 2 h * mean d u / d x1 per cell
    return float(-np.sum(k * du) * h / 2.0)


def boundary_flux(sol: FEMSolution) -> float:
    """``-int kappa du/dn`` along ``x1 = 1`` from the last column of cells."""
    u, k, h = sol.u, sol.kappa, sol.h
    P = k.shape[0]
    grad = (u[P, :-1] - u[P - 1, :-1] + u[P, 1:] - u[P - 1, 1:]) / (2.0 * h)
    return float(-np.sum(k[P - 1, :] * grad) * h)


def _cosine_tables(d: int, nu: float, P: int):
    """Separable factors of the log coefficient at the ``P`` cell midpoints, each ``(d, P)``."""
    mid = (np.arange(P) + 0.5) / P
    amp = np.sqrt(kle_weights(d, nu))
    freq = np.array([frequencies(k + 1) for k in range(d)])
    return (amp[:, None] * np.cos(2 * np.pi * freq[:, :1] * mid[None, :]),
            np.cos(2 * np.pi * freq[:, 1:] * mid[None, :]))


class Diffusion(TargetDensity):
    """Posterior of the coefficient parameters given noisy local averages.

    Parameters
    ----------
    d : int
        Number of expansion terms.
    h : float
        Mesh size, ``1 / h`` an integer.
    nu : float
        Decay of the expansion weights.
    sigma2 : float
        Noise variance.
    theta0 : float
        Every component of the parameter used to synthesize the data.
    m0 : int
        Number of observations (a perfect square).
    noise : bool
        If False the data are noise free.
    seed : int
        Seed of the synthetic noise.
    coarsening : int
        Ratio of the coarse to the fine mesh size for the cheap flux
        approximation used by two-level estimators.
    """

    name = "diffusion"

    def __init__(self, d: int = 11, h: float = 2.0 ** -6, nu: float = 2.0, sigma2: float = 0.01,
                 theta0: float = 1.5, m0: int = 9, noise: bool = True, seed: int = NOISE_SEED,
                 coarsening: int = 2):
        P = int(round(1.0 / h))
        if abs(P * h - 1.0) > 1e-12:
            raise ValueError("1/h must be an integer")
        half = np.sqrt(3.0)
        super().__init__(-half * np.ones(d), half * np.ones(d))
        self.nu, self.sigma2, self.theta0, self.m0 = float(nu), float(sigma2), float(theta0), int(m0)
        self.solver = Q1Solver(P)
        self.h = 1.0 / P
        self._c1, self._c2 = _cosine_tables(d, self.nu, P)
        nodes = np.linspace(0.0, 1.0, P + 1)
        centres, side = observation_squares(m0)
        self.obs_weights = []
        for cx, cy in centres:
            w1 = interval_weights(nodes, cx - side / 2, cx + side / 2)
            w2 = interval_weights(nodes, cy - side / 2, cy + side / 2)
            self.obs_weights.append((w1, w2, side * side))
        self.theta_true = np.full(d, self.theta0)
        self.y = self.observe(self.solve(self.theta_true))
        if noise:
            self.y = self.y + np.sqrt(self.sigma2) * np.random.default_rng(seed).standard_normal(m0)
        self._log_scale = 0.0
        if coarsening < 1 or P % coarsening:
            raise ValueError("coarsening must be a positive divisor of 1/h")
        self.coarsening = int(coarsening)
        self._coarse: Optional[Q1Solver] = None
        self._coarse_kappa = None

    def cell_kappa(self, theta) -> np.ndarray:
        """Coefficient at cell midpoints, shape ``(P, P)`` indexed ``[i(x1), j(x2)]``."""
        theta = np.asarray(theta, dtype=float).ravel()
        return np.exp(np.einsum("k,ki,kj->ij", theta, self._c1, self._c2))

    def solve(self, theta) -> FEMSolution:
        return self.solver.solve(self.cell_kappa(theta))

    def observe(self, sol: FEMSolution) -> np.ndarray:
        return np.array([w1 @ sol.u @ w2 / area for w1, w2, area in self.obs_weights])

    def surrogate_integrands(self, x) -> dict:
        """Flux and exceedance indicator computed on the mesh coarsened by ``coarsening``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self._coarse is None:
            P = self.solver.P // self.coarsening
            self._coarse = Q1Solver(P)
            self._coarse_kappa = _cosine_tables(self.dim, self.nu, P)
        c1, c2 = self._coarse_kappa
        F = np.array([flux(self._coarse.solve(np.exp(np.einsum("k,ki,kj->ij", th, c1, c2))))
                      for th in x])
        return {"flux": F, "exceed": (F > FLUX_THRESHOLD).astype(float)}

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        logl = np.empty(x.shape[0])
        F = np.empty(x.shape[0])
        for i, theta in enumerate(x):
            sol = self.solve(theta)
            r = self.observe(sol) - self.y
            logl[i] = -np.dot(r, r) / (2.0 * self.sigma2)
            F[i] = flux(sol)
        return logl, {"flux": F, "exceed": (F > FLUX_THRESHOLD).astype(float)}
