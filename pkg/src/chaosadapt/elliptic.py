"""Two-point flux approximation for ``-div(kappa grad u) = g`` on a
rectangular grid with no-flux boundaries and zero-mean normalization.

Face transmissibilities use the harmonic mean of the adjacent cell values.
The discrete operator is symmetric positive semi-definite with the constants
as null space; right-hand sides are projected onto its range and solutions
are shifted to zero (area-weighted) mean. Linear systems are solved by a
Jacobi-preconditioned conjugate gradient that runs over a batch of
independent transmissivity fields at once.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .random_field import KLBasis, SpatialGrid, sample_transmissivity

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SourceSpec:
    """Gaussian source at ``source`` and sink at ``sink`` with widths ``widths``."""

    amplitude: float = 0.5
    source: tuple = (0.0, 0.0)
    sink: tuple = (400.0, 400.0)
    widths: tuple = (20.0, 20.0)

    def __post_init__(self):
        if any(w <= 0 for w in self.widths):
            raise ValueError("source widths must be positive")


def assemble_source(spec: SourceSpec, grid: SpatialGrid, compatible: bool = True) -> np.ndarray:
    """Source minus sink bump at the cell centers.

    With ``compatible=True`` the area-weighted mean is subtracted so that the
    discrete Neumann problem is solvable.
    """
    P = grid.points
    l = np.asarray(spec.widths, dtype=float)

    def bump(center):
        return np.exp(-0.5 * np.sum(((P - np.asarray(center, dtype=float)) / l) ** 2, axis=1))

    g = spec.amplitude * (bump(spec.source) - bump(spec.sink))
    if compatible:
        w = grid.areas
        g = g - np.sum(g * w) / np.sum(w)
    return g


@dataclass(frozen=True)
class EllipticProblem:
    grid: SpatialGrid
    kappa: np.ndarray
    source: np.ndarray
    tol: float = DEFAULT_TOL
    maxiter: int | None = None

    def __post_init__(self):
        k = np.asarray(self.kappa, dtype=float).reshape(-1)
        if k.size != self.grid.n_points:
            raise ValueError(f"kappa has {k.size} values for {self.grid.n_points} cells")
        if not np.all(k > 0):
            raise ValueError("transmissivity must be positive everywhere")
        object.__setattr__(self, "kappa", k)
        object.__setattr__(self, "source", np.asarray(self.source, dtype=float).reshape(-1))


def transmissibilities(grid: SpatialGrid, kappa: np.ndarray):
    """Face transmissibilities for a batch ``kappa`` of shape ``(B, nx, ny)``.

    Returns ``(tx, ty)`` with shapes ``(B, nx-1, ny)`` and ``(B, nx, ny-1)``.
    """
    hx, hy = grid.spacing
    a, b = kappa[:, :-1, :], kappa[:, 1:, :]
    tx = (hy / hx) * 2.0 * a * b / (a + b)
    a, b = kappa[:, :, :-1], kappa[:, :, 1:]
    ty = (hx / hy) * 2.0 * a * b / (a + b)
    return tx, ty


def _apply(u, tx, ty):
    out = np.zeros_like(u)
    f = tx * (u[:, :-1, :] - u[:, 1:, :])
    out[:, :-1, :] += f
    out[:, 1:, :] -= f
    f = ty * (u[:, :, :-1] - u[:, :, 1:])
    out[:, :, :-1] += f
    out[:, :, 1:] -= f
    return out


def _diagonal(tx, ty, shape):
    dg = np.zeros(shape)
    dg[:, :-1, :] += tx
    dg[:, 1:, :] += tx
    dg[:, :, :-1] += ty
    dg[:, :, 1:] += ty
    return dg


def _batch_norm(v):
    return np.sqrt(np.einsum("bij,bij->b", v, v))


def solve_batch(
    grid: SpatialGrid,
    kappa,
    source,
    tol: float = DEFAULT_TOL,
    maxiter: int | None = None,
) -> np.ndarray:
    """Pressure fields for a batch of transmissivities.

    Args:
        kappa: array ``(B, n_points)`` of positive cell values.
        source: array ``(n_points,)`` or ``(B, n_points)``.

    Returns:
        Array ``(B, n_points)`` of zero-mean solutions.

    Raises:
        SolverError: if some system does not reach ``tol`` relative residual.
    """
    nx, ny = grid.shape
    kappa = np.atleast_2d(np.asarray(kappa, dtype=float))
    if not np.all(kappa > 0):
        raise ValueError("transmissivity must be positive everywhere")
    B = kappa.shape[0]
    k3 = kappa.reshape(B, nx, ny)
    tx, ty = transmissibilities(grid, k3)
    dg = _diagonal(tx, ty, k3.shape)
    if np.any(dg == 0):
        dg = np.where(dg == 0, 1.0, dg)  # single-cell grid
    w = grid.areas
    rhs = np.broadcast_to(np.asarray(source, dtype=float) * w, (B, grid.n_points))
    rhs = rhs - rhs.mean(axis=1, keepdims=True)
    b = rhs.reshape(B, nx, ny)
    bnorm = _batch_norm(b)
    maxiter = maxiter or 20 * grid.n_points

    x = np.zeros_like(b)
    r = b.copy()
    z = r / dg
    p = z.copy()
    rz = np.einsum("bij,bij->b", r, z)
    active = _batch_norm(r) > tol * bnorm
    it = 0
    while active.any() and it < maxiter:
        Ap = _apply(p, tx, ty)
        pAp = np.einsum("bij,bij->b", p, Ap)
        alpha = np.where(active, rz / np.where(active, pAp, 1.0), 0.0)
        x += alpha[:, None, None] * p
        r -= alpha[:, None, None] * Ap
        z = r / dg
        rz_new = np.einsum("bij,bij->b", r, z)
        beta = np.where(active, rz_new / np.where(active, rz, 1.0), 0.0)
        p = z + beta[:, None, None] * p
        rz = np.where(active, rz_new, rz)
        active = active & (_batch_norm(r) > tol * bnorm)
        it += 1
    true_res = _batch_norm(b - _apply(x, tx, ty))
    bad = true_res > 10 * tol * np.maximum(bnorm, np.finfo(float).tiny)
    bad &= bnorm > 0
    if bad.any():
        raise SolverError(
            f"CG did not converge for {int(bad.sum())} of {B} systems after {it} iterations"
        )
    u = x.reshape(B, -1)
    u = u - (u @ w)[:, None] / w.sum()
    return u


def solve_pressure(problem: EllipticProblem) -> np.ndarray:
    """Zero-mean TPFA solution for a single problem."""
    return solve_batch(
        problem.grid, problem.kappa[None, :], problem.source, problem.tol, problem.maxiter
    )[0]


@dataclass(frozen=True)
class Velocity:
    """Darcy fluxes on faces and cell-averaged velocity ``-kappa grad u``.

    ``flux_x[i, j]`` is the flux through the face left of cell ``(i, j)``
    (shape ``(nx+1, ny)``), ``flux_y`` likewise below (shape ``(nx, ny+1)``);
    boundary faces carry zero flux.
    """

    flux_x: np.ndarray
    flux_y: np.ndarray
    cell: np.ndarray  # (n_points, 2)

    def net_outflow(self) -> np.ndarray:
        out = self.flux_x[1:, :] - self.flux_x[:-1, :] + self.flux_y[:, 1:] - self.flux_y[:, :-1]
        return out.reshape(-1)


def velocity(problem: EllipticProblem, u) -> Velocity:
    grid = problem.grid
    nx, ny = grid.shape
    hx, hy = grid.spacing
    k3 = problem.kappa.reshape(1, nx, ny)
    tx, ty = transmissibilities(grid, k3)
    u3 = np.asarray(u, dtype=float).reshape(nx, ny)
    fx = np.zeros((nx + 1, ny))
    fy = np.zeros((nx, ny + 1))
    fx[1:-1, :] = tx[0] * (u3[:-1, :] - u3[1:, :])
    fy[:, 1:-1] = ty[0] * (u3[:, :-1] - u3[:, 1:])
    vx = 0.5 * (fx[:-1, :] + fx[1:, :]) / hy
    vy = 0.5 * (fy[:, :-1] + fy[:, 1:]) / hx
    return Velocity(fx, fy, np.column_stack([vx.ravel(), vy.ravel()]))


def solve_ensemble(
    kl: KLBasis,
    grid: SpatialGrid,
    source,
    xi,
    tol: float = DEFAULT_TOL,
    batch_size: int = 500,
    threads: int = 1,
) -> np.ndarray:
    """Pressure at every cell for each row of ``xi`` (shape ``(N, n_modes)``).

    Batches are independent, so the result does not depend on ``threads``.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    starts = range(0, xi.shape[0], batch_size)

    def work(s):
        kappa = sample_transmissivity(kl, xi[s : s + batch_size])
        return solve_batch(grid, kappa, source, tol)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    logger.debug("solved %d systems in %d batches", xi.shape[0], len(parts))
    return np.vstack(parts) if parts else np.empty((0, grid.n_points))
