"""Squared-exponential Gaussian fields on rectangular grids: Karhunen-Loeve
decomposition (Nystrom on cell centers) and log-normal transmissivity."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform cell-centered grid on ``[x0, x1] x [y0, y1]``.

    Cells are flattened in ``(i, j)`` order with ``i`` along the first axis,
    i.e. point ``k = i * ny + j``.
    """

    extent: tuple = ((0.0, 400.0), (0.0, 400.0))
    cells: tuple = (40, 40)

    def __post_init__(self):
        ext = tuple((float(a), float(b)) for a, b in self.extent)
        cells = tuple(int(c) for c in self.cells)
        if len(ext) != 2 or len(cells) != 2:
            raise ValueError("only two-dimensional grids are supported")
        if any(b <= a for a, b in ext) or any(c < 1 for c in cells):
            raise ValueError(f"invalid grid: extent={ext}, cells={cells}")
        object.__setattr__(self, "extent", ext)
        object.__setattr__(self, "cells", cells)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells

    @property
    def n_points(self) -> int:
        return self.cells[0] * self.cells[1]

    @property
    def spacing(self) -> tuple[float, float]:
        return tuple((b - a) / n for (a, b), n in zip(self.extent, self.cells))

    @property
    def lengths(self) -> tuple[float, float]:
        return tuple(b - a for a, b in self.extent)

    @property
    def area(self) -> float:
        lx, ly = self.lengths
        return lx * ly

    def centers(self, axis: int) -> np.ndarray:
        (a, _), n, h = self.extent[axis], self.cells[axis], self.spacing[axis]
        return a + (np.arange(n) + 0.5) * h

    @cached_property
    def points(self) -> np.ndarray:
        X, Y = np.meshgrid(self.centers(0), self.centers(1), indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def areas(self) -> np.ndarray:
        hx, hy = self.spacing
        return np.full(self.n_points, hx * hy)

    def index(self, i: int, j: int) -> int:
        return i * self.cells[1] + j

    def nearest(self, xy) -> int:
        """Flat index of the cell containing (or closest to) ``xy``."""
        return int(np.argmin(np.sum((self.points - np.asarray(xy, dtype=float)) ** 2, axis=1)))

    def probe_lattice(self, fractions=(0.25, 0.5, 0.75)) -> np.ndarray:
        """Flat indices of an interior ``k x k`` lattice of probe cells."""
        (x0, x1), (y0, y1) = self.extent
        out = [
            self.nearest((x0 + fx * (x1 - x0), y0 + fy * (y1 - y0)))
            for fx in fractions
            for fy in fractions
        ]
        return np.array(out, dtype=np.intp)


@dataclass(frozen=True)
class RandomFieldSpec:
    """Squared-exponential covariance ``sigma2 exp(-1/2 sum (dx_i / l_i)^2)``."""

    variance: float = 0.5
    lengths: tuple = (80.0, 80.0)
    mean: float = 0.0

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("kernel variance must be positive")
        if any(l <= 0 for l in self.lengths):
            raise ValueError("correlation lengths must be positive")


def se_kernel(spec: RandomFieldSpec, x, y):
    """Squared-exponential covariance between points ``x`` and ``y`` (broadcasting)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = np.sum(((x - y) / np.asarray(spec.lengths, dtype=float)) ** 2, axis=-1)
    return spec.variance * np.exp(-0.5 * r2)


class NonPSDKernel(ValueError):
    pass


@dataclass(frozen=True)
class KLBasis:
    """Truncated KL basis of a Gaussian field on a grid.

    ``eigenfunctions[:, i]`` is ``g_i`` on the grid, orthonormal under the
    cell-area weights; ``spectrum`` keeps the full (clipped) discrete spectrum.
    """

    mean: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    energy_fraction: float
    spectrum: np.ndarray
    grid: SpatialGrid | None = None

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    def covariance(self) -> np.ndarray:
        """Truncated kernel ``sum_i lambda_i g_i(x) g_i(y)`` on the grid."""
        g = self.eigenfunctions
        return (g * self.eigenvalues) @ g.T


def kernel_matrix(spec: RandomFieldSpec, grid: SpatialGrid) -> np.ndarray:
    P = grid.points
    return se_kernel(spec, P[:, None, :], P[None, :, :])


def kl_decompose(
    spec: RandomFieldSpec,
    grid: SpatialGrid,
    energy_fraction: float = 0.97,
    n_modes: int | None = None,
) -> KLBasis:
    """Nystrom KL decomposition with area weights.

    Keeps the smallest number of modes whose cumulative eigenvalue sum reaches
    ``energy_fraction`` of the total, unless ``n_modes`` is given.

    Raises:
        NonPSDKernel: if an eigenvalue is below ``-1e-10 * lambda_max``.
    """
    if not 0.0 < energy_fraction <= 1.0:
        raise ValueError("energy_fraction must lie in (0, 1]")
    w = grid.areas
    sw = np.sqrt(w)
    K = kernel_matrix(spec, grid)
    lam, vecs = np.linalg.eigh(sw[:, None] * K * sw[None, :])
    lam, vecs = lam[::-1], vecs[:, ::-1]
    if lam[-1] < -1e-10 * lam[0]:
        raise NonPSDKernel(f"kernel eigenvalue {lam[-1]:.3e} is significantly negative")
    lam = np.clip(lam, 0.0, None)
    n_pos = int(np.sum(lam > 0))
    cum = np.cumsum(lam) / lam.sum()
    if n_modes is None:
        m = int(np.searchsorted(cum, energy_fraction * (1 - 1e-12))) + 1
        m = min(m, n_pos)
    else:
        if not 1 <= n_modes <= n_pos:
            raise ValueError(f"n_modes must lie in 1..{n_pos}")
        m = n_modes
    g = vecs[:, :m] / sw[:, None]
    # largest-magnitude entry of each eigenfunction positive
    idx = np.argmax(np.abs(g), axis=0)
    g = g * np.sign(g[idx, np.arange(m)])
    mean = np.full(grid.n_points, float(spec.mean))
    return KLBasis(mean, lam[:m].copy(), g, float(cum[m - 1]), lam, grid)


def sample_gaussian_field(kl: KLBasis, xi) -> np.ndarray:
    """``G_0(x) + sum_i sqrt(lambda_i) xi_i g_i(x)`` for one ``(m,)`` or many ``(N, m)`` draws."""
    xi = np.asarray(getattr(xi, "values", xi), dtype=float)
    if xi.shape[-1] != kl.n_modes:
        raise ValueError(f"expected {kl.n_modes} KL variables, got {xi.shape[-1]}")
    return kl.mean + (xi * np.sqrt(kl.eigenvalues)) @ kl.eigenfunctions.T


def sample_transmissivity(kl: KLBasis, xi) -> np.ndarray:
    """Log-normal isotropic transmissivity ``exp(G(x, xi))``."""
    return np.exp(sample_gaussian_field(kl, xi))


def save_kl(kl: KLBasis, directory: str | Path) -> None:
    """Write ``kl_eigenvalues.csv`` and ``kl_eigenfunctions.csv`` (one column per mode)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cum = np.cumsum(kl.eigenvalues) / kl.spectrum.sum()
    np.savetxt(
        directory / "kl_eigenvalues.csv",
        np.column_stack([np.arange(1, kl.n_modes + 1), kl.eigenvalues, cum]),
        fmt=["%d", "%.17g", "%.17g"],
        delimiter=",",
        header="mode,eigenvalue,cumulative_energy",
        comments="",
    )
    pts = kl.grid.points if kl.grid is not None else np.zeros((kl.mean.size, 0))
    cols = ["x", "y"][: pts.shape[1]] + [f"g{k + 1}" for k in range(kl.n_modes)]
    np.savetxt(
        directory / "kl_eigenfunctions.csv",
        np.column_stack([pts, kl.eigenfunctions]),
        fmt="%.17g",
        delimiter=",",
        header=",".join(cols),
        comments="",
    )
