"""Monte-Carlo projection of chaos coefficients, Gaussian kernel density
estimates and distances between densities."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chaos import ChaosExpansion, IndexSet, psi_matrix


@dataclass(frozen=True)
class SampleStore:
    """Input draws ``xi`` (``N x d``) and model outputs (``N x n_points``)."""

    inputs: np.ndarray
    outputs: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        xi = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        out = np.asarray(self.outputs, dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        if xi.shape[0] != out.shape[0]:
            raise ValueError(f"{xi.shape[0]} input rows but {out.shape[0]} output rows")
        object.__setattr__(self, "inputs", xi)
        object.__setattr__(self, "outputs", out)

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    def save(self, path: str | Path, grid_shape=None) -> None:
        """JSON header line, then one CSV row per sample: ``xi_1..xi_d, u_0..u_{P-1}``."""
        d, P = self.inputs.shape[1], self.outputs.shape[1]
        header = {"seed": self.seed, "d": d, "n_points": P, "grid_shape": grid_shape}
        cols = [f"xi_{i + 1}" for i in range(d)] + [f"u_{k}" for k in range(P)]
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(header) + "\n")
            fh.write(",".join(cols) + "\n")
            np.savetxt(fh, np.hstack([self.inputs, self.outputs]), fmt="%.17g", delimiter=",")

    @classmethod
    def load(cls, path: str | Path) -> "SampleStore":
        with open(path) as fh:
            header = json.loads(fh.readline()[2:])
            fh.readline()
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        d = int(header["d"])
        return cls(data[:, :d], data[:, d:], header.get("seed"))


def fit_coefficients(
    store: SampleStore, index_set: IndexSet, grid=None, chunk: int = 20_000
) -> ChaosExpansion:
    """Projection estimate ``u_alpha(x) = mean_n u(x, xi_n) psi_alpha(xi_n)``.

    Warns when fewer than ``10 |J_p|`` samples are available.
    """
    N = store.n_samples
    if N < 10 * len(index_set):
        warnings.warn(
            f"{N} samples for {len(index_set)} basis terms; projection estimates will be noisy",
            stacklevel=2,
        )
    acc = np.zeros((store.outputs.shape[1], len(index_set)))
    for s in range(0, N, chunk):
        basis = psi_matrix(index_set, store.inputs[s : s + chunk])
        acc += store.outputs[s : s + chunk].T @ basis
    return ChaosExpansion(index_set, acc / N, grid)


# -- densities --------------------------------------------------------------------


class TooFewSamples(ValueError):
    pass


@dataclass(frozen=True)
class DensityEstimate:
    abscissae: np.ndarray
    density: np.ndarray
    bandwidth: float
    n_samples: int

    def __call__(self, x) -> np.ndarray:
        return np.interp(x, self.abscissae, self.density, left=0.0, right=0.0)

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.abscissae))

    @property
    def support(self) -> tuple[float, float]:
        return float(self.abscissae[0]), float(self.abscissae[-1])


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=float)
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.349) if q75 > q25 else sd
    return 0.9 * spread * x.size ** (-0.2)


def kde_eval(samples, x, bandwidth: float, chunk: int = 32) -> np.ndarray:
    """Gaussian kernel density of ``samples`` at points ``x``."""
    samples = np.sort(np.asarray(samples, dtype=float).ravel())
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    out = np.empty_like(flat)
    norm = 1.0 / (samples.size * bandwidth * math.sqrt(2 * math.pi))
    reach = 9.0 * bandwidth  # exp(-40) is below double resolution of the sum
    lo = np.searchsorted(samples, flat - reach)
    hi = np.searchsorted(samples, flat + reach)
    for s in range(0, flat.size, chunk):
        xs = flat[s : s + chunk]
        a, b = int(lo[s : s + chunk].min()), int(hi[s : s + chunk].max())
        z = (xs[:, None] - samples[None, a:b]) / bandwidth
        out[s : s + chunk] = np.exp(-0.5 * z * z).sum(axis=1) * norm
    return out.reshape(x.shape)


def kde(samples, bandwidth: float | None = None, n_grid: int = 1024, grid=None) -> DensityEstimate:
    """Gaussian KDE on an abscissa grid spanning the sample range +- 3 bandwidths.

    Raises:
        TooFewSamples: fewer than 100 samples.
        ValueError: zero sample variance.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise TooFewSamples(f"need at least 100 samples, got {x.size}")
    if not np.ptp(x) > 0:
        raise ValueError("samples have zero variance")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if grid is None:
        grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, n_grid)
    grid = np.asarray(grid, dtype=float)
    return DensityEstimate(grid, kde_eval(x, grid, h), h, x.size)


def density_distance(p: DensityEstimate, q: DensityEstimate, n_grid: int | None = None):
    """Trapezoid ``L1`` and Hellinger distances on a common abscissa grid.

    Hellinger is normalized to ``[0, 1]``: ``sqrt(1/2 int (sqrt p - sqrt q)^2)``.

    Raises:
        ValueError: if the supports do not overlap.
    """
    (pa, pb), (qa, qb) = p.support, q.support
    if pb <= qa or qb <= pa:
        raise ValueError("density supports are disjoint")
    n = n_grid or 2 * max(p.abscissae.size, q.abscissae.size)
    x = np.linspace(min(pa, qa), max(pb, qb), n)
    fp, fq = p(x), q(x)
    l1 = float(np.trapezoid(np.abs(fp - fq), x))
    hel = float(np.sqrt(0.5 * np.trapezoid((np.sqrt(fp) - np.sqrt(fq)) ** 2, x)))
    return l1, hel


def save_densities(path: str | Path, curves: dict[str, DensityEstimate]) -> None:
    """Long-format CSV: ``curve,x,density`` rows for plotting."""
    with open(path, "w") as fh:
        fh.write("curve,x,density\n")
        for name, est in curves.items():
            for xv, dv in zip(est.abscissae, est.density):
                fh.write(f"{name},{xv:.17g},{dv:.17g}\n")
