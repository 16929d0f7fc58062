"""Infinite-dimensional benchmark with geometric first-order coefficients.

The model is ``u(x, xi) = S + S^2`` with ``S = sum_n b_n(x) xi_n`` and
``b_n(x) = x^{(n-1)/2}``, so that ``sum_n b_n^2 = 1 / (1 - x)``. A one-
dimensional Gaussian adaptation ``eta = S / ||b||`` gives closed-form
coefficients; two truncations to ``d`` input terms are compared with it:

* before adaptation: truncate the sum to ``d`` terms, then adapt
  (``eta_d`` is exactly standard normal);
* after adaptation: keep the exact coefficients and truncate only the
  input, ``eta_hat = S_d / ||b||`` which is ``N(0, 1 - x^d)``.

The second-order coefficients follow the convention ``u_{2 eps_k} = b_k^2``
and ``u_{eps_j + eps_k} = b_j b_k`` for the quadratic part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimation import DensityEstimate, density_distance, kde


def _check_x(x: float) -> float:
    x = float(x)
    if not 0.0 <= x < 1.0:
        raise ValueError(
            f"x = {x} is outside [0, 1): b_n(x) = x^((n-1)/2) is not real for x < 0 "
            "and the series diverges for x >= 1"
        )
    return x


def _check_d(d: int) -> int:
    if int(d) != d or d < 1:
        raise ValueError(f"truncation length must be a positive integer, got {d}")
    return int(d)


def first_order_coeffs(x: float, d: int) -> np.ndarray:
    """``b_1 .. b_d``."""
    x, d = _check_x(x), _check_d(d)
    return x ** (np.arange(d) / 2.0)


def exact_mean(x: float) -> float:
    """``E[S^2] = 1 / (1 - x)``, the constant term of the adapted expansion."""
    return 1.0 / (1.0 - _check_x(x))


def truncated_mean(x: float, d: int) -> float:
    """``E[S_d^2] = (1 - x^d) / (1 - x)``."""
    x, d = _check_x(x), _check_d(d)
    return (1.0 - x**d) / (1.0 - x)


def exact_adapted_coeffs(x: float) -> tuple[float, float]:
    """``(u_1, u_2)`` of the exact one-dimensional adaptation."""
    x = _check_x(x)
    u1 = 1.0 / math.sqrt(1.0 - x)
    u2 = 1.0 / (1.0 + x) + math.sqrt(2.0) * x / (1.0 - x * x)
    return u1, u2


def truncated_adapted_coeffs(x: float, d: int) -> tuple[float, float]:
    """``(u_1, u_2)`` after truncating the model to ``d`` terms and adapting."""
    x, d = _check_x(x), _check_d(d)
    xd, x2d = x**d, x ** (2 * d)
    u1 = math.sqrt((1.0 - xd) / (1.0 - x))
    u2 = (1.0 - x2d) / ((1.0 - xd) * (1.0 + x)) + math.sqrt(2.0) / (1.0 - xd) * (
        x * (1.0 - x2d) / (1.0 - x * x) - xd * (1.0 - xd) / (1.0 - x)
    )
    return u1, u2


def _expansion(c0, c1, c2, eta):
    return c0 + c1 * eta + c2 * (eta * eta - 1.0) / math.sqrt(2.0)


@dataclass(frozen=True)
class GeometricSamples:
    """Samples of the three variants at one ``(x, d)``.

    ``eta``, ``eta_d`` and ``eta_hat`` are the adapted inputs; ``exact``,
    ``before`` and ``after`` the corresponding model values.
    """

    x: float
    d: int
    eta: np.ndarray
    eta_d: np.ndarray
    eta_hat: np.ndarray
    exact: np.ndarray
    before: np.ndarray
    after: np.ndarray


def sample_variants(x: float, d: int, N: int, seed: int = 0, chunk: int = 10_000) -> GeometricSamples:
    """Draw the three variants from one set of inputs.

    ``xi_1..xi_d`` are drawn explicitly and the infinite tail
    ``sum_{n > d} b_n xi_n`` as a single independent ``N(0, x^d / (1 - x))``
    variable, so all three variants share ``S_d``.
    """
    x, d = _check_x(x), _check_d(d)
    if N < 1:
        raise ValueError("N must be positive")
    rng = np.random.default_rng(seed)
    b = first_order_coeffs(x, d)
    sigma = math.sqrt(exact_mean(x))
    sigma_d = math.sqrt(truncated_mean(x, d))
    tail_sd = math.sqrt(x**d / (1.0 - x))
    S_d = np.empty(N)
    tail = np.empty(N)
    for s in range(0, N, chunk):
        m = min(chunk, N - s)
        S_d[s : s + m] = rng.standard_normal((m, d)) @ b
        tail[s : s + m] = tail_sd * rng.standard_normal(m)
    eta = (S_d + tail) / sigma
    eta_d = S_d / sigma_d
    eta_hat = S_d / sigma
    u1, u2 = exact_adapted_coeffs(x)
    v1, v2 = truncated_adapted_coeffs(x, d)
    return GeometricSamples(
        x,
        d,
        eta,
        eta_d,
        eta_hat,
        _expansion(exact_mean(x), u1, u2, eta),
        _expansion(truncated_mean(x, d), v1, v2, eta_d),
        _expansion(exact_mean(x), u1, u2, eta_hat),
    )


@dataclass(frozen=True)
class GeometricComparison:
    x: float
    d: int
    densities: dict
    l1_before: float
    l1_after: float
    hellinger_before: float
    hellinger_after: float


def compare_pdfs(x: float, d: int, N: int = 100_000, seed: int = 0, n_grid: int = 1024) -> GeometricComparison:
    """KDEs of the three variants on a shared abscissa grid and the distances
    of both truncations to the exact variant."""
    s = sample_variants(x, d, N, seed)
    allv = np.concatenate([s.exact, s.before, s.after])
    h = {k: None for k in ("exact", "before", "after")}
    est = {}
    # one grid for all three so the distances compare like with like
    probe = kde(s.exact)
    lo, hi = allv.min() - 3 * probe.bandwidth, allv.max() + 3 * probe.bandwidth
    grid = np.linspace(lo, hi, n_grid)
    for name in h:
        est[name] = kde(getattr(s, name), grid=grid)
    l1b, hb = density_distance(est["exact"], est["before"])
    l1a, ha = density_distance(est["exact"], est["after"])
    return GeometricComparison(x, d, est, l1b, l1a, hb, ha)


def coefficient_table(xs, ds) -> list[dict]:
    """Rows ``x, d, u0, u1, u2, u0_hat, u1_hat, u2_hat`` for CSV export."""
    rows = []
    for x in xs:
        u1, u2 = exact_adapted_coeffs(x)
        for d in ds:
            v1, v2 = truncated_adapted_coeffs(x, d)
            rows.append(
                {
                    "x": x,
                    "d": d,
                    "u0": exact_mean(x),
                    "u1": u1,
                    "u2": u2,
                    "u0_hat": truncated_mean(x, d),
                    "u1_hat": v1,
                    "u2_hat": v2,
                }
            )
    return rows


__all__ = [
    "DensityEstimate",
    "GeometricComparison",
    "GeometricSamples",
    "coefficient_table",
    "compare_pdfs",
    "exact_adapted_coeffs",
    "exact_mean",
    "first_order_coeffs",
    "sample_variants",
    "truncated_adapted_coeffs",
    "truncated_mean",
]
