"""Chaos expansions whose coefficients depend on a second Gaussian block.

The input is split into an adapted block ``xi_hat`` (size ``d1``) and a
parameter block ``zeta`` (size ``d2``). Every base multi-index factors as
``(alpha over xi_hat, beta over zeta)`` and the expansion is regrouped as
``sum_alpha U_alpha(x, zeta) psi_alpha(xi_hat)`` with
``U_alpha(x, zeta) = sum_beta u_{alpha, beta}(x) psi_beta(zeta)``.
Adaptation then acts on ``xi_hat`` with an isometry that depends on ``zeta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adaptation import (
    AdaptedExpansion,
    gaussian_adaptation,
    project,
    pure_retained,
    quadratic_adaptation,
)
from .chaos import (
    ChaosExpansion,
    IndexSet,
    build_index_set,
    index_set_size,
    psi_columns,
    psi_matrix,
)


@dataclass(frozen=True)
class SplitExpansion:
    """Regrouped coefficient tables.

    ``tables[a]`` has shape ``(n_points, |J_{p - |alpha_a|}^{d2}|)``: the
    coefficients ``u_{alpha_a, beta}`` for the ``beta`` that fit under the
    total-order cap, in the graded order of ``zeta_set``.
    """

    base: ChaosExpansion
    adapted: tuple[int, ...]
    parameters: tuple[int, ...]
    xi_set: IndexSet
    zeta_set: IndexSet | None
    tables: tuple[np.ndarray, ...]

    @property
    def d1(self) -> int:
        return len(self.adapted)

    @property
    def d2(self) -> int:
        return len(self.parameters)

    @property
    def n_points(self) -> int:
        return self.base.n_points


def _check_split(d: int, adapted, parameters):
    adapted = tuple(int(i) for i in adapted)
    if parameters is None:
        parameters = tuple(i for i in range(d) if i not in adapted)
    parameters = tuple(int(i) for i in parameters)
    both = adapted + parameters
    if not adapted:
        raise ValueError("the adapted block must contain at least one variable")
    if sorted(both) != list(range(d)):
        raise ValueError(
            f"split {adapted} / {parameters} is not a partition of the {d} input variables"
        )
    return adapted, parameters


def regroup(base: ChaosExpansion, adapted=(0, 1, 2, 3), parameters=None) -> SplitExpansion:
    """Regroup ``base`` by the split ``adapted`` / ``parameters`` (default: the rest).

    Raises:
        ValueError: if the blocks are not a partition of the base variables.
    """
    adapted, parameters = _check_split(base.d, adapted, parameters)
    p, d2 = base.p, len(parameters)
    xi_set = build_index_set(len(adapted), p)
    zeta_set = build_index_set(d2, p) if d2 else None
    iset = base.index_set
    merged = np.zeros(base.d, dtype=np.int64)
    tables = []
    for alpha in xi_set.indices:
        room = p - int(alpha.sum())
        betas = zeta_set.indices[: index_set_size(d2, room)] if d2 else np.zeros((1, 0), int)
        cols = np.empty(len(betas), dtype=np.intp)
        for k, beta in enumerate(betas):
            merged[list(adapted)] = alpha
            if d2:
                merged[list(parameters)] = beta
            cols[k] = iset.position(merged)
        tables.append(base.coeffs[:, cols].copy())
    return SplitExpansion(base, adapted, parameters, xi_set, zeta_set, tuple(tables))


def merge(se: SplitExpansion) -> ChaosExpansion:
    """Inverse of :func:`regroup`, rebuilt from the coefficient tables."""
    iset = se.base.index_set
    coeffs = np.zeros((se.n_points, len(iset)))
    merged = np.zeros(iset.d, dtype=np.int64)
    for alpha, table in zip(se.xi_set.indices, se.tables):
        betas = se.zeta_set.indices[: table.shape[1]] if se.d2 else [()]
        for k, beta in enumerate(betas):
            merged[list(se.adapted)] = alpha
            if se.d2:
                merged[list(se.parameters)] = beta
            coeffs[:, iset.position(merged)] = table[:, k]
    return ChaosExpansion(iset, coeffs, se.base.grid)


def conditional_coefficients(se: SplitExpansion, zeta, points=None) -> np.ndarray:
    """``U_alpha(x, zeta)`` for every ``alpha`` over ``xi_hat``.

    Args:
        zeta: one draw ``(d2,)`` or many ``(N, d2)``.
        points: optional subset of point indices.

    Returns:
        ``(n_points, |J_p^{d1}|)`` for a single draw, else ``(N, n_points, |J_p^{d1}|)``.
    """
    zeta = np.asarray(zeta, dtype=float)
    single = zeta.ndim == 1
    zeta = zeta.reshape(1, -1) if single else zeta.reshape(zeta.shape[0], -1)
    if zeta.shape[1] != se.d2:
        raise ValueError(f"expected {se.d2} parameter variables, got {zeta.shape[1]}")
    pts = slice(None) if points is None else np.atleast_1d(points)
    n_pts = len(range(se.n_points)[pts]) if isinstance(pts, slice) else len(pts)
    out = np.empty((zeta.shape[0], n_pts, len(se.xi_set)))
    basis = psi_matrix(se.zeta_set, zeta) if se.d2 else np.ones((zeta.shape[0], 1))
    for a, table in enumerate(se.tables):
        out[:, :, a] = basis[:, : table.shape[1]] @ table[pts].T
    return out[0] if single else out


def conditional_expansion(se: SplitExpansion, zeta, point: int) -> ChaosExpansion:
    """Expansion over ``xi_hat`` at one point, one row per ``zeta`` draw."""
    U = conditional_coefficients(se, np.atleast_2d(zeta), [point])[:, 0, :]
    return ChaosExpansion(se.xi_set, U)


def _adapt(e: ChaosExpansion, scheme: str, n: int, retained):
    if scheme == "gaussian":
        field = gaussian_adaptation(e, n)
    elif scheme == "quadratic":
        field = quadratic_adaptation(e, n)
    else:
        raise ValueError(f"unknown adaptation scheme {scheme!r}")
    if retained is None:
        retained = pure_retained(n, min(2, e.p), e.d)
    return project(e, field, retained)


def conditional_adapt(
    se: SplitExpansion, zeta, scheme: str = "gaussian", retained=None, n: int = 1
) -> AdaptedExpansion:
    """Adapt the ``xi_hat`` block at every point for one ``zeta`` draw.

    The result's field holds ``A(x, zeta)`` (``d1 x d1`` per point); by
    default the retained set is ``{0, eps_1..eps_n, 2 eps_1..2 eps_n}``.

    Raises:
        DegenerateGaussianPart: where the conditional first-order part vanishes.
    """
    U = conditional_coefficients(se, np.asarray(zeta, dtype=float).reshape(-1))
    return _adapt(ChaosExpansion(se.xi_set, U, se.base.grid), scheme, n, retained)


def adapt_over_draws(
    se: SplitExpansion, zeta, point: int, scheme: str = "gaussian", retained=None, n: int = 1
) -> AdaptedExpansion:
    """Adapt at one point for many ``zeta`` draws; the result is indexed by draw."""
    return _adapt(conditional_expansion(se, zeta, point), scheme, n, retained)


def sample_adapted(
    se: SplitExpansion,
    point: int,
    xi_hat,
    zeta,
    scheme: str = "gaussian",
    n: int = 1,
    chunk: int = 4096,
) -> np.ndarray:
    """Joint samples of the adapted random-coefficient expansion at one point.

    For each draw, ``U`` and ``A`` are built from ``zeta``, the adapted
    coefficients computed, and the result evaluated at ``eta = A(zeta) xi_hat``.
    """
    xi_hat = np.atleast_2d(np.asarray(xi_hat, dtype=float))
    zeta = np.asarray(zeta, dtype=float).reshape(xi_hat.shape[0], -1)
    out = np.empty(xi_hat.shape[0])
    for s in range(0, xi_hat.shape[0], chunk):
        ad = adapt_over_draws(se, zeta[s : s + chunk], point, scheme, None, n)
        eta = np.einsum("sij,sj->si", ad.field.matrices[:, :n, :], xi_hat[s : s + chunk])
        basis = psi_columns(ad.retained[:, :n], eta)
        out[s : s + chunk] = np.sum(basis * ad.coeffs, axis=1)
    return out


def sample_eta(se: SplitExpansion, point: int, xi_hat, zeta, scheme: str = "gaussian", n: int = 1):
    """Adapted variables ``eta = A(x, zeta) xi_hat`` for paired draws, shape ``(N, n)``."""
    U = conditional_expansion(se, zeta, point)
    field = gaussian_adaptation(U, n) if scheme == "gaussian" else quadratic_adaptation(U, n)
    return np.einsum("sij,sj->si", field.matrices[:, :n, :], np.atleast_2d(xi_hat))


@dataclass(frozen=True)
class ExpectedCoefficients:
    """Monte-Carlo mean and standard error of adapted coefficients over ``zeta``.

    ``mean`` and ``stderr`` have shape ``(n_points, len(retained))``.
    """

    retained: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_draws: int


def expected_adapted_coefficients(
    se: SplitExpansion,
    zetas,
    scheme: str = "gaussian",
    n: int = 1,
    retained=None,
    chunk: int = 64,
) -> ExpectedCoefficients:
    """``E[U^A_beta(x, zeta)]`` estimated from the rows of ``zetas``.

    Draws are processed in chunks of ``chunk``; each chunk adapts every
    point for every draw at once. Sums are accumulated in draw order so the
    result does not depend on how work is split.
    """
    zetas = np.atleast_2d(np.asarray(zetas, dtype=float))
    N, P = zetas.shape[0], se.n_points
    if retained is None:
        retained = pure_retained(n, min(2, se.base.p), se.d1)
    s1 = s2 = None
    for s in range(0, N, chunk):
        U = conditional_coefficients(se, zetas[s : s + chunk])
        B = U.shape[0]
        ad = _adapt(ChaosExpansion(se.xi_set, U.reshape(B * P, -1)), scheme, n, retained)
        c = ad.coeffs.reshape(B, P, -1)
        if s1 is None:
            s1 = np.zeros(c.shape[1:])
            s2 = np.zeros(c.shape[1:])
        for row in c:
            s1 += row
            s2 += row * row
    mean = s1 / N
    var = np.maximum(s2 / N - mean * mean, 0.0) * N / max(N - 1, 1)
    return ExpectedCoefficients(ad.retained, mean, np.sqrt(var / N), N)
