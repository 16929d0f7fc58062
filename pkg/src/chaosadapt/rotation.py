"""Exact transformation of chaos coefficients under an orthogonal change of
variables ``eta = A xi``.

The inner product ``<h_alpha(xi), h_beta(A xi)>`` vanishes unless
``|alpha| == |beta| == n``; otherwise it is a sum over complete pairings of
the ``n`` copies of the ``xi`` variables with the ``n`` copies of the ``eta``
variables. Grouping pairings by how many ``(eta_i, xi_k)`` edges they use
gives a sum over non-negative integer matrices ``M`` with row sums ``beta``
and column sums ``alpha``::

    <h_alpha, h_beta(A .)> = alpha! beta! sum_M prod_{i,k} a_ik^M_ik / M_ik!

All functions accept either a single ``(d, d)`` matrix or a stack of
matrices of shape ``(..., d, d)`` and broadcast over the leading axes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .chaos import ChaosExpansion, IndexSet, factorial, multi_index_label

ISOMETRY_TOL = 1e-10
#: Largest total order accepted by the general Gram entry.
MAX_GRAM_ORDER = 6


class NotAnIsometry(ValueError):
    pass


def check_isometry(A, tol: float = ISOMETRY_TOL) -> np.ndarray:
    """Return ``A`` as a float array after checking ``A A^T = I`` for every matrix."""
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise NotAnIsometry(f"expected square matrices, got shape {A.shape}")
    err = np.abs(A @ np.swapaxes(A, -1, -2) - np.eye(A.shape[-1]))
    worst = float(err.max()) if err.size else 0.0
    if worst > tol:
        raise NotAnIsometry(f"||A A^T - I||_max = {worst:.3e} exceeds {tol:g}")
    return A


@dataclass(frozen=True)
class Isometry:
    """An orthogonal ``d x d`` matrix, validated on construction."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", check_isometry(self.matrix))

    @property
    def d(self) -> int:
        return self.matrix.shape[-1]

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def _as_matrix(A) -> np.ndarray:
    if isinstance(A, Isometry):
        return A.matrix
    if hasattr(A, "matrices"):
        return A.matrices
    return np.asarray(A, dtype=float)


# -- contingency tables -------------------------------------------------------


def _bounded_compositions(total: int, caps: Sequence[int]):
    if len(caps) == 1:
        if total <= caps[0]:
            yield (total,)
        return
    rest_cap = sum(caps[1:])
    for first in range(min(total, caps[0]), max(0, total - rest_cap) - 1, -1):
        for rest in _bounded_compositions(total - first, caps[1:]):
            yield (first,) + rest


@lru_cache(maxsize=100_000)
def _tables(alpha: tuple[int, ...], beta: tuple[int, ...]):
    """Enumerate tables with row sums ``beta`` and column sums ``alpha``.

    Returns ``(rows, cols, exps, weights)`` where ``rows/cols/exps`` have shape
    ``(n_tables, n_cells)`` over the support cells and ``weights`` is
    ``1 / prod(M!)`` per table.
    """
    rows = [i for i, b in enumerate(beta) if b]
    cols = [k for k, a in enumerate(alpha) if a]
    row_sums = [beta[i] for i in rows]
    col_sums = [alpha[k] for k in cols]
    tables: list[list[int]] = []

    def walk(r: int, caps: list[int], acc: list[int]):
        if r == len(rows):
            if not any(caps):
                tables.append(acc)
            return
        for comp in _bounded_compositions(row_sums[r], caps):
            walk(r + 1, [c - m for c, m in zip(caps, comp)], acc + list(comp))

    if rows and cols:
        walk(0, col_sums, [])
    elif not rows and not cols:
        tables.append([])
    cell_r = np.repeat(rows, len(cols)).astype(np.intp)
    cell_c = np.tile(cols, len(rows)).astype(np.intp)
    exps = np.array(tables, dtype=np.int64).reshape(len(tables), len(rows) * len(cols))
    weights = np.array(
        [1.0 / math.prod(math.factorial(m) for m in t) for t in tables], dtype=float
    )
    return cell_r, cell_c, exps, weights


def gram_entry(alpha: Sequence[int], beta: Sequence[int], A, normalized: bool = True):
    """``<psi_alpha(xi), psi_beta(A xi)>`` (or the unnormalized ``h`` version).

    Raises:
        ValueError: on dimension mismatch or total order above ``MAX_GRAM_ORDER``.
    """
    A = _as_matrix(A)
    alpha = tuple(int(a) for a in alpha)
    beta = tuple(int(b) for b in beta)
    d = A.shape[-1]
    if len(alpha) != d or len(beta) != d:
        raise ValueError(f"multi-index lengths {len(alpha)}, {len(beta)} do not match d = {d}")
    n = sum(alpha)
    lead = A.shape[:-2]
    if n != sum(beta):
        return np.zeros(lead) if lead else 0.0
    if n > MAX_GRAM_ORDER:
        raise ValueError(f"total order {n} exceeds MAX_GRAM_ORDER = {MAX_GRAM_ORDER}")
    cell_r, cell_c, exps, weights = _tables(alpha, beta)
    entries = A[..., cell_r, cell_c]  # (..., n_cells)
    total = np.zeros(lead)
    for m, w in zip(exps, weights):
        total = total + w * np.prod(entries ** m, axis=-1)
    fa, fb = factorial(alpha), factorial(beta)
    scale = math.sqrt(fa * fb) if normalized else float(fa * fb)
    total = total * scale
    return total if lead else float(total)


def gram_entry_1d(alpha: Sequence[int], n: int, i: int, A, normalized: bool = False):
    """``<h_alpha(xi), h_n(eta_i)>  = n! prod_k a_ik^alpha_k`` for ``|alpha| = n``.

    With ``normalized=True`` the value is divided by ``sqrt(alpha! n!)``, which
    equals ``gram_entry(alpha, n * eps_i, A)``.
    """
    A = _as_matrix(A)
    alpha = np.asarray(alpha, dtype=np.int64)
    if alpha.shape != (A.shape[-1],):
        raise ValueError(f"multi-index length {alpha.size} does not match d = {A.shape[-1]}")
    lead = A.shape[:-2]
    if int(alpha.sum()) != n:
        return np.zeros(lead) if lead else 0.0
    val = math.factorial(n) * np.prod(A[..., i, :] ** alpha, axis=-1)
    if normalized:
        val = val / math.sqrt(factorial(alpha) * math.factorial(n))
    return val if lead else float(val)


def gram_matrix(index_set: IndexSet, A, retained=None) -> np.ndarray:
    """Grammian ``C[alpha, beta] = <psi_alpha, psi_beta^A>``; columns outside
    ``retained`` are zero. Shape ``(..., |J_p|, |J_p|)``."""
    A = _as_matrix(A)
    cols = retained_positions(index_set, retained)
    C = np.zeros(A.shape[:-2] + (len(index_set), len(index_set)))
    orders = index_set.orders
    for jb in cols:
        beta = index_set[jb]
        sl = index_set.order_slice(int(orders[jb]))
        for ja in range(sl.start, sl.stop):
            C[..., ja, jb] = gram_entry(index_set[ja], beta, A)
    return C


def save_gram_csv(C: np.ndarray, index_set: IndexSet, path: str | Path) -> None:
    """Dump a single Gram matrix with multi-index row and column labels."""
    labels = [multi_index_label(a) for a in index_set]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha\\beta"] + labels)
        for lab, row in zip(labels, np.asarray(C)):
            w.writerow([lab] + [repr(float(v)) for v in row])


# -- coefficient rotation -----------------------------------------------------


def retained_positions(index_set: IndexSet, retained=None) -> np.ndarray:
    """Sorted column positions of ``retained`` within ``index_set``.

    ``retained`` may be ``None`` (everything), an ``IndexSet`` over the same or
    fewer variables (padded with trailing zeros), or an iterable of
    multi-indices.

    Raises:
        ValueError: if some retained index is not in ``index_set``.
    """
    if retained is None:
        return np.arange(len(index_set))
    if isinstance(retained, np.ndarray) and retained.ndim == 1 and retained.dtype.kind in "iu":
        pos = np.unique(retained)
        if pos.size and (pos[0] < 0 or pos[-1] >= len(index_set)):
            raise ValueError("retained positions out of range")
        return pos
    if isinstance(retained, IndexSet):
        rows: Iterable = retained.indices
    else:
        rows = retained
    out = []
    for alpha in rows:
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) < index_set.d:
            alpha = alpha + (0,) * (index_set.d - len(alpha))
        if alpha not in index_set:
            raise ValueError(f"retained multi-index {alpha} is not in J_{index_set.p}")
        out.append(index_set.position(alpha))
    return np.unique(np.array(out, dtype=np.intp))


def _pure_direction(beta: np.ndarray):
    nz = np.flatnonzero(beta)
    if nz.size == 1:
        return int(nz[0])
    return None


def _row_monomials(rows: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """``prod_k rows[..., k] ** alphas[j, k]`` for every ``j``; shape ``(..., m)``."""
    n = int(alphas.sum(axis=1).max()) if alphas.size else 0
    if n == 0:
        return np.ones(rows.shape[:-1] + (alphas.shape[0],))
    # each alpha as a padded list of variable indices, one per unit of order
    idx = np.zeros((alphas.shape[0], n), dtype=np.intp)
    mask = np.zeros((alphas.shape[0], n), dtype=bool)
    for j, a in enumerate(alphas):
        reps = np.repeat(np.arange(a.size), a)
        idx[j, : reps.size] = reps
        mask[j, : reps.size] = True
    factors = np.where(mask, rows[..., idx], 1.0)
    return np.prod(factors, axis=-1)


def rotate_coefficients(e: ChaosExpansion, A, retained=None) -> ChaosExpansion:
    """Coefficients of ``e`` in the rotated basis ``psi_beta(A xi)``.

    ``A`` is one matrix shared by all points or a stack ``(n_points, d, d)``.
    Columns not in ``retained`` are returned as zero. Pure indices
    ``beta = n eps_i`` use the closed one-dimensional formula; mixed indices
    use the general table sum.
    """
    A = _as_matrix(A)
    if A.shape[-1] != e.d:
        raise ValueError(f"isometry is {A.shape[-1]}-dimensional, expansion has d = {e.d}")
    if A.ndim == 3 and A.shape[0] != e.n_points:
        raise ValueError(f"{A.shape[0]} isometries for {e.n_points} points")
    iset = e.index_set
    cols = retained_positions(iset, retained)
    out = np.zeros_like(e.coeffs)
    orders = iset.orders
    inv_sqrt_fact = 1.0 / np.sqrt(np.array(iset.factorials, dtype=float))
    for jb in cols:
        beta = iset.indices[jb]
        n = int(orders[jb])
        if n == 0:
            out[:, jb] = e.coeffs[:, 0]
            continue
        sl = iset.order_slice(n)
        block = e.coeffs[:, sl]
        i = _pure_direction(beta)
        if i is not None:
            mono = _row_monomials(A[..., i, :], iset.indices[sl])  # (P or 1, m)
            weights = mono * inv_sqrt_fact[sl]
            out[:, jb] = math.sqrt(math.factorial(n)) * np.sum(block * weights, axis=-1)
        else:
            acc = np.zeros(e.n_points)
            for ja in range(sl.start, sl.stop):
                u = e.coeffs[:, ja]
                if not np.any(u):
                    continue
                acc = acc + u * gram_entry(iset.indices[ja], beta, A)
            out[:, jb] = acc
    return ChaosExpansion(iset, out, e.grid)


def explicit_coeffs_1d(e: ChaosExpansion, a, max_order: int = 3) -> np.ndarray:
    """Closed-form coefficients of ``psi_n(a . xi)`` for ``n = 0..max_order``.

    ``a`` is a unit row, shared (shape ``(d,)``) or per point (``(n_points, d)``).
    Returns an array of shape ``(n_points, max_order + 1)``.
    """
    if max_order > 3:
        raise ValueError("closed forms are available up to order 3; use rotate_coefficients")
    a = np.asarray(a, dtype=float)
    norms = np.linalg.norm(a, axis=-1)
    if np.any(np.abs(norms - 1.0) > ISOMETRY_TOL):
        raise ValueError("row vector must have unit norm")
    a = np.broadcast_to(a, (e.n_points, e.d))
    iset, u, d = e.index_set, e.coeffs, e.d
    p = min(max_order, e.p)
    out = np.zeros((e.n_points, max_order + 1))

    def col(*counts):
        alpha = [0] * d
        for k in counts:
            alpha[k] += 1
        return u[:, iset.position(alpha)]

    out[:, 0] = u[:, 0]
    if p >= 1:
        out[:, 1] = sum(a[:, k] * col(k) for k in range(d))
    if p >= 2:
        s = sum(col(k, k) * a[:, k] ** 2 for k in range(d))
        s = s + math.sqrt(2) * sum(
            col(k, j) * a[:, k] * a[:, j] for k in range(d) for j in range(k + 1, d)
        )
        out[:, 2] = s
    if p >= 3:
        s = sum(col(k, k, k) * a[:, k] ** 3 for k in range(d))
        # 2 eps_k + eps_j over every ordered pair j != k
        s = s + math.sqrt(3) * sum(
            col(k, k, j) * a[:, k] ** 2 * a[:, j] for k in range(d) for j in range(d) if j != k
        )
        s = s + math.sqrt(6) * sum(
            col(k, j, l) * a[:, k] * a[:, j] * a[:, l]
            for k in range(d)
            for j in range(k + 1, d)
            for l in range(j + 1, d)
        )
        out[:, 3] = s
    return out
