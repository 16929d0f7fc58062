"""Spatially varying adaptation isometries, projection onto reduced index
sets and the covariance kernels of the adapted Gaussian variables."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chaos import ChaosExpansion, IndexSet, build_index_set, psi_columns
from .rotation import (
    ISOMETRY_TOL,
    _as_matrix,
    _pure_direction,
    _row_monomials,
    check_isometry,
    gram_entry,
    retained_positions,
    rotate_coefficients,
)

DEGENERATE_TOL = 1e-14
COMPLETION_SKIP_TOL = 1e-8
KERNEL_RANK_RTOL = 1e-10


class DegenerateGaussianPart(ValueError):
    """The first-order coefficients vanish at some point."""

    def __init__(self, points, locations=None):
        self.points = np.asarray(points)
        self.locations = locations
        where = locations if locations is not None else self.points.tolist()
        super().__init__(f"first-order coefficients vanish at {len(self.points)} point(s): {where}")


# -- isometry fields ----------------------------------------------------------


@dataclass(frozen=True)
class IsometryField:
    """One orthogonal matrix per point; the adapted subspace is spanned by
    the first ``n`` rows.

    Attributes:
        matrices: array ``(n_points, d, d)``.
        n: adapted dimension.
        scheme: ``"gaussian"``, ``"quadratic"`` or ``"custom"``.
        spectrum: per-point eigenvalues of the quadratic form (quadratic scheme only),
            ordered like the rows of ``matrices``.
    """

    matrices: np.ndarray
    n: int
    scheme: str = "custom"
    grid: object | None = None
    spectrum: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        m = check_isometry(np.asarray(self.matrices, dtype=float))
        if m.ndim == 2:
            m = m[None]
        object.__setattr__(self, "matrices", m)
        if not 1 <= self.n <= m.shape[-1]:
            raise ValueError(f"adapted dimension {self.n} outside 1..{m.shape[-1]}")

    @property
    def d(self) -> int:
        return self.matrices.shape[-1]

    @property
    def n_points(self) -> int:
        return self.matrices.shape[0]

    def row(self, i: int = 0) -> np.ndarray:
        """Row ``i`` of every matrix, shape ``(n_points, d)``."""
        return self.matrices[:, i, :]

    def eta(self, xi, points=None) -> np.ndarray:
        """Adapted variables ``A(x) xi``; shape ``(n_samples, n_points, d)``."""
        A = self.matrices if points is None else self.matrices[np.atleast_1d(points)]
        return np.einsum("pij,sj->spi", A, np.atleast_2d(xi))


def complete_isometry(rows) -> np.ndarray:
    """Extend ``k`` orthonormal rows to a ``d x d`` orthogonal matrix.

    Candidates are the standard basis vectors in index order; each is
    orthogonalized (twice) against the rows accepted so far and skipped when
    its residual norm is below ``COMPLETION_SKIP_TOL``. A stack of shape
    ``(B, k, d)`` is completed matrix by matrix with the same rule.

    Raises:
        ValueError: if the rows are not orthonormal within ``ISOMETRY_TOL``.
    """
    rows = np.asarray(rows, dtype=float)
    single = rows.ndim <= 2
    rows = rows.reshape((1,) * (3 - max(rows.ndim, 1)) + rows.shape) if single else rows
    B, k, d = rows.shape
    if k > d:
        raise ValueError(f"{k} rows cannot be orthonormal in dimension {d}")
    gram = rows @ np.swapaxes(rows, 1, 2)
    if B and np.abs(gram - np.eye(k)).max() > ISOMETRY_TOL:
        raise ValueError("supplied rows are rank deficient or not orthonormal")
    # unfilled rows stay zero, so projecting against all d rows is harmless
    Q = np.zeros((B, d, d))
    Q[:, :k] = rows
    m = np.full(B, k)
    batch = np.arange(B)
    for j in range(d):
        open_ = m < d
        if not open_.any():
            break
        v = np.zeros((B, d))
        v[:, j] = 1.0
        for _ in range(2):
            v -= np.einsum("bij,bi->bj", Q, np.einsum("bij,bj->bi", Q, v))
        nv = np.linalg.norm(v, axis=1)
        take = open_ & (nv >= COMPLETION_SKIP_TOL)
        Q[batch[take], m[take]] = v[take] / nv[take, None]
        m = m + take
    return Q[0] if single else Q


def _locations(grid, points):
    centers = getattr(grid, "points", None)
    if centers is None:
        return None
    return [tuple(float(c) for c in centers[p]) for p in points]


def gaussian_adaptation(e: ChaosExpansion, n: int = 1) -> IsometryField:
    """First row at each point is the normalized first-order coefficient vector.

    Raises:
        DegenerateGaussianPart: where ``||u_eps(x)|| < 1e-14``.
    """
    first = e.first_order()
    norms = np.linalg.norm(first, axis=1)
    bad = np.flatnonzero(norms < DEGENERATE_TOL)
    if bad.size:
        raise DegenerateGaussianPart(bad, _locations(e.grid, bad))
    a1 = first / norms[:, None]
    mats = complete_isometry(a1[:, None, :])
    return IsometryField(mats, n, "gaussian", e.grid)


def quadratic_form(e: ChaosExpansion) -> np.ndarray:
    """Symmetric matrix of the second-order part, shape ``(n_points, d, d)``.

    The diagonal holds ``u_{2 eps_i} / sqrt(2)`` and the off-diagonal entries
    ``u_{eps_i + eps_j} / 2``, so that the second-order part of ``e`` equals
    ``xi^T S xi - trace(S)``.
    """
    if e.p < 2:
        raise ValueError("quadratic adaptation needs second-order coefficients (p >= 2)")
    iset, d = e.index_set, e.d
    S = np.empty((e.n_points, d, d))
    for i in range(d):
        S[:, i, i] = e.coeffs[:, iset.unit(i, 2)] / math.sqrt(2.0)
        for j in range(i + 1, d):
            alpha = [0] * d
            alpha[i] = alpha[j] = 1
            S[:, i, j] = S[:, j, i] = e.coeffs[:, iset.position(alpha)] / 2.0
    return S


def _sign_fix(vectors: np.ndarray) -> np.ndarray:
    # make the largest-magnitude component of each row positive
    idx = np.argmax(np.abs(vectors), axis=-1)
    lead = np.take_along_axis(vectors, idx[..., None], axis=-1)
    return vectors * np.where(lead < 0, -1.0, 1.0)


def quadratic_adaptation(e: ChaosExpansion, n: int) -> IsometryField:
    """Rows of ``A(x)`` are eigenvectors of the quadratic form ``S(x)``,
    ordered by decreasing ``|eigenvalue|`` so that ``S = A^T D A``.

    Raises:
        numpy.linalg.LinAlgError: if an eigendecomposition does not converge.
    """
    S = quadratic_form(e)
    lam, vecs = np.linalg.eigh(S)  # ascending; columns are eigenvectors
    order = np.argsort(-np.abs(lam), axis=-1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=-1)
    rows = np.swapaxes(vecs, -1, -2)
    rows = np.take_along_axis(rows, order[..., None], axis=-2)
    rows = _sign_fix(rows)
    return IsometryField(rows, n, "quadratic", e.grid, spectrum=lam)


# -- retained sets --------------------------------------------------------------


def pure_retained(n: int, p: int, d: int) -> np.ndarray:
    """``{0} U {k eps_i : i < n, 1 <= k <= p}`` as multi-indices of length ``d``."""
    out = [np.zeros(d, dtype=np.int64)]
    for k in range(1, p + 1):
        for i in range(n):
            a = np.zeros(d, dtype=np.int64)
            a[i] = k
            out.append(a)
    return np.array(out)


def total_retained(n: int, p: int, d: int) -> np.ndarray:
    """``J_p`` over the first ``n`` adapted variables, padded to length ``d``."""
    sub = build_index_set(n, p).indices
    return np.hstack([sub, np.zeros((len(sub), d - n), dtype=np.int64)])


# -- projection -----------------------------------------------------------------


@dataclass(frozen=True)
class AdaptedExpansion:
    """Reduced expansion ``sum_{beta in I} u^A_beta(x) psi_beta(A(x) xi)``.

    ``coeffs[:, k]`` belongs to multi-index ``retained[k]`` (length ``d``).
    """

    base: ChaosExpansion
    field: IsometryField
    retained: np.ndarray
    coeffs: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        return retained_positions(self.base.index_set, self.retained)

    def full(self) -> ChaosExpansion:
        """Coefficients in the adapted basis over all of ``J_p`` (zeros outside ``I``)."""
        c = np.zeros_like(self.base.coeffs)
        c[:, self.positions] = self.coeffs
        return ChaosExpansion(self.base.index_set, c, self.base.grid)

    def eval_eta(self, eta, point: int) -> np.ndarray:
        """Evaluate at adapted samples ``eta`` (shape ``(n_samples, m)`` with
        ``m <= d``; missing trailing variables are unused by ``I``)."""
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        m = eta.shape[1]
        if np.any(self.retained[:, m:]):
            raise ValueError(f"retained set uses more than {m} adapted variables")
        return psi_columns(self.retained[:, :m], eta) @ self.coeffs[point]

    def __call__(self, xi, point: int) -> np.ndarray:
        """Evaluate at original inputs ``xi`` via ``eta = A(x) xi``."""
        eta = np.atleast_2d(xi) @ self.field.matrices[point].T
        return self.eval_eta(eta, point)


def project(e: ChaosExpansion, field: IsometryField, retained) -> AdaptedExpansion:
    """Rotate ``e`` pointwise by ``field`` and keep only ``retained``.

    Raises:
        ValueError: if ``retained`` uses adapted variables beyond ``field.n``.
    """
    pos = retained_positions(e.index_set, retained)
    ret = e.index_set.indices[pos]
    if np.any(ret[:, field.n :]):
        raise ValueError(f"retained set involves variables beyond the first {field.n}")
    rot = rotate_coefficients(e, field.matrices, pos)
    return AdaptedExpansion(e, field, np.array(ret), rot.coeffs[:, pos])


def gram_columns(index_set: IndexSet, A, positions) -> np.ndarray:
    """Columns ``C[:, beta]`` of the Grammian for the given positions.

    Returns shape ``(..., |J_p|, len(positions))``.
    """
    A = _as_matrix(A)
    positions = np.asarray(positions, dtype=np.intp)
    out = np.zeros(A.shape[:-2] + (len(index_set), len(positions)))
    orders = index_set.orders
    fact = np.array(index_set.factorials, dtype=float)
    for k, jb in enumerate(positions):
        beta = index_set.indices[jb]
        n = int(orders[jb])
        sl = index_set.order_slice(n)
        if n == 0:
            out[..., 0, k] = 1.0
            continue
        i = _pure_direction(beta)
        if i is not None:
            mono = _row_monomials(A[..., i, :], index_set.indices[sl])
            out[..., sl, k] = math.sqrt(math.factorial(n)) * mono / np.sqrt(fact[sl])
        else:
            for ja in range(sl.start, sl.stop):
                out[..., ja, k] = gram_entry(index_set.indices[ja], beta, A)
    return out


def projection_error(e: ChaosExpansion, A, retained):
    """Coefficient-space residual ``(I - C C^T) w`` at every point.

    ``A`` is a single isometry, a stack ``(n_points, d, d)`` or an
    ``IsometryField``. Returns ``(errors, norms)`` with shapes
    ``(n_points, |J_p|)`` and ``(n_points,)``.
    """
    A = _as_matrix(A)
    pos = retained_positions(e.index_set, retained)
    C = gram_columns(e.index_set, A, pos)
    w = e.coeffs
    if C.ndim == 2:
        proj = (w @ C) @ C.T
    else:
        proj = np.einsum("pjm,pm->pj", C, np.einsum("pjm,pj->pm", C, w))
    err = w - proj
    return err, np.linalg.norm(err, axis=1)


def global_error_norm(e: ChaosExpansion, field, retained, weights=None) -> float:
    """``(integral_D ||w - w^{A,I}||^2 dx)^{1/2}`` with cell-area weights."""
    _, norms = projection_error(e, field, retained)
    if weights is None:
        weights = getattr(e.grid, "areas", None)
    if weights is None:
        weights = np.ones(e.n_points)
    return float(math.sqrt(np.sum(np.asarray(weights) * norms**2)))


# -- kernels of the adapted variables ------------------------------------------


@dataclass(frozen=True)
class KernelMatrix:
    """Covariance ``k_i(x, y) = a_i(x) . a_i(y)`` of the adapted variable ``eta_i``.

    ``eigenvalues`` (descending) and ``eigenfunctions`` (columns, orthonormal
    under the point weights) are those of the weighted integral operator.
    """

    values: np.ndarray
    row: int
    weights: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    hs_norm: float

    def rank(self, rtol: float = KERNEL_RANK_RTOL) -> int:
        lam = self.eigenvalues
        return int(np.sum(lam > rtol * lam[0])) if lam.size else 0


def eta_kernel(field: IsometryField, i: int = 0, weights=None) -> KernelMatrix:
    """Kernel of row ``i`` over all points, its spectrum and Hilbert-Schmidt norm.

    The operator is discretized as ``W^{1/2} K W^{1/2}`` with ``W`` the
    point (cell-area) weights; the Hilbert-Schmidt norm is
    ``(sum_xy w_x w_y k(x, y)^2)^{1/2}``.
    """
    a = field.row(i)
    K = a @ a.T
    if weights is None:
        weights = getattr(field.grid, "areas", None)
    w = np.ones(field.n_points) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w)
    lam, vecs = np.linalg.eigh(sw[:, None] * K * sw[None, :])
    lam, vecs = lam[::-1], vecs[:, ::-1]
    funcs = _sign_fix(vecs.T).T / sw[:, None]
    hs = math.sqrt(float(np.sum(w[:, None] * w[None, :] * K**2)))
    return KernelMatrix(K, i, w, lam, funcs, hs)


# -- serialization ------------------------------------------------------------


def save_isometry_field(field: IsometryField, path: str | Path, grid_shape=None) -> None:
    """JSON header line, then one row-major flattened ``d x d`` matrix per line."""
    header = {
        "grid_shape": list(grid_shape or getattr(field.grid, "shape", (field.n_points,))),
        "d": field.d,
        "n": field.n,
        "scheme": field.scheme,
    }
    flat = field.matrices.reshape(field.n_points, -1)
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header) + "\n")
        np.savetxt(fh, flat, fmt="%.17g", delimiter=",")


def load_isometry_field(path: str | Path, grid=None) -> IsometryField:
    with open(path) as fh:
        header = json.loads(fh.readline()[2:])
        flat = np.loadtxt(fh, delimiter=",", ndmin=2)
    d = int(header["d"])
    return IsometryField(flat.reshape(-1, d, d), int(header["n"]), header["scheme"], grid)


def save_kernel_eigenpairs(kernel: KernelMatrix, path: str | Path, n_modes: int | None = None):
    """CSV: one row per mode with the eigenvalue followed by the eigenfunction values."""
    m = kernel.eigenvalues.size if n_modes is None else n_modes
    data = np.column_stack([kernel.eigenvalues[:m], kernel.eigenfunctions[:, :m].T])
    header = "eigenvalue," + ",".join(f"x{k}" for k in range(kernel.values.shape[0]))
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")
