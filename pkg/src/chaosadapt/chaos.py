"""Multi-index sets, probabilists' Hermite polynomials and truncated
Hermite chaos expansions.

Index sets are ordered graded-lexicographically: by total order first,
then by descending lexicographic order of the exponent tuples, so that
``eps_1`` precedes ``eps_2`` and ``2*eps_1`` precedes ``eps_1 + eps_2``.
The zero multi-index is always at position 0.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

ORDERING_TAG = "graded-lex"
MAX_ORDER = 10
#: Upper bound on ``d * |J_p|`` stored integers for an index set.
MAX_INDEX_ENTRIES = 50_000_000
#: Basis-matrix entries built per block when evaluating expansions.
EVAL_CHUNK_ENTRIES = 4_000_000


class IndexSetTooLarge(ValueError):
    pass


def factorial(alpha: Sequence[int]) -> int:
    """Exact multi-index factorial ``prod(alpha_i!)``."""
    out = 1
    for a in alpha:
        out *= math.factorial(int(a))
    return out


def total_order(alpha: Sequence[int]) -> int:
    return int(sum(alpha))


def _compositions(n: int, d: int) -> Iterator[tuple[int, ...]]:
    # all length-d tuples of non-negative ints summing to n, descending lex
    if d == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(n - first, d - 1):
            yield (first,) + rest


@dataclass(frozen=True, eq=False)
class IndexSet:
    """The total-order set ``J_p`` of multi-indices in ``d`` variables.

    Attributes:
        d: number of Gaussian input variables.
        p: maximum total order.
        indices: integer array of shape ``(len(self), d)``.
    """

    d: int
    p: int
    indices: np.ndarray = field(repr=False)
    _lookup: dict = field(repr=False, compare=False)

    def __len__(self) -> int:
        return self.indices.shape[0]

    def __iter__(self) -> Iterator[tuple[int, ...]]:
        for row in self.indices:
            yield tuple(int(v) for v in row)

    def __getitem__(self, i: int) -> tuple[int, ...]:
        return tuple(int(v) for v in self.indices[i])

    def __contains__(self, alpha) -> bool:
        return tuple(int(v) for v in alpha) in self._lookup

    def position(self, alpha: Sequence[int]) -> int:
        """Column position of ``alpha``; raises ``KeyError`` if absent."""
        key = tuple(int(v) for v in alpha)
        if len(key) != self.d:
            raise ValueError(f"multi-index has length {len(key)}, expected {self.d}")
        return self._lookup[key]

    @property
    def orders(self) -> np.ndarray:
        return self.indices.sum(axis=1)

    @property
    def factorials(self) -> list[int]:
        return [factorial(a) for a in self.indices]

    def order_slice(self, n: int) -> slice:
        """Contiguous column range holding all indices of total order ``n``."""
        start = math.comb(self.d + n - 1, n - 1) if n > 0 else 0
        return slice(start, math.comb(self.d + n, n))

    def unit(self, i: int, n: int = 1) -> int:
        """Position of ``n * eps_i`` (0-based variable ``i``)."""
        alpha = [0] * self.d
        alpha[i] = n
        return self.position(alpha)

    def __eq__(self, other) -> bool:
        return isinstance(other, IndexSet) and self.d == other.d and self.p == other.p

    def __hash__(self) -> int:
        return hash((self.d, self.p))


def index_set_size(d: int, p: int) -> int:
    return math.comb(d + p, p)


@lru_cache(maxsize=64)
def build_index_set(d: int, p: int, max_entries: int = MAX_INDEX_ENTRIES) -> IndexSet:
    """Build ``J_p = {alpha : |alpha| <= p}`` over ``d`` variables.

    Raises:
        ValueError: if ``d < 1``, ``p < 0`` or ``p > MAX_ORDER``.
        IndexSetTooLarge: if ``d * binomial(d + p, p)`` exceeds ``max_entries``.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if p < 0:
        raise ValueError(f"p must be >= 0, got {p}")
    if p > MAX_ORDER:
        raise ValueError(f"p = {p} exceeds the supported maximum order {MAX_ORDER}")
    size = index_set_size(d, p)
    if d * size > max_entries:
        raise IndexSetTooLarge(
            f"J_{p} in {d} variables has {size} terms ({d * size} entries > {max_entries})"
        )
    indices = np.zeros((size, d), dtype=np.int64)
    pos = 0
    for n in range(p + 1):
        for alpha in _compositions(n, d):
            indices[pos] = alpha
            pos += 1
    indices.setflags(write=False)
    lookup = {tuple(int(v) for v in row): i for i, row in enumerate(indices)}
    return IndexSet(d=d, p=p, indices=indices, _lookup=lookup)


def hermite(n: int, x):
    """Probabilists' Hermite polynomial ``h_n(x)``, via the three-term recurrence."""
    if n < 0:
        raise ValueError("n must be non-negative")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if n == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = x.copy()
    for k in range(1, n):
        h_prev, h = h, x * h - k * h_prev
    return h if h.ndim else float(h)


def hermite_table(x, p: int) -> np.ndarray:
    """Stack ``h_0(x), ..., h_p(x)`` along a new trailing axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (p + 1,))
    out[..., 0] = 1.0
    if p >= 1:
        out[..., 1] = x
    for k in range(1, p):
        out[..., k + 1] = x * out[..., k] - k * out[..., k - 1]
    return out


def psi(alpha: Sequence[int], xi) -> float:
    """Normalized multivariate Hermite polynomial ``h_alpha(xi) / sqrt(alpha!)``."""
    alpha = [int(a) for a in alpha]
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != len(alpha):
        raise ValueError(f"xi has dimension {xi.shape[-1]}, alpha has {len(alpha)}")
    val = np.ones(xi.shape[:-1])
    for i, a in enumerate(alpha):
        if a:
            val = val * hermite(a, xi[..., i])
    val = val / math.sqrt(factorial(alpha))
    return val if np.ndim(val) else float(val)


def psi_matrix(index_set: IndexSet, xi) -> np.ndarray:
    """Evaluate every basis function at every sample.

    Args:
        index_set: basis index set over ``d`` variables.
        xi: samples of shape ``(n_samples, d)``.

    Returns:
        Array of shape ``(n_samples, len(index_set))``.
    """
    return psi_columns(index_set.indices, xi)


def psi_columns(indices, xi) -> np.ndarray:
    """``psi_alpha(xi)`` for each row ``alpha`` of ``indices`` (shape ``(m, d)``)."""
    indices = np.atleast_2d(np.asarray(indices, dtype=np.int64))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape[1] != indices.shape[1]:
        raise ValueError(f"samples have dimension {xi.shape[1]}, expected {indices.shape[1]}")
    p = int(indices.max()) if indices.size else 0
    table = hermite_table(xi, p)  # (n, d, p+1)
    out = np.empty((xi.shape[0], indices.shape[0]))
    for j, alpha in enumerate(indices):
        col = np.ones(xi.shape[0])
        for i in np.flatnonzero(alpha):
            col = col * table[:, i, alpha[i]]
        out[:, j] = col / math.sqrt(factorial(alpha))
    return out


def standard_normal(n: int, d: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. standard normal draws in ``d`` dimensions from a seeded generator."""
    return np.random.default_rng(seed).standard_normal((n, d))


@dataclass(frozen=True)
class GaussianSample:
    values: np.ndarray
    seed: int | None = None

    @classmethod
    def draw(cls, d: int, seed: int) -> "GaussianSample":
        return cls(standard_normal(1, d, seed)[0], seed)


@dataclass(frozen=True)
class ChaosExpansion:
    """Coefficient field ``u_alpha(x)`` on a set of points.

    ``coeffs[k, j]`` is the coefficient of ``psi_{index_set[j]}`` at point ``k``.
    """

    index_set: IndexSet
    coeffs: np.ndarray
    grid: object | None = None

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if c.shape[1] != len(self.index_set):
            raise ValueError(
                f"coefficient matrix has {c.shape[1]} columns, index set has {len(self.index_set)}"
            )
        object.__setattr__(self, "coeffs", c)

    @property
    def d(self) -> int:
        return self.index_set.d

    @property
    def p(self) -> int:
        return self.index_set.p

    @property
    def n_points(self) -> int:
        return self.coeffs.shape[0]

    def __call__(self, xi, point: int | None = None) -> np.ndarray:
        """Evaluate at samples ``xi`` (shape ``(n, d)``) for one point or all points."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        c = self.coeffs.T if point is None else self.coeffs[self._check_point(point)]
        step = max(1, EVAL_CHUNK_ENTRIES // max(len(self.index_set), 1))
        parts = [psi_matrix(self.index_set, xi[s : s + step]) @ c for s in range(0, xi.shape[0], step)]
        return np.concatenate(parts) if parts else np.zeros((0,) + c.shape[1:])

    def _check_point(self, point: int) -> int:
        if not -self.n_points <= point < self.n_points:
            raise IndexError(f"point index {point} out of range for {self.n_points} points")
        return point

    def at(self, points) -> "ChaosExpansion":
        """Restriction to a subset of points."""
        return ChaosExpansion(self.index_set, self.coeffs[np.atleast_1d(points)], None)

    def first_order(self) -> np.ndarray:
        """First-order coefficients ``u_{eps_i}``, shape ``(n_points, d)``."""
        return self.coeffs[:, self.index_set.order_slice(1)] if self.p >= 1 else np.zeros(
            (self.n_points, self.d)
        )


def eval_expansion(e: ChaosExpansion, xi, point: int) -> float:
    """``sum_alpha u_alpha(x) psi_alpha(xi)`` at one point and one sample."""
    xi = np.asarray(getattr(xi, "values", xi), dtype=float)
    if xi.shape != (e.d,):
        raise ValueError(f"sample has shape {xi.shape}, expected ({e.d},)")
    return float(e(xi[None, :], point)[0])


def moments(e: ChaosExpansion, point: int | None = None):
    """Mean and variance from orthonormality: ``(u_0, sum_{alpha != 0} u_alpha^2)``."""
    c = e.coeffs if point is None else e.coeffs[e._check_point(point)]
    mean = c[..., 0]
    var = np.sum(c[..., 1:] ** 2, axis=-1)
    if point is not None:
        return float(mean), float(var)
    return mean, var


# -- serialization -----------------------------------------------------------


def save_expansion(e: ChaosExpansion, path: str | Path, grid_shape=None) -> None:
    """Write a JSON header line followed by CSV coefficient rows.

    Format::

        # {"d": 3, "p": 2, "ordering": "graded-lex", "grid_shape": [4, 5], "n_terms": 10}
        alpha_0,alpha_1,...        (column labels, multi-indices joined by '-')
        u_0(x_0),u_1(x_0),...      (one row per point, %.17g)
    """
    if grid_shape is None and e.grid is not None:
        grid_shape = list(getattr(e.grid, "shape", ())) or None
    header = {
        "d": e.d,
        "p": e.p,
        "ordering": ORDERING_TAG,
        "grid_shape": list(grid_shape) if grid_shape is not None else [e.n_points],
        "n_terms": len(e.index_set),
    }
    labels = ",".join(multi_index_label(a) for a in e.index_set)
    buf = io.StringIO()
    np.savetxt(buf, e.coeffs, fmt="%.17g", delimiter=",")
    Path(path).write_text("# " + json.dumps(header) + "\n" + labels + "\n" + buf.getvalue())


def load_expansion(path: str | Path, grid=None) -> ChaosExpansion:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing JSON header")
        header = json.loads(first[2:])
        if header.get("ordering") != ORDERING_TAG:
            raise ValueError(f"{path}: unsupported ordering {header.get('ordering')!r}")
        fh.readline()
        coeffs = np.loadtxt(fh, delimiter=",", ndmin=2)
    iset = build_index_set(int(header["d"]), int(header["p"]))
    return ChaosExpansion(iset, coeffs.reshape(-1, len(iset)), grid)


def multi_index_label(alpha: Sequence[int]) -> str:
    return "-".join(str(int(a)) for a in alpha)
