"""Acceptance suite: one pass/fail line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` (the lines are also repeated
in the terminal summary) or directly with ``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import kstest

from acceptance_report import report
from chaosadapt.adaptation import eta_kernel, pure_retained, quadratic_form
from chaosadapt.chaos import ChaosExpansion, build_index_set
from chaosadapt.elliptic import EllipticProblem, SourceSpec, assemble_source, solve_pressure, velocity
from chaosadapt.geometric import compare_pdfs, sample_variants, truncated_adapted_coeffs
from chaosadapt.pipeline import Pipeline, desk_config
from chaosadapt.random_coeffs import expected_adapted_coefficients, regroup, sample_eta
from chaosadapt.random_field import RandomFieldSpec, SpatialGrid, kl_decompose, sample_transmissivity
from chaosadapt.rotation import gram_entry, gram_entry_1d, gram_matrix, rotate_coefficients
from oracles import geometric_series_mp, quad_gram_matrix, random_orthogonal

L = 400.0


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    """Elliptic run at 20 x 20, d = 10, p = 3, N = 10^4 with both schemes."""
    t0 = time.perf_counter()
    pipe = Pipeline(desk_config(out=str(tmp_path_factory.mktemp("desk"))))
    pipe.pdfs()
    pipe.elapsed = time.perf_counter() - t0
    return pipe


def random_expansion(d, p, seed):
    iset = build_index_set(d, p)
    return ChaosExpansion(iset, np.random.default_rng(seed).standard_normal((1, len(iset))))


def test_01_index_set_cardinality():
    t0 = time.perf_counter()
    n = len(build_index_set(20, 3))
    dt = time.perf_counter() - t0
    assert report(1, "index-set cardinality", n == 1771 and dt < 1, f"{n} terms in {dt:.3f} s")


def test_02_rotation_exactness():
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(2)
    for k in range(20):
        d, p = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        e = random_expansion(d, p, 100 + k)
        A = random_orthogonal(d, 100 + k)
        xi = rng.standard_normal((1000, d))
        ref = e(xi, 0)
        got = rotate_coefficients(e, A)(xi @ A.T, 0)
        worst = max(worst, np.abs(got - ref).max() / np.abs(ref).max())
    dt = time.perf_counter() - t0
    assert report(2, "rotation exactness", worst < 1e-9 and dt < 10, f"max rel err {worst:.2e}, {dt:.1f} s")


def test_03_gram_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(20):
        d, p = 1 + k % 3, 1 + (k // 3) % 3
        iset = build_index_set(d, p)
        A = random_orthogonal(d, 300 + k)
        oracle = quad_gram_matrix(iset, A, p + 2)
        got = np.array([[gram_entry(a, b, A) for b in iset] for a in iset])
        worst = max(worst, np.abs(got - oracle).max())
    # the full-size case on its own: every (alpha, beta) at d = p = 3
    for k in range(20):
        iset = build_index_set(3, 3)
        A = random_orthogonal(3, 400 + k)
        worst = max(worst, np.abs(gram_matrix(iset, A) - quad_gram_matrix(iset, A, 5)).max())
    dt = time.perf_counter() - t0
    assert report(3, "Gram entries vs quadrature", worst < 1e-8 and dt < 60, f"max abs err {worst:.2e}, {dt:.1f} s")


def test_04_fast_path():
    t0 = time.perf_counter()
    worst = 0.0
    for d in (1, 2, 3, 4):
        iset = build_index_set(d, 4)
        for seed in range(5):
            A = random_orthogonal(d, 500 + 10 * d + seed)
            for alpha in iset:
                n = int(sum(alpha))
                for i in range(d):
                    beta = [0] * d
                    beta[i] = n
                    worst = max(worst, abs(gram_entry_1d(alpha, n, i, A, normalized=True) - gram_entry(alpha, beta, A)))
    dt = time.perf_counter() - t0
    assert report(4, "single-variable fast path", worst < 1e-12 and dt < 5, f"max abs err {worst:.2e}, {dt:.1f} s")


def test_05_gaussian_first_coefficient(desk):
    e = desk.expansion()
    ad = desk.adapted("gaussian")
    norm = np.linalg.norm(e.first_order(), axis=1)
    err = np.abs(ad.coeffs[:, 1] - norm).max()
    assert report(5, "Gaussian first coefficient is the first-order norm", err < 1e-12, f"max abs err {err:.2e} over {len(norm)} points")


def test_06_quadratic_reconstruction(desk):
    e = desk.expansion()
    field = desk.isometry("quadratic")
    S, A, lam = quadratic_form(e), field.matrices, field.spectrum
    recon = np.abs(S - np.einsum("pki,pk,pkj->pij", A, lam, A)).max()
    n = field.n
    second = desk.adapted("quadratic").coeffs[:, 1 + n :]
    target = math.sqrt(2) * lam[:, :n]
    rel = (np.abs(second - target).max(axis=1) / np.abs(target).max(axis=1)).max()
    ok = recon < 1e-10 and rel < 1e-10
    assert report(6, "quadratic reconstruction and proportionality", ok, f"recon {recon:.2e}, rel dev {rel:.2e}")


def test_07_kernel_rank_and_diagonal(desk):
    t0 = time.perf_counter()
    k = eta_kernel(desk.isometry("gaussian"), 0, desk.grid.areas)
    diag = np.abs(np.diag(k.values) - 1).max()
    rank = k.rank(1e-10)
    dt = time.perf_counter() - t0
    ok = rank == 10 and diag < 1e-12 and dt < 30
    assert report(7, "eta_1 kernel rank and unit diagonal", ok, f"rank {rank}, diag err {diag:.2e}, {dt:.1f} s")


def test_08_kl_mode_count():
    t0 = time.perf_counter()
    kl = kl_decompose(RandomFieldSpec(0.5, (80.0, 80.0)), SpatialGrid(), 0.97)
    dt = time.perf_counter() - t0
    ok = abs(kl.n_modes - 20) <= 2 and dt < 60
    assert report(8, "KL mode count at 97% energy", ok, f"{kl.n_modes} modes, {dt:.1f} s")


def _manufactured_error(n):
    grid = SpatialGrid(((0, L), (0, L)), (n, n))
    x, y = grid.points.T
    exact = np.cos(math.pi * x / L) * np.cos(math.pi * y / L)
    g = 2 * (math.pi / L) ** 2 * exact
    u = solve_pressure(EllipticProblem(grid, np.ones(grid.n_points), g, tol=1e-12))
    return np.abs(u - exact).max()


def test_09_pde_correctness():
    t0 = time.perf_counter()
    rate = math.log2(_manufactured_error(20) / _manufactured_error(40))
    grid = SpatialGrid(cells=(40, 40))
    kl = kl_decompose(RandomFieldSpec(), grid, 0.97)
    kappa = sample_transmissivity(kl, np.random.default_rng(9).standard_normal(kl.n_modes))
    prob = EllipticProblem(grid, kappa, assemble_source(SourceSpec(), grid))
    u = solve_pressure(prob)
    mean = abs(np.sum(u * grid.areas)) / grid.area
    v = velocity(prob, u)
    b = prob.source * grid.areas
    flux = np.abs(v.net_outflow() - b).max() / np.linalg.norm(b)
    dt = time.perf_counter() - t0
    ok = rate >= 1.8 and mean < 1e-12 * np.linalg.norm(u) and flux < 10 * prob.tol and dt < 60
    assert report(9, "PDE convergence and invariants", ok, f"order {rate:.3f}, mean {mean:.1e}, flux {flux:.1e}, {dt:.1f} s")


def test_10_pdf_agreement(desk):
    rows = desk.pdfs()
    quad = {r["probe"]: r["l1"] for r in rows if r["variant"] == "quadratic"}
    gauss = {r["probe"]: r["l1"] for r in rows if r["variant"] == "gaussian"}
    wins = sum(quad[k] <= gauss[k] for k in quad)
    worst = max(quad.values())
    ok = len(quad) == 9 and worst < 0.15 and wins >= 7 and desk.elapsed < 900
    detail = f"max quadratic L1 {worst:.3f}, quadratic <= Gaussian at {wins}/9, {desk.elapsed:.0f} s"
    assert report(10, "desk-scale pdf agreement", ok, detail)


def test_11_geometric_benchmark():
    t0 = time.perf_counter()
    coeff_err = max(
        abs(a - b)
        for x in (0.3, 0.9, 0.99)
        for d in (1, 10, 50, 100)
        for a, b in zip(truncated_adapted_coeffs(x, d), geometric_series_mp(x, d))
    )
    N, ordered, var_err, lines = 100_000, True, 0.0, []
    for i, x in enumerate((0.9, 0.99)):
        for j, d in enumerate((10, 50, 100)):
            c = compare_pdfs(x, d, N, seed=1000 + 10 * i + j)
            ordered &= c.l1_after < c.l1_before
            lines.append(f"x={x} d={d}: {c.l1_before:.3g}>{c.l1_after:.3g}")
            s = sample_variants(x, d, N, seed=2000 + 10 * i + j)
            var_err = max(var_err, abs(s.eta_hat.var() - (1 - x**d)) / (4 / math.sqrt(N)))
    dt = time.perf_counter() - t0
    ok = coeff_err < 1e-12 and ordered and var_err < 1 and dt < 300
    detail = f"coeff err {coeff_err:.1e}, L1 {'; '.join(lines)}, var err {var_err:.2f} x tol, {dt:.0f} s"
    assert report(11, "geometric benchmark", ok, detail)


def test_12_random_coefficients(desk):
    t0 = time.perf_counter()
    e = desk.expansion()
    se = regroup(e, (0, 1, 2, 3))
    N = 100_000
    rng = np.random.default_rng(12)
    center = int(desk.probes[len(desk.probes) // 2])
    eta = sample_eta(se, center, rng.standard_normal((N, se.d1)), rng.standard_normal((N, se.d2)), "gaussian", 1)
    ks = kstest(eta[:, 0], "norm")
    zetas = rng.standard_normal((2000, se.d2))
    ec = expected_adapted_coefficients(se, zetas, "gaussian", 1, pure_retained(1, 2, se.d1))
    z = np.abs(ec.mean[:, 0] - e.coeffs[:, 0]) / ec.stderr[:, 0]
    dt = time.perf_counter() - t0
    ok = ks.pvalue > 0.01 and ks.statistic < 1.63 / math.sqrt(N) and z.max() < 5 and dt < 300
    detail = f"KS D {ks.statistic:.4f} (p {ks.pvalue:.2f}), max |E U0 - u0| {z.max():.2f} SE, {dt:.0f} s"
    assert report(12, "random-coefficient marginal and mean", ok, detail)


if __name__ == "__main__":
    sys.exit(pytest.main([str(Path(__file__)), "-q", "-s"]))
