import math

import numpy as np
import pytest

from chaosadapt.elliptic import (
    EllipticProblem,
    SolverError,
    SourceSpec,
    assemble_source,
    solve_batch,
    solve_ensemble,
    solve_pressure,
    velocity,
)
from chaosadapt.random_field import RandomFieldSpec, SpatialGrid, kl_decompose, sample_transmissivity

L = 400.0


def manufactured(n):
    """Max-norm error for u = cos(pi x / L) cos(pi y / L), kappa = 1."""
    grid = SpatialGrid(((0, L), (0, L)), (n, n))
    x, y = grid.points.T
    exact = np.cos(math.pi * x / L) * np.cos(math.pi * y / L)
    g = 2 * (math.pi / L) ** 2 * exact
    u = solve_pressure(EllipticProblem(grid, np.ones(grid.n_points), g, tol=1e-12))
    return np.abs(u - exact).max()


def reservoir_problem(n=20, seed=0):
    grid = SpatialGrid(cells=(n, n))
    kl = kl_decompose(RandomFieldSpec(), grid, n_modes=6)
    kappa = sample_transmissivity(kl, np.random.default_rng(seed).standard_normal(6))
    return EllipticProblem(grid, kappa, assemble_source(SourceSpec(), grid))


class TestSource:
    def test_antisymmetric_before_shift(self):
        grid = SpatialGrid(cells=(20, 20))
        g = assemble_source(SourceSpec(), grid, compatible=False).reshape(20, 20)
        np.testing.assert_allclose(g, -g[::-1, ::-1], atol=1e-15)

    def test_zero_amplitude(self):
        grid = SpatialGrid(cells=(8, 8))
        assert not np.any(assemble_source(SourceSpec(amplitude=0.0), grid))

    def test_compatible(self):
        grid = SpatialGrid(cells=(13, 7))
        spec = SourceSpec(source=(50.0, 30.0))
        g = assemble_source(spec, grid)
        assert abs(np.sum(g * grid.areas)) < 1e-14 * np.sum(np.abs(g) * grid.areas)

    def test_width_positive(self):
        with pytest.raises(ValueError):
            SourceSpec(widths=(0.0, 1.0))


class TestSolver:
    def test_trivial(self):
        grid = SpatialGrid(cells=(6, 6))
        u = solve_pressure(EllipticProblem(grid, np.ones(36), np.zeros(36)))
        assert not np.any(u)

    def test_scaling(self):
        p = reservoir_problem()
        u1 = solve_pressure(EllipticProblem(p.grid, np.ones(p.grid.n_points), p.source))
        u3 = solve_pressure(EllipticProblem(p.grid, 3 * np.ones(p.grid.n_points), p.source))
        np.testing.assert_allclose(u3, u1 / 3, rtol=1e-8, atol=1e-10 * np.abs(u1).max())

    def test_second_order_convergence(self):
        errs = [manufactured(n) for n in (10, 20, 40, 80)]
        rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
        assert min(rates) > 1.9

    def test_zero_mean(self):
        p = reservoir_problem(seed=3)
        u = solve_pressure(p)
        assert abs(np.sum(u * p.grid.areas) / p.grid.area) < 1e-12 * np.linalg.norm(u)

    def test_flux_balance(self):
        p = reservoir_problem(seed=4)
        v = velocity(p, solve_pressure(p))
        b = p.source * p.grid.areas
        assert np.abs(v.net_outflow() - b).max() < 10 * p.tol * np.linalg.norm(b)

    def test_boundary_fluxes_zero(self):
        p = reservoir_problem(seed=5)
        v = velocity(p, solve_pressure(p))
        assert not np.any(v.flux_x[[0, -1], :]) and not np.any(v.flux_y[:, [0, -1]])

    def test_constant_pressure_no_velocity(self):
        p = reservoir_problem()
        v = velocity(p, np.full(p.grid.n_points, 2.5))
        assert not np.any(v.cell)

    def test_rotation_antisymmetry(self):
        grid = SpatialGrid(cells=(20, 20))
        x, y = grid.points.T
        # symmetric under the 180 degree rotation about the domain center
        kappa = np.exp(0.3 * np.cos(2 * math.pi * (x - 200) / 400) * np.cos(math.pi * (y - 200) / 400))
        u = solve_pressure(EllipticProblem(grid, kappa, assemble_source(SourceSpec(), grid)))
        U = u.reshape(20, 20)
        np.testing.assert_allclose(U, -U[::-1, ::-1], atol=1e-8 * np.abs(U).max())

    def test_batch_matches_single(self):
        p = reservoir_problem()
        kappas = np.stack([p.kappa, p.kappa ** 0.5, np.ones_like(p.kappa)])
        batch = solve_batch(p.grid, kappas, p.source)
        for k in range(3):
            np.testing.assert_allclose(batch[k], solve_pressure(EllipticProblem(p.grid, kappas[k], p.source)), atol=1e-9)

    def test_non_positive_kappa(self):
        grid = SpatialGrid(cells=(4, 4))
        k = np.ones(16)
        k[3] = 0.0
        with pytest.raises(ValueError):
            EllipticProblem(grid, k, np.zeros(16))

    def test_non_convergence(self):
        p = reservoir_problem()
        with pytest.raises(SolverError):
            solve_batch(p.grid, p.kappa[None], p.source, tol=1e-10, maxiter=2)


class TestEnsemble:
    def test_thread_independent(self):
        grid = SpatialGrid(cells=(10, 10))
        kl = kl_decompose(RandomFieldSpec(), grid, n_modes=4)
        xi = np.random.default_rng(2).standard_normal((23, 4))
        g = assemble_source(SourceSpec(), grid)
        a = solve_ensemble(kl, grid, g, xi, batch_size=5, threads=1)
        b = solve_ensemble(kl, grid, g, xi, batch_size=5, threads=3)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (23, 100)
