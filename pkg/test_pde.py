"""
Tests for the finite-volume Fokker-Planck solver.
"""
import csv

import numpy as np
import pytest

from coefficients import CoefficientSet, Gaussian, InitialDatum, PointMass, unit_scalar, zero_pairwise
from dynamics import SimConfig, simulate_finite
from errors import ConfigError, ShapeError, StabilityError
from graphon import ConstantKernel, StepKernel, split_block
from metrics import MeasureSnapshot, wasserstein2
from pde import (
    SpatialGrid,
    default_half_width,
    densities_from_laws,
    initial_densities,
    solve_fp_system,
    solve_mckean_vlasov,
    split_block_refinement_check,
    write_density_csv,
)
from registry import resolve_coefficients, resolve_kernel


@pytest.fixture
def grid():
    return SpatialGrid(8.0, 200)


def _moment(grid, density, power):
    return float(grid.h * np.sum(grid.centers ** power * density))


def test_grid_geometry():
    grid = SpatialGrid(4.0, 100)
    assert grid.h == pytest.approx(0.08)
    assert grid.faces[0] == -4.0 and grid.faces[-1] == pytest.approx(4.0)
    assert grid.centers.size == 100
    assert grid.refine().M == 200
    assert grid.widen().h == pytest.approx(grid.h)
    with pytest.raises(ShapeError):
        SpatialGrid(4.0, 4)


def test_initial_densities_have_unit_mass(grid):
    densities = densities_from_laws([Gaussian(0.0, 1.0), PointMass(9.0)], grid)
    assert np.allclose(grid.h * densities.sum(axis=1), 1.0, atol=1e-14)
    assert densities[1, -1] == pytest.approx(1.0 / grid.h)


def test_mass_and_positivity_are_preserved(grid):
    kernel = resolve_kernel("fig2-step3")
    init = InitialDatum.from_blocks(kernel, [Gaussian(0.0, 1.0), Gaussian(1.0, 0.5), Gaussian(-1.0, 0.5)])
    solution = solve_fp_system(kernel, resolve_coefficients("kuramoto"), initial_densities(kernel, init, grid),
                               grid, T=0.5, dt=0.005)
    assert np.all(np.abs(solution.masses() - 1.0) <= 1e-10)
    assert solution.densities.min() >= 0.0
    assert solution.times[-1] == pytest.approx(0.5)
    assert solution.densities.shape == (101, 3, 200)


def test_heat_equation_variance(grid):
    heat = resolve_coefficients("heat")
    solution = solve_mckean_vlasov(0.0, heat, Gaussian(0.0, 0.5), grid, T=1.0, dt=0.01)
    final = solution.final()[0]
    assert _moment(grid, final, 1) == pytest.approx(0.0, abs=1e-10)
    assert _moment(grid, final, 2) == pytest.approx(1.25, abs=0.01)


def _heat_l1_error(M, T=0.5, dt=1e-4):
    grid = SpatialGrid(8.0, M)
    solution = solve_mckean_vlasov(0.0, resolve_coefficients("heat"), Gaussian(0.0, 0.5), grid, T=T, dt=dt)
    exact = densities_from_laws([Gaussian(0.0, float(np.sqrt(0.25 + T)))], grid)[0]
    return float(grid.h * np.sum(np.abs(solution.final()[0] - exact)))


def test_heat_equation_matches_the_gaussian_solution():
    assert _heat_l1_error(400) <= 1e-3


def test_heat_error_falls_under_grid_refinement():
    assert _heat_l1_error(100) / _heat_l1_error(200) >= 1.8


def test_doubling_the_domain_leaves_the_interior_unchanged():
    kuramoto = resolve_coefficients("kuramoto")
    grid = SpatialGrid(8.0, 200)
    wide = grid.widen()
    assert wide.h == pytest.approx(grid.h)
    narrow = solve_mckean_vlasov(1.0, kuramoto, Gaussian(0.0, 1.0), grid, T=0.5, dt=0.01)
    widened = solve_mckean_vlasov(1.0, kuramoto, Gaussian(0.0, 1.0), wide, T=0.5, dt=0.01)
    interior = widened.final()[0][grid.M // 2:grid.M // 2 + grid.M]
    assert np.allclose(interior, narrow.final()[0], rtol=0.0, atol=1e-10)


def test_odd_interaction_keeps_a_symmetric_density_symmetric(grid):
    solution = solve_mckean_vlasov(0.7, resolve_coefficients("kuramoto"), Gaussian(0.0, 1.0),
                                   grid, T=0.5, dt=0.01)
    assert np.allclose(solution.densities, solution.densities[..., ::-1], rtol=0.0, atol=1e-10)


def test_constant_drift_moves_the_mean(grid):
    shift = CoefficientSet(name="shift", drift=lambda theta: np.ones_like(theta), interaction=zero_pairwise,
                           diffusion=unit_scalar, lipschitz={}, bounds={"drift": 1.0}, zero_interaction=True)
    solution = solve_mckean_vlasov(0.0, shift, Gaussian(0.0, 0.5), grid, T=1.0, dt=0.01)
    assert _moment(grid, solution.final()[0], 1) == pytest.approx(1.0, abs=0.01)


def test_zero_diffusion_uses_upwind_fluxes(grid):
    solution = solve_mckean_vlasov(1.0, resolve_coefficients("kuramoto-deterministic"), Gaussian(0.0, 1.0),
                                   grid, T=0.5, dt=0.01)
    assert np.all(np.abs(solution.masses() - 1.0) <= 1e-10)
    assert solution.densities.min() >= 0.0


def test_identical_rows_give_identical_densities(grid):
    kernel = StepKernel.equipartition([[0.5, 0.5], [0.5, 0.5]])
    init = InitialDatum.uniform_law(Gaussian(0.5, 1.0))
    solution = solve_fp_system(kernel, resolve_coefficients("kuramoto"), initial_densities(kernel, init, grid),
                               grid, T=0.3, dt=0.01)
    assert np.array_equal(solution.densities[:, 0], solution.densities[:, 1])


def test_constant_degree_kernel_matches_mckean_vlasov(grid):
    kuramoto = resolve_coefficients("kuramoto")
    law = Gaussian(0.5, 1.0)
    kernel = resolve_kernel("fig1-disconnected")
    blocks = solve_fp_system(kernel, kuramoto, initial_densities(kernel, InitialDatum.uniform_law(law), grid),
                             grid, T=0.5, dt=0.01)
    reference = solve_mckean_vlasov(1.0 / 3.0, kuramoto, law, grid, T=0.5, dt=0.01)
    for block in range(2):
        assert np.allclose(blocks.densities[:, block], reference.densities[:, 0], atol=1e-10)


def test_split_block_refinement_reproduces_parents():
    kernel = resolve_kernel("fig2-step3")
    assert split_block_refinement_check(kernel, 1, 0.3, T=0.2, dt=0.01)
    refined = split_block(kernel, 1, 0.3)
    distorted = refined.with_values(refined.values * 0.5)
    assert not split_block_refinement_check(kernel, 1, 0.3, refined=distorted, T=0.2, dt=0.01)
    with pytest.raises(ShapeError):
        split_block_refinement_check(kernel, 1, 0.3, refined=kernel)


@pytest.mark.parametrize("seed", range(10))
def test_split_block_refinement_on_random_kernels(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 5))
    values = rng.uniform(0.0, 1.0, size=(k, k))
    breakpoints = np.concatenate([[0.0], np.sort(rng.uniform(0.1, 0.9, size=k - 1)), [1.0]])
    if np.min(np.diff(breakpoints)) < 0.02:
        breakpoints = np.linspace(0.0, 1.0, k + 1)
    kernel = StepKernel(breakpoints, np.triu(values) + np.triu(values, 1).T)
    index = int(rng.integers(0, k))
    assert split_block_refinement_check(kernel, index, float(rng.uniform(0.2, 0.8)), T=0.2, dt=0.01)


def test_courant_violation_is_reported_with_a_suggestion(grid):
    with pytest.raises(StabilityError) as info:
        solve_mckean_vlasov(1.0, resolve_coefficients("kuramoto"), Gaussian(0.0, 1.0), grid, T=1.0, dt=0.5)
    assert info.value.suggested_dt < grid.h


def test_invalid_inputs(grid):
    kuramoto = resolve_coefficients("kuramoto")
    with pytest.raises(ConfigError):
        solve_mckean_vlasov(1.0, kuramoto, Gaussian(0.0, 1.0), grid, T=1.0, dt=0.3)
    with pytest.raises(ConfigError):
        solve_mckean_vlasov(1.5, kuramoto, Gaussian(0.0, 1.0), grid, T=1.0, dt=0.1)
    with pytest.raises(ShapeError):
        solve_fp_system(ConstantKernel(0.5), kuramoto, np.zeros((1, grid.M)), grid, T=1.0, dt=0.1)
    with pytest.raises(ShapeError):
        solve_fp_system(resolve_kernel("fig1-cayley"), kuramoto, np.zeros((1, grid.M)), grid, T=1.0, dt=0.1)


def test_default_half_width_covers_the_dynamics():
    width = default_half_width([Gaussian(1.0, 0.5)], resolve_coefficients("kuramoto"), T=2.0)
    assert width == pytest.approx(1.0 + 8.0 * (0.5 + 1.0) * 2.0)
    shifted = default_half_width([Gaussian(5.0, 0.5)], resolve_coefficients("kuramoto"), T=2.0)
    assert shifted - 5.0 == pytest.approx(width - 1.0)


def test_density_csv(tmp_path, grid):
    solution = solve_mckean_vlasov(0.5, resolve_coefficients("kuramoto"), Gaussian(0.0, 1.0), grid,
                                   T=0.1, dt=0.01, snapshot_every=5)
    assert solution.times.tolist() == pytest.approx([0.0, 0.05, 0.1])
    path = write_density_csv(solution, tmp_path / "density.csv", times=[0.0, 0.1])
    with open(path) as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["time", "block", "cell_center", "density"]
    assert len(rows) == 1 + 2 * grid.M
    with pytest.raises(ShapeError):
        solution.density(0, 0.07)


@pytest.mark.slow
def test_particles_converge_to_pde_marginal():
    grid = SpatialGrid(8.0, 400)
    kuramoto = resolve_coefficients("kuramoto")
    init = InitialDatum.uniform_law(Gaussian(0.5, 1.0))
    pde = solve_mckean_vlasov(1.0 / 3.0, kuramoto, init.distributions[0], grid, T=1.0, dt=0.001)
    particles = simulate_finite(ConstantKernel(1.0 / 3.0), kuramoto, init, SimConfig(T=1.0, dt=0.001, N=4000, seed=3))
    distance = wasserstein2(particles.marginal(1.0), MeasureSnapshot.from_density(pde.final()[0], grid))
    assert distance < 0.06
