"""
Tests for Wasserstein distances, path-distance bounds and the continuity diagnostic.
"""
import csv
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coefficients import Gaussian, InitialDatum
from dynamics import CoupledPairEstimate, SimConfig, simulate_finite
from errors import LabelDomainError, ShapeError
from metrics import (
    ContinuityScenario,
    DTBounds,
    MeasureSnapshot,
    MetricRow,
    bootstrap_stderr,
    continuity_diagnostic,
    d_T_bounds,
    debiased_wasserstein2,
    lipschitz_gaps,
    noise_floor,
    pooled_marginal,
    wasserstein2,
    write_metric_csv,
)
from pde import SpatialGrid, densities_from_laws
from registry import resolve_coefficients, resolve_kernel

samples = st.lists(st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=1, max_size=60)


@settings(max_examples=60, deadline=None)
@given(samples, st.floats(min_value=-5, max_value=5))
def test_shift_moves_w2_by_the_shift(values, shift):
    a = np.array(values)
    assert wasserstein2(a, a + shift) == pytest.approx(abs(shift), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=1, max_value=40).flatmap(
    lambda n: st.tuples(st.lists(st.floats(-10, 10), min_size=n, max_size=n),
                        st.lists(st.floats(-10, 10), min_size=n, max_size=n))))
def test_w2_is_symmetric_and_dominates_lipschitz_gaps(pair):
    a, b = (MeasureSnapshot.from_samples(np.array(v)) for v in pair)
    distance = wasserstein2(a, b)
    assert distance == pytest.approx(wasserstein2(b, a), abs=1e-12)
    for gap in lipschitz_gaps(a, b).values():
        assert gap <= distance + 1e-9


def test_w2_of_identical_samples_is_zero():
    values = np.random.default_rng(0).normal(size=500)
    assert wasserstein2(values, values[::-1]) == 0.0


def test_unequal_sizes_use_quantile_mesh():
    assert wasserstein2(np.array([0.0, 1.0]), np.array([0.0, 0.0, 1.0, 1.0])) == pytest.approx(0.0)
    assert wasserstein2(np.array([0.0]), np.array([2.0, 2.0, 2.0])) == pytest.approx(2.0)


def test_gridded_gaussians_are_one_shift_apart():
    grid = SpatialGrid(8.0, 800)
    first, second = densities_from_laws([Gaussian(0.0, 1.0), Gaussian(1.0, 1.0)], grid)
    distance = wasserstein2(MeasureSnapshot.from_density(first, grid), MeasureSnapshot.from_density(second, grid))
    assert distance == pytest.approx(1.0, abs=0.01)


def test_gridded_against_samples():
    grid = SpatialGrid(8.0, 800)
    density = densities_from_laws([Gaussian(0.0, 1.0)], grid)[0]
    draws = np.random.default_rng(4).normal(size=20000)
    assert wasserstein2(draws, MeasureSnapshot.from_density(density, grid)) < 0.03


def test_snapshot_validation():
    grid = SpatialGrid(1.0, 10)
    with pytest.raises(ValueError):
        MeasureSnapshot()
    with pytest.raises(LabelDomainError):
        MeasureSnapshot.from_samples(np.array([]))
    with pytest.raises(LabelDomainError):
        MeasureSnapshot.from_samples(np.array([0.0, np.nan]))
    with pytest.raises(ShapeError):
        MeasureSnapshot.from_density(np.ones(10), grid)
    with pytest.raises(ShapeError):
        MeasureSnapshot.from_density(np.ones(5), grid)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=8).flatmap(
    lambda n: st.tuples(st.lists(st.floats(-10, 10), min_size=n, max_size=n),
                        st.lists(st.floats(-10, 10), min_size=n, max_size=n))))
def test_w2_matches_the_best_assignment(pair):
    a, b = (np.array(v) for v in pair)
    assignments = np.array(list(itertools.permutations(range(a.size))))
    best = float(np.min(np.mean((a[None, :] - b[assignments]) ** 2, axis=1)))
    assert wasserstein2(a, b) ** 2 == pytest.approx(best, abs=1e-9)


def test_w2_triangle_inequality():
    rng = np.random.default_rng(21)
    for trial in range(100):
        # equal or pairwise distinct sizes, so every pair uses the same formula
        sizes = [int(rng.integers(5, 60))] * 3 if trial % 2 else rng.choice(np.arange(5, 60), size=3, replace=False)
        a, b, c = (rng.normal(rng.uniform(-2, 2), rng.uniform(0.1, 2), size=int(n)) for n in sizes)
        assert wasserstein2(a, c) <= wasserstein2(a, b) + wasserstein2(b, c) + 1e-12


@pytest.mark.parametrize("first,second", [
    (Gaussian(0.0, 1.0), Gaussian(0.0, 1.0)),
    (Gaussian(0.0, 1.0), Gaussian(1.5, 1.0)),
    (Gaussian(-1.0, 0.5), Gaussian(2.0, 2.0)),
    (Gaussian(0.3, 1.0), Gaussian(0.0, 3.0)),
])
def test_w2_of_gaussian_quantile_samples_matches_closed_form(first, second):
    n = 10_000
    levels = (np.arange(n) + 0.5) / n
    rng = np.random.default_rng(8)
    a = rng.permutation(first.quantile(levels))
    b = rng.permutation(second.quantile(levels))
    exact = np.hypot(first.loc - second.loc, first.scale - second.scale)
    assert abs(wasserstein2(a, b) - exact) <= 3.0 / np.sqrt(n)


def test_noise_floor_tracks_the_same_law_distance():
    rng = np.random.default_rng(5)
    raw, floors = [], []
    for _ in range(100):
        a, b = rng.normal(size=1000), rng.normal(size=1000)
        raw.append(wasserstein2(a, b) ** 2)
        floors.append(noise_floor(a)[0] + noise_floor(b)[0])
    assert 0.6 <= np.mean(floors) / np.mean(raw) <= 1.5
    assert noise_floor(np.array([1.0]))[0] == 0.0


def test_debiased_distance_of_shifted_samples():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=2000), rng.normal(1.0, 1.0, size=2000)
    value, stderr = debiased_wasserstein2(a, b)
    assert value <= wasserstein2(a, b)
    assert value == pytest.approx(1.0, abs=0.1)
    assert 0.0 < stderr < 0.1
    assert debiased_wasserstein2(a, a[::-1]) == (0.0, 0.0)


def test_debiased_distance_is_reproducible():
    rng = np.random.default_rng(7)
    a, b = rng.normal(size=300), rng.normal(size=300)
    assert debiased_wasserstein2(a, b) == debiased_wasserstein2(a, b)


def test_dt_lower_bound_of_independent_runs_sits_below_the_raw_distance():
    kernel = resolve_kernel("fig2-step3")
    coeffs = resolve_coefficients("kuramoto")
    init = InitialDatum.uniform_law(Gaussian(0.0, 1.0))
    first = simulate_finite(kernel, coeffs, init, SimConfig(T=0.2, dt=0.01, N=600, seed=1))
    second = simulate_finite(kernel, coeffs, init, SimConfig(T=0.2, dt=0.01, N=600, seed=2))
    raw = d_T_bounds(first, second, debias=False)
    debiased = d_T_bounds(first, second)
    assert raw.lower > 0.02
    assert debiased.lower < raw.lower
    assert debiased.lower_stderr > 0.0
    assert debiased.lower <= 0.05 + 4.0 * debiased.lower_stderr


def test_bootstrap_stderr_is_reproducible():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=400), rng.normal(0.3, 1.0, size=400)
    first = bootstrap_stderr(a, b, replicates=20, seed=3)
    assert first == bootstrap_stderr(a, b, replicates=20, seed=3)
    assert 0.0 < first < 0.2


def test_dt_bounds_of_an_ensemble_against_itself():
    cfg = SimConfig(T=0.1, dt=0.01, N=100, seed=1)
    ensemble = simulate_finite(resolve_kernel("fig2-step3"), resolve_coefficients("kuramoto"),
                               InitialDatum.uniform_law(Gaussian(0.0, 1.0)), cfg)
    bounds = d_T_bounds(ensemble)
    assert bounds.lower == 0.0 and bounds.lower_stderr == 0.0
    coupled = CoupledPairEstimate(mean=0.04, stderr=0.004, replicas=10, samples=np.full(10, 0.04))
    with_upper = d_T_bounds(ensemble, coupled=coupled)
    assert with_upper.upper == pytest.approx(0.2)
    assert with_upper.upper_stderr == pytest.approx(0.01)
    assert with_upper.consistent()


def test_dt_bounds_between_blocks():
    cfg = SimConfig(T=0.2, dt=0.01, N=300, seed=1)
    kernel = resolve_kernel("fig2-step3")
    init = InitialDatum.from_blocks(kernel, [Gaussian(-2.0, 0.5), Gaussian(0.0, 0.5), Gaussian(2.0, 0.5)])
    ensemble = simulate_finite(kernel, resolve_coefficients("kuramoto"), init, cfg)
    bounds = d_T_bounds(ensemble, select_first=np.flatnonzero(ensemble.groups == 0),
                        select_second=np.flatnonzero(ensemble.groups == 2), times=[0.0, 0.1, 0.2])
    assert bounds.lower > 3.0
    assert min(abs(bounds.time_of_max - t) for t in (0.0, 0.1, 0.2)) < 1e-12
    whole_grid = d_T_bounds(ensemble, select_first=np.flatnonzero(ensemble.groups == 0),
                            select_second=np.flatnonzero(ensemble.groups == 2))
    assert whole_grid.lower >= bounds.lower
    with pytest.raises(LabelDomainError):
        d_T_bounds(ensemble, select_first=np.array([], dtype=int))


def test_inconsistent_bounds_are_flagged():
    assert not DTBounds(lower=1.0, lower_stderr=0.01, upper=0.5, upper_stderr=0.01).consistent()
    assert DTBounds(lower=1.0, lower_stderr=0.01).consistent()


def test_pooled_marginal_uses_every_particle():
    cfg = SimConfig(T=0.1, dt=0.05, N=40, seed=2)
    ensemble = simulate_finite(resolve_kernel("fig1-disconnected"), resolve_coefficients("kuramoto"),
                               InitialDatum.uniform_law(Gaussian(0.0, 1.0)), cfg)
    snapshots = pooled_marginal(ensemble, [0.0, 0.1])
    assert [s.size for s in snapshots] == [40, 40]


def test_continuity_diagnostic_orders_perturbations():
    kernel = resolve_kernel("fig2-step3")
    far = kernel.with_values(np.clip(kernel.values + 0.3, 0.0, 1.0), name="shifted")
    scenario = ContinuityScenario(
        coeffs=resolve_coefficients("kuramoto"),
        init=InitialDatum.from_blocks(kernel, [Gaussian(0.0, 1.0), Gaussian(1.0, 0.5), Gaussian(-1.0, 0.5)]),
        cfg=SimConfig(T=0.5, dt=0.01, N=300, seed=5),
    )
    report = continuity_diagnostic(kernel, [kernel, far], scenario, workers=1)
    assert report.cut_norms[0] == 0.0
    assert report.lower[0] == 0.0
    assert report.cut_norms[1] > 0.0
    assert report.lower[1] > 0.0
    assert report.c_hat == pytest.approx(report.lower[1] ** 2 / report.cut_norms[1])
    assert [row["perturbation"] for row in report.rows()] == ["fig2-step3", "shifted"]
    with pytest.raises(ShapeError):
        continuity_diagnostic(kernel, [resolve_kernel("h-4block")], scenario)


def test_metric_csv(tmp_path):
    rows = [MetricRow("E5-initial-mixing", 1.0, "w2_pooled", 0.25, 0.01),
            MetricRow("E5-initial-mixing", 0.0, "cut_norm", 0.0)]
    path = write_metric_csv(rows, tmp_path / "metrics.csv")
    with open(path) as handle:
        table = list(csv.reader(handle))
    assert table[0] == ["experiment", "t_or_T", "quantity", "value", "stderr"]
    assert table[1] == ["E5-initial-mixing", "1", "w2_pooled", "0.25", "0.01"]
    assert table[2][4] == ""
