"""
Tests for the particle simulators and the coupled pair.
"""
import csv

import numpy as np
import pytest
from pydantic import ValidationError

from coefficients import CoefficientSet, Gaussian, InitialDatum, PointMass, unit_scalar, zero_pairwise
from dynamics import (
    SUMMARY_COLUMNS,
    SimConfig,
    coupled_pair,
    sample_graph,
    simulate_finite,
    simulate_reduced,
    write_state_snapshot,
    write_trajectory_summary,
)
from errors import NumericalBlowupError, PartitionError, ShapeError
from graphon import ConstantKernel, StepKernel
from metrics import wasserstein2
from registry import resolve_coefficients, resolve_kernel


@pytest.fixture
def gaussian_datum():
    return InitialDatum.uniform_law(Gaussian(0.0, 1.0))


@pytest.fixture
def kuramoto():
    return resolve_coefficients("kuramoto")


def test_sim_config_time_grid():
    cfg = SimConfig(T=1.0, dt=0.001, N=10, seed=1)
    assert cfg.n_steps == 1000
    assert cfg.step == pytest.approx(0.001)
    with pytest.raises(ValidationError):
        SimConfig(T=1.0, dt=0.3)
    with pytest.raises(ValidationError):
        SimConfig(T=1.0, dt=0.1, N=0)
    with pytest.raises(ValidationError):
        SimConfig(T=1.0, dt=0.1, unknown=3)


def test_config_hash_tracks_every_field():
    first = SimConfig(T=1.0, dt=0.01, N=10, seed=1)
    assert first.config_hash() == SimConfig(T=1.0, dt=0.01, N=10, seed=1).config_hash()
    assert first.config_hash() != SimConfig(T=1.0, dt=0.01, N=10, seed=2).config_hash()


def test_simulation_is_bitwise_reproducible(kuramoto, gaussian_datum):
    cfg = SimConfig(T=0.2, dt=0.01, N=200, seed=42)
    kernel = resolve_kernel("fig2-step3")
    first = simulate_finite(kernel, kuramoto, gaussian_datum, cfg)
    second = simulate_finite(kernel, kuramoto, gaussian_datum, cfg)
    assert np.array_equal(first.states, second.states)
    assert first.states.shape == (200, 21)
    assert first.provenance["config_hash"] == cfg.config_hash()
    other_seed = simulate_finite(kernel, kuramoto, gaussian_datum, cfg.model_copy(update={"seed": 43}))
    assert not np.array_equal(first.states, other_seed.states)


def test_zero_coefficients_freeze_states(gaussian_datum):
    cfg = SimConfig(T=0.1, dt=0.01, N=50, seed=3)
    ensemble = simulate_finite(ConstantKernel(0.5), resolve_coefficients("zero"), gaussian_datum, cfg)
    assert np.array_equal(ensemble.states[:, 0], ensemble.states[:, -1])


def test_heat_equation_variance_grows_linearly():
    cfg = SimConfig(T=1.0, dt=0.01, N=20000, seed=5)
    ensemble = simulate_finite(ConstantKernel(1.0), resolve_coefficients("heat"),
                               InitialDatum.uniform_law(PointMass(0.0)), cfg)
    final = ensemble.marginal(1.0)
    assert abs(final.mean()) < 0.05
    assert final.var() == pytest.approx(1.0, abs=0.05)


@pytest.mark.parametrize("kernel_name", ["fig2-step3", "fig1-cayley"])
def test_bounded_coefficients_bound_the_displacement(kernel_name):
    deterministic = resolve_coefficients("kuramoto-deterministic")
    cosine = CoefficientSet(name="cosine-kuramoto", drift=np.cos, interaction=deterministic.interaction,
                            diffusion=deterministic.diffusion, lipschitz={"drift": 1.0, "interaction": 1.0},
                            bounds={"drift": 1.0, "interaction": 1.0, "diffusion": 0.0},
                            separable=deterministic.separable, zero_diffusion=True)
    T = 0.5
    ensemble = simulate_finite(resolve_kernel(kernel_name), cosine, InitialDatum.uniform_law(Gaussian(0.0, 2.0)),
                               SimConfig(T=T, dt=0.01, N=200, seed=3))
    displacement = np.abs(ensemble.states - ensemble.states[:, :1])
    assert np.all(displacement <= 2.0 * ensemble.times[None, :] + 1e-12)


def _two_cluster_gap(dt):
    # two equal clusters under full Kuramoto coupling: the gap g solves g' = -sin(g)
    init = InitialDatum.from_breakpoints([0.0, 0.5, 1.0], [PointMass(0.0), PointMass(np.pi / 2)])
    ensemble = simulate_finite(ConstantKernel(1.0), resolve_coefficients("kuramoto-deterministic"), init,
                               SimConfig(T=1.0, dt=dt, N=2000, seed=1))
    gap = 2.0 * np.arctan(np.exp(-ensemble.times))
    low = ensemble.states[ensemble.labels < 0.5]
    high = ensemble.states[ensemble.labels > 0.5]
    assert np.ptp(low, axis=0).max() == 0.0 and np.ptp(high, axis=0).max() == 0.0
    error = np.maximum(np.abs(low[0] - (np.pi / 2 - gap) / 2), np.abs(high[0] - (np.pi / 2 + gap) / 2))
    return ensemble, float(error.max())


def test_two_clusters_follow_the_reduced_ode():
    ensemble, fine = _two_cluster_gap(0.001)
    _, coarse = _two_cluster_gap(0.002)
    assert fine <= 1e-3
    assert fine < 0.75 * coarse
    high = ensemble.states[ensemble.labels > 0.5][0]
    low = ensemble.states[ensemble.labels < 0.5][0]
    assert np.all(np.diff(high - low) < 0.0)


def test_equispaced_and_random_labels(kuramoto, gaussian_datum):
    cfg = SimConfig(T=0.05, dt=0.01, N=100, seed=8, label_mode="uniform-random")
    ensemble = simulate_finite(ConstantKernel(0.5), kuramoto, gaussian_datum, cfg)
    assert np.all(np.diff(ensemble.labels) >= 0.0)
    assert ensemble.labels.min() > 0.0 and ensemble.labels.max() < 1.0
    equispaced = simulate_finite(ConstantKernel(0.5), kuramoto, gaussian_datum,
                                 cfg.model_copy(update={"label_mode": "equispaced"}))
    assert equispaced.labels[0] == pytest.approx(0.005)


def test_step_kernel_groups_are_blocks(kuramoto, gaussian_datum):
    cfg = SimConfig(T=0.05, dt=0.01, N=90, seed=2)
    ensemble = simulate_finite(resolve_kernel("fig2-step3"), kuramoto, gaussian_datum, cfg)
    assert ensemble.group_ids() == [0, 1, 2]
    assert [int(np.sum(ensemble.groups == b)) for b in range(3)] == [30, 30, 30]
    assert ensemble.marginal(0.05, group=1).size == 30


def test_off_grid_time_is_rejected(kuramoto, gaussian_datum):
    cfg = SimConfig(T=0.1, dt=0.01, N=10, seed=2)
    ensemble = simulate_finite(ConstantKernel(0.5), kuramoto, gaussian_datum, cfg)
    with pytest.raises(ShapeError):
        ensemble.marginal(0.5)


def test_constant_and_equivalent_step_kernel_agree(kuramoto, gaussian_datum):
    cfg = SimConfig(T=0.3, dt=0.01, N=120, seed=9)
    constant = simulate_finite(ConstantKernel(0.4), kuramoto, gaussian_datum, cfg)
    blocks = simulate_finite(StepKernel.equipartition(np.full((3, 3), 0.4)), kuramoto, gaussian_datum, cfg)
    assert np.allclose(constant.states, blocks.states, atol=1e-10)


def test_separable_and_pairwise_interaction_agree(kuramoto, gaussian_datum):
    pairwise = CoefficientSet(name="kuramoto-pairwise", drift=kuramoto.drift, interaction=kuramoto.interaction,
                              diffusion=kuramoto.diffusion, lipschitz=kuramoto.lipschitz, bounds=kuramoto.bounds)
    cfg = SimConfig(T=0.2, dt=0.01, N=300, seed=4)
    kernel = resolve_kernel("fig2-step3")
    fast = simulate_finite(kernel, kuramoto, gaussian_datum, cfg)
    slow = simulate_finite(kernel, pairwise, gaussian_datum, cfg)
    assert np.allclose(fast.states, slow.states, atol=1e-10)


def test_analytic_kernel_uses_dense_weights(kuramoto, gaussian_datum):
    cfg = SimConfig(T=0.1, dt=0.01, N=100, seed=4)
    ensemble = simulate_finite(resolve_kernel("fig1-cayley"), kuramoto, gaussian_datum, cfg)
    assert np.all(np.isfinite(ensemble.states))
    assert ensemble.group_ids() == [0]


def test_stream_index_makes_particles_exchangeable(kuramoto, gaussian_datum):
    cfg = SimConfig(T=0.2, dt=0.01, N=100, seed=6)
    kernel = ConstantKernel(0.5)
    forward = simulate_finite(kernel, kuramoto, gaussian_datum, cfg)
    backward = simulate_finite(kernel, kuramoto, gaussian_datum, cfg, stream_index=np.arange(100)[::-1])
    assert np.allclose(forward.states[::-1], backward.states, atol=1e-10)
    with pytest.raises(ShapeError):
        simulate_finite(kernel, kuramoto, gaussian_datum, cfg, stream_index=np.arange(50))


def test_permuting_streams_within_blocks_leaves_block_laws_unchanged(kuramoto, gaussian_datum):
    cfg = SimConfig(T=0.2, dt=0.01, N=60, seed=6)
    kernel = resolve_kernel("fig2-step3")
    reference = simulate_finite(kernel, kuramoto, gaussian_datum, cfg)
    rng = np.random.default_rng(30)
    for _ in range(50):
        stream_index = np.arange(cfg.N)
        for block in reference.group_ids():
            members = np.flatnonzero(reference.groups == block)
            stream_index[members] = rng.permutation(members)
        permuted = simulate_finite(kernel, kuramoto, gaussian_datum, cfg, stream_index=stream_index)
        for block in reference.group_ids():
            members = reference.groups == block
            assert np.allclose(np.sort(permuted.states[members], axis=0), np.sort(reference.states[members], axis=0),
                               rtol=0.0, atol=1e-9)


def test_blowup_is_reported():
    explosive = CoefficientSet(name="explosive", drift=lambda theta: 1e6 * theta ** 2, interaction=zero_pairwise,
                               diffusion=unit_scalar, lipschitz={}, bounds={}, zero_interaction=True)
    cfg = SimConfig(T=1.0, dt=0.1, N=5, seed=1)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NumericalBlowupError) as info:
            simulate_finite(ConstantKernel(0.0), explosive, InitialDatum.uniform_law(PointMass(10.0)), cfg)
    assert info.value.step >= 1


def test_sampled_graph_is_symmetric_with_kernel_density():
    labels = (np.arange(400) + 0.5) / 400
    adjacency = sample_graph(ConstantKernel(0.3), labels, seed=12)
    assert np.array_equal(adjacency, adjacency.T)
    assert np.all(np.diag(adjacency) == 0.0)
    density = adjacency.sum() / (400 * 399)
    assert density == pytest.approx(0.3, abs=0.01)
    assert np.array_equal(adjacency, sample_graph(ConstantKernel(0.3), labels, seed=12))


def test_sampled_graph_needs_a_graphon():
    with pytest.raises(ShapeError):
        sample_graph(ConstantKernel(1.5), np.linspace(0.1, 0.9, 5), seed=1)


def test_sampled_graph_mode_runs(kuramoto, gaussian_datum):
    cfg = SimConfig(T=0.1, dt=0.01, N=150, seed=3, coupling_mode="sampled-graph")
    ensemble = simulate_finite(resolve_kernel("fig1-disconnected"), kuramoto, gaussian_datum, cfg)
    assert np.all(np.isfinite(ensemble.states))


@pytest.mark.slow
def test_sampled_graph_approaches_the_weighted_system(kuramoto, gaussian_datum):
    kernel = resolve_kernel("fig2-step3")
    distances = []
    for N in (250, 1000, 4000):
        cfg = SimConfig(T=0.5, dt=0.01, N=N, seed=19)
        weighted = simulate_finite(kernel, kuramoto, gaussian_datum, cfg)
        graph = simulate_finite(kernel, kuramoto, gaussian_datum, cfg.model_copy(update={"coupling_mode": "sampled-graph"}))
        distances.append(wasserstein2(weighted.marginal(0.5), graph.marginal(0.5)))
    assert distances[0] > distances[1] > distances[2]


def test_reduced_single_block_matches_finite_system(kuramoto, gaussian_datum):
    kernel = ConstantKernel(1.0 / 3.0)
    finite = simulate_finite(kernel, kuramoto, gaussian_datum, SimConfig(T=0.2, dt=0.01, N=250, seed=7))
    reduced = simulate_reduced(kernel, kuramoto, gaussian_datum, M=250, T=0.2, dt=0.01, seed=7)
    assert np.allclose(finite.states, reduced.states, atol=1e-12)
    assert reduced.provenance["system"] == "reduced"


def test_reduced_system_needs_aligned_initial_classes(kuramoto):
    init = InitialDatum.from_breakpoints([0.0, 0.4, 1.0], [PointMass(0.0), PointMass(1.0)])
    with pytest.raises(ShapeError):
        simulate_reduced(StepKernel.equipartition(np.eye(2)), kuramoto, init, M=10, T=0.1, dt=0.01, seed=1)


def test_reduced_blocks_with_zero_coupling_evolve_independently():
    heat = resolve_coefficients("heat")
    kernel = StepKernel.equipartition([[0.0, 0.0], [0.0, 0.0]])
    init = InitialDatum.from_blocks(kernel, [PointMass(0.0), PointMass(5.0)])
    reduced = simulate_reduced(kernel, heat, init, M=4000, T=0.5, dt=0.01, seed=2)
    assert reduced.marginal(0.5, group=0).mean() == pytest.approx(0.0, abs=0.05)
    assert reduced.marginal(0.5, group=1).mean() == pytest.approx(5.0, abs=0.05)


def test_coupled_pair_same_block_is_exactly_zero(kuramoto, gaussian_datum):
    cfg = SimConfig(T=0.1, dt=0.01, N=60, seed=1)
    kernel = resolve_kernel("fig2-step3")
    estimate = coupled_pair(kernel, 0.1, 0.2, kuramoto, gaussian_datum, replicas=3, cfg=cfg, workers=1)
    assert estimate.mean == 0.0
    assert estimate.distance_upper == 0.0
    identical = coupled_pair(kernel, 0.5, 0.5, kuramoto, gaussian_datum, replicas=2, cfg=cfg)
    assert identical.mean == 0.0


def test_coupled_pair_detects_different_rows(kuramoto):
    cfg = SimConfig(T=0.5, dt=0.01, N=100, seed=1)
    init = InitialDatum.uniform_law(Gaussian(1.0, 1.0))
    kernel = resolve_kernel("h-violating-2block")
    estimate = coupled_pair(kernel, 0.25, 0.75, kuramoto, init, replicas=200, cfg=cfg, workers=2)
    assert estimate.samples.shape == (200,)
    assert estimate.mean > 3.0 * estimate.stderr


def test_coupled_pair_rejects_labels_from_different_classes(kuramoto):
    init = InitialDatum.from_breakpoints([0.0, 0.5, 1.0], [PointMass(0.0), PointMass(1.0)])
    with pytest.raises(PartitionError):
        coupled_pair(ConstantKernel(0.5), 0.2, 0.8, kuramoto, init, replicas=2,
                     cfg=SimConfig(T=0.1, dt=0.01, N=10, seed=1))


def test_summary_and_snapshot_csv(tmp_path, kuramoto, gaussian_datum):
    cfg = SimConfig(T=0.1, dt=0.01, N=60, seed=1)
    ensemble = simulate_finite(resolve_kernel("fig2-step3"), kuramoto, gaussian_datum, cfg)
    summary = write_trajectory_summary(ensemble, tmp_path / "out" / "summary.csv", [0.0, 0.1])
    with open(summary) as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == SUMMARY_COLUMNS
    assert len(rows) == 1 + 2 * 3
    snapshot = write_state_snapshot(ensemble, 0.1, tmp_path / "snap.csv")
    with open(snapshot) as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["label", "state"]
    assert float(rows[1][1]) == ensemble.marginal(0.1)[0]


@pytest.mark.slow
def test_reduced_and_finite_systems_agree_blockwise(kuramoto):
    kernel = StepKernel([0.0, 0.5, 1.0], [[0.9, 0.3], [0.3, 0.6]])
    init = InitialDatum.from_blocks(kernel, [Gaussian(0.0, 1.0), Gaussian(1.5, 0.5)])
    finite = simulate_finite(kernel, kuramoto, init, SimConfig(T=1.0, dt=0.01, N=4000, seed=11))
    reduced = simulate_reduced(kernel, kuramoto, init, M=2000, T=1.0, dt=0.01, seed=12)
    for block in (0, 1):
        assert wasserstein2(finite.marginal(1.0, block), reduced.marginal(1.0, block)) < 0.08
