"""
Dynamics module for the graphon particle system toolkit.
Euler-Maruyama simulation of the finite N-particle graphon system, of the
reduced k-block system on step kernels, and the shared-noise coupling of two
labels used to bound the path distance between their laws.
"""
import csv
import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from coefficients import CoefficientSet, InitialDatum
from config import SIMULATION_DEFAULTS, WORKERS
from errors import NumericalBlowupError, PartitionError, ShapeError
from graphon import ConstantKernel, Kernel, StepKernel
from rng import (
    PURPOSE_GRAPH,
    PURPOSE_INITIAL,
    PURPOSE_LABELS,
    PURPOSE_NOISE,
    PURPOSE_TRACER_INITIAL,
    PURPOSE_TRACER_NOISE,
    CounterStream,
)

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

_ROW_CHUNK = 256
SUMMARY_COLUMNS = ["time", "block", "mean", "var", "q05", "q25", "q50", "q75", "q95"]


class SimConfig(BaseModel):
    """Time grid, population size, seed and coupling options of a particle simulation."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    T: float = Field(SIMULATION_DEFAULTS["T"], gt=0)
    dt: float = Field(SIMULATION_DEFAULTS["dt"], gt=0)
    N: int = Field(SIMULATION_DEFAULTS["N"], ge=1)
    seed: int = Field(SIMULATION_DEFAULTS["seed"], ge=0, lt=2 ** 64)
    coupling_mode: Literal["weighted", "sampled-graph"] = SIMULATION_DEFAULTS["coupling_mode"]
    label_mode: Literal["equispaced", "uniform-random"] = SIMULATION_DEFAULTS["label_mode"]

    @model_validator(mode="after")
    def _check_time_grid(self) -> "SimConfig":
        if self.T < self.dt:
            raise ValueError("T must be at least dt")
        ratio = self.T / self.dt
        if abs(ratio - round(ratio)) > 1e-6 * ratio:
            raise ValueError(f"T/dt = {ratio:.9g} is not an integer number of steps")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def step(self) -> float:
        """Step actually used so that the grid ends exactly at T."""
        return self.T / self.n_steps

    def config_hash(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()[:16]


@dataclass
class TrajectoryEnsemble:
    """
    Particle trajectories on a uniform time grid.

    Attributes:
        labels: particle labels in [0, 1]
        times: grid 0, dt, ..., T
        states: N x (steps + 1) array
        seed: seed the ensemble was generated from
        provenance: kernel id, coefficient set, config hash
        groups: block (or label class) index of every particle
    """

    labels: np.ndarray
    times: np.ndarray
    states: np.ndarray
    seed: int
    provenance: Dict[str, str] = field(default_factory=dict)
    groups: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.groups is None:
            self.groups = np.zeros(self.labels.size, dtype=int)
        if self.states.shape != (self.labels.size, self.times.size):
            raise ShapeError(f"states shape {self.states.shape} does not match labels and times")

    @property
    def size(self) -> int:
        return self.labels.size

    def time_index(self, t: float) -> int:
        index = int(np.argmin(np.abs(self.times - t)))
        spacing = self.times[1] - self.times[0] if self.times.size > 1 else 0.0
        if abs(self.times[index] - t) > 0.5 * spacing + 1e-12:
            raise ShapeError(f"time {t} is not on the ensemble grid")
        return index

    def group_ids(self) -> List[int]:
        return sorted(int(g) for g in np.unique(self.groups))

    def marginal(self, t: float, group: Optional[int] = None) -> np.ndarray:
        """States at time ``t`` (optionally of one group only)."""
        column = self.states[:, self.time_index(t)]
        if group is None:
            return column.copy()
        return column[self.groups == group]


# ---------------------------------------------------------------------------
# Interaction fields
# ---------------------------------------------------------------------------

class _BlockCoupling:
    """(scale) * sum_j weights[b_i, b_j] Gamma(theta_i, theta_j) for block-structured couplings."""

    def __init__(self, weights: np.ndarray, blocks: np.ndarray, coeffs: CoefficientSet, scale: float):
        self.weights = np.asarray(weights, dtype=float)
        self.blocks = np.asarray(blocks, dtype=int)
        self.coeffs = coeffs
        self.scale = scale
        self.k = self.weights.shape[0]

    def field(self, theta: np.ndarray) -> np.ndarray:
        if self.coeffs.zero_interaction:
            return np.zeros_like(theta)
        if self.coeffs.separable is not None:
            total = np.zeros_like(theta)
            for own, other in self.coeffs.separable:
                sums = np.bincount(self.blocks, weights=other(theta), minlength=self.k)
                total += own(theta) * (self.weights @ sums)[self.blocks]
            return self.scale * total
        per_block = np.zeros((theta.size, self.k))
        for start in range(0, theta.size, _ROW_CHUNK):
            rows = slice(start, start + _ROW_CHUNK)
            pairwise = self.coeffs.interaction(theta[rows, None], theta[None, :])
            for block in range(self.k):
                per_block[rows, block] = pairwise[:, self.blocks == block].sum(axis=1)
        return self.scale * np.einsum("ij,ij->i", self.weights[self.blocks], per_block)


class _DenseCoupling:
    """(scale) * sum_j J_ij Gamma(theta_i, theta_j) for an explicit N x N weight matrix."""

    def __init__(self, matrix: np.ndarray, coeffs: CoefficientSet, scale: float):
        self.matrix = matrix
        self.coeffs = coeffs
        self.scale = scale

    def field(self, theta: np.ndarray) -> np.ndarray:
        if self.coeffs.zero_interaction:
            return np.zeros_like(theta)
        if self.coeffs.separable is not None:
            total = np.zeros_like(theta)
            for own, other in self.coeffs.separable:
                total += own(theta) * (self.matrix @ other(theta))
            return self.scale * total
        total = np.empty_like(theta)
        for start in range(0, theta.size, _ROW_CHUNK):
            rows = slice(start, start + _ROW_CHUNK)
            pairwise = self.coeffs.interaction(theta[rows, None], theta[None, :])
            total[rows] = np.sum(self.matrix[rows] * pairwise, axis=1)
        return self.scale * total


def _tracer_field(coeffs: CoefficientSet, row: np.ndarray, tracer: float, background: np.ndarray) -> float:
    """(1/N) sum_j row_j Gamma(tracer, theta_j) for a label outside the population."""
    if coeffs.zero_interaction:
        return 0.0
    own_state = np.array([tracer])
    if coeffs.separable is not None:
        total = 0.0
        for own, other in coeffs.separable:
            total += float(own(own_state)[0]) * float(row @ other(background))
        return total / background.size
    return float(row @ coeffs.interaction(own_state, background)) / background.size


def sample_graph(kernel: Kernel, labels: np.ndarray, seed: int, replica: int = 0) -> np.ndarray:
    """
    Quenched W-random graph: independent Bernoulli(W(x_i, x_j)) edges for i < j,
    symmetric with zero diagonal.
    """
    if not kernel.is_graphon:
        raise ShapeError(f"sampled-graph coupling needs a graphon; {kernel.name} is not certified in [0, 1]")
    stream = CounterStream(seed, PURPOSE_GRAPH, replica)
    n = labels.size
    adjacency = np.zeros((n, n))
    for i in range(n - 1):
        probabilities = kernel.evaluate(labels[i], labels[i + 1:])
        adjacency[i, i + 1:] = stream.uniforms(i, n - i - 1) < probabilities
    return adjacency + adjacency.T


def _labels(cfg: SimConfig, replica: int = 0) -> np.ndarray:
    if cfg.label_mode == "equispaced":
        return (np.arange(cfg.N) + 0.5) / cfg.N
    return np.sort(CounterStream(cfg.seed, PURPOSE_LABELS, replica).uniforms(0, cfg.N))


def _coupling_for(kernel: Kernel, labels: np.ndarray, coeffs: CoefficientSet, cfg: SimConfig, replica: int = 0):
    scale = 1.0 / labels.size
    if cfg.coupling_mode == "sampled-graph":
        return _DenseCoupling(sample_graph(kernel, labels, cfg.seed, replica), coeffs, scale)
    if isinstance(kernel, ConstantKernel):
        kernel = kernel.as_step()
    if isinstance(kernel, StepKernel):
        return _BlockCoupling(kernel.values, kernel.block_of(labels), coeffs, scale)
    return _DenseCoupling(kernel.evaluate(labels[:, None], labels[None, :]), coeffs, scale)


def _groups_for(kernel: Kernel, init: InitialDatum, labels: np.ndarray) -> np.ndarray:
    if isinstance(kernel, StepKernel):
        return kernel.block_of(labels)
    return init.class_of(labels)


def _euler_maruyama(theta0: np.ndarray,
                    coeffs: CoefficientSet,
                    coupling,
                    n_steps: int,
                    dt: float,
                    noise: CounterStream,
                    stream_index: np.ndarray) -> np.ndarray:
    """Integrate the particle system; returns a time-major (steps + 1) x N array."""
    history = np.empty((n_steps + 1, theta0.size))
    history[0] = theta0
    theta = theta0.copy()
    root_dt = np.sqrt(dt)
    draws = int(stream_index.max()) + 1
    for step in range(n_steps):
        increment = (coeffs.drift(theta) + coupling.field(theta)) * dt
        if not coeffs.zero_diffusion:
            increment = increment + coeffs.diffusion(theta) * root_dt * noise.normals(step, draws)[stream_index]
        theta = theta + increment
        if not np.all(np.isfinite(theta)):
            raise NumericalBlowupError(step + 1, (step + 1) * dt)
        history[step + 1] = theta
    return history


def simulate_finite(kernel: Kernel,
                    coeffs: CoefficientSet,
                    init: InitialDatum,
                    cfg: SimConfig,
                    stream_index: Optional[np.ndarray] = None,
                    replica: int = 0) -> TrajectoryEnsemble:
    """
    Simulate the N-particle approximation of the graphon system.

    theta_i(t + dt) = theta_i + [F(theta_i) + (1/N) sum_j J_ij Gamma(theta_i, theta_j)] dt
                      + sigma(theta_i) sqrt(dt) xi
    with J_ij = W(x_i, x_j) (weighted mode) or a quenched Bernoulli(W(x_i, x_j))
    adjacency (sampled-graph mode).

    Args:
        kernel: interaction kernel W
        coeffs: drift, interaction and diffusion
        init: initial datum (law per label class)
        cfg: time grid, N, seed and modes
        stream_index: optional particle -> random stream position map (defaults
            to the identity); lets relabeled systems share randomness
        replica: replica number mixed into every random stream

    Returns:
        TrajectoryEnsemble with N x (steps + 1) states
    """
    started = time.time()
    labels = _labels(cfg, replica)
    if stream_index is None:
        stream_index = np.arange(cfg.N)
    stream_index = np.asarray(stream_index, dtype=int)
    if stream_index.shape != (cfg.N,):
        raise ShapeError("stream_index needs one entry per particle")

    draws = int(stream_index.max()) + 1
    uniforms = CounterStream(cfg.seed, PURPOSE_INITIAL, replica).uniforms(0, draws)[stream_index]
    theta0 = init.sample(labels, uniforms)
    coupling = _coupling_for(kernel, labels, coeffs, cfg, replica)
    history = _euler_maruyama(theta0, coeffs, coupling, cfg.n_steps, cfg.step,
                              CounterStream(cfg.seed, PURPOSE_NOISE, replica), stream_index)

    logger.info(f"Simulated {cfg.N} particles on {kernel.name} ({cfg.coupling_mode}, {cfg.n_steps} steps) "
                f"in {time.time() - started:.2f}s")
    return TrajectoryEnsemble(
        labels=labels,
        times=np.linspace(0.0, cfg.T, cfg.n_steps + 1),
        states=history.T,
        seed=cfg.seed,
        provenance={"kernel": kernel.name, "coefficients": coeffs.name,
                    "config_hash": cfg.config_hash(), "system": "finite"},
        groups=_groups_for(kernel, init, labels),
    )


def simulate_reduced(kernel: StepKernel,
                     coeffs: CoefficientSet,
                     init: InitialDatum,
                     M: int,
                     T: float,
                     dt: float,
                     seed: int) -> TrajectoryEnsemble:
    """
    Simulate the reduced k-block system with M exchangeable particles per block.

    A block-i particle feels F(theta) + sum_j w_ij |S_j| (1/M) sum_m Gamma(theta, theta^{j,m}),
    the label integral of the step kernel written block by block.

    Args:
        kernel: step kernel
        coeffs: drift, interaction and diffusion
        init: initial datum constant on every block of ``kernel``
        M: particles per block
        T: horizon
        dt: time step
        seed: random seed

    Returns:
        TrajectoryEnsemble with k*M particles grouped by block
    """
    if isinstance(kernel, ConstantKernel):
        kernel = kernel.as_step()
    laws = init.block_laws(kernel)
    cfg = SimConfig(T=T, dt=dt, N=kernel.k * M, seed=seed)
    started = time.time()

    groups = np.repeat(np.arange(kernel.k), M)
    offsets = (np.tile(np.arange(M), kernel.k) + 0.5) / M
    labels = kernel.breakpoints[groups] + offsets * kernel.measures[groups]
    uniforms = CounterStream(seed, PURPOSE_INITIAL).uniforms(0, cfg.N)
    theta0 = np.empty(cfg.N)
    for block, law in enumerate(laws):
        mask = groups == block
        theta0[mask] = law.quantile(uniforms[mask])

    coupling = _BlockCoupling(kernel.values * kernel.measures[None, :], groups, coeffs, 1.0 / M)
    history = _euler_maruyama(theta0, coeffs, coupling, cfg.n_steps, cfg.step,
                              CounterStream(seed, PURPOSE_NOISE), np.arange(cfg.N))
    logger.info(f"Simulated reduced {kernel.k}-block system with M={M} in {time.time() - started:.2f}s")
    return TrajectoryEnsemble(
        labels=labels,
        times=np.linspace(0.0, cfg.T, cfg.n_steps + 1),
        states=history.T,
        seed=seed,
        provenance={"kernel": kernel.name, "coefficients": coeffs.name,
                    "config_hash": cfg.config_hash(), "system": "reduced"},
        groups=groups,
    )


@dataclass(frozen=True)
class CoupledPairEstimate:
    """Monte Carlo estimate of E[sup_t |theta^x_t - theta^xbar_t|^2] under shared noise."""

    mean: float
    stderr: float
    replicas: int
    samples: np.ndarray

    @property
    def distance_upper(self) -> float:
        return float(np.sqrt(self.mean))


def _coupled_replica(kernel: Kernel, x: float, x_bar: float, coeffs: CoefficientSet,
                     init: InitialDatum, cfg: SimConfig, replica: int) -> float:
    labels = _labels(cfg, replica)
    background = init.sample(labels, CounterStream(cfg.seed, PURPOSE_INITIAL, replica).uniforms(0, cfg.N))
    coupling = _coupling_for(kernel, labels, coeffs, cfg, replica)
    rows = (kernel.evaluate(x, labels), kernel.evaluate(x_bar, labels))

    start = init.law_of(x).quantile(CounterStream(cfg.seed, PURPOSE_TRACER_INITIAL, replica).uniforms(0, 1))[0]
    tracers = np.array([start, start])
    noise = CounterStream(cfg.seed, PURPOSE_NOISE, replica)
    tracer_noise = CounterStream(cfg.seed, PURPOSE_TRACER_NOISE, replica)
    dt = cfg.step
    root_dt = np.sqrt(dt)
    worst = 0.0
    for step in range(cfg.n_steps):
        tracer_drift = coeffs.drift(tracers) + np.array(
            [_tracer_field(coeffs, rows[i], tracers[i], background) for i in range(2)]
        )
        background_drift = coeffs.drift(background) + coupling.field(background)
        if coeffs.zero_diffusion:
            tracers = tracers + tracer_drift * dt
            background = background + background_drift * dt
        else:
            shared = tracer_noise.normals(step, 1)[0]
            tracers = tracers + tracer_drift * dt + coeffs.diffusion(tracers) * root_dt * shared
            background = (background + background_drift * dt
                          + coeffs.diffusion(background) * root_dt * noise.normals(step, cfg.N))
        if not (np.all(np.isfinite(tracers)) and np.all(np.isfinite(background))):
            raise NumericalBlowupError(step + 1, (step + 1) * dt)
        worst = max(worst, float((tracers[0] - tracers[1]) ** 2))
    return worst


def coupled_pair(kernel: Kernel,
                 x: float,
                 x_bar: float,
                 coeffs: CoefficientSet,
                 init: InitialDatum,
                 replicas: int,
                 cfg: SimConfig,
                 workers: Optional[int] = None) -> CoupledPairEstimate:
    """
    Drive the processes with labels ``x`` and ``x_bar`` by the same Brownian path
    and the same initial draw, against a common background population of size
    ``cfg.N``, and average the pathwise sup-square over replicas.

    The two tracers see the background through the weights W(x, .) and
    W(x_bar, .) and do not act back on it.

    Args:
        kernel: interaction kernel
        x: first label
        x_bar: second label, in the same initial-law class as ``x``
        coeffs: drift, interaction and diffusion
        init: initial datum of the background (and of the tracers' class)
        replicas: number of independent replicas R
        cfg: time grid, background size, seed and modes
        workers: thread count for replicas

    Returns:
        CoupledPairEstimate with mean, standard error and per-replica values
    """
    classes = init.class_of(np.array([x, x_bar]))
    if classes[0] != classes[1]:
        raise PartitionError(f"labels {x} and {x_bar} do not share an initial law")
    if replicas < 1:
        raise ValueError("at least one replica is required")

    workers = WORKERS if workers is None else workers
    started = time.time()
    if x == x_bar:
        samples = np.zeros(replicas)
    elif workers > 1 and replicas > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            samples = np.array(list(executor.map(
                lambda r: _coupled_replica(kernel, x, x_bar, coeffs, init, cfg, r), range(replicas)
            )))
    else:
        samples = np.array([_coupled_replica(kernel, x, x_bar, coeffs, init, cfg, r) for r in range(replicas)])

    mean = float(np.mean(samples))
    stderr = float(np.std(samples, ddof=1) / np.sqrt(replicas)) if replicas > 1 else float("nan")
    logger.info(f"Coupled pair ({x:.4g}, {x_bar:.4g}) on {kernel.name}: {mean:.4e} +/- {stderr:.2e} "
                f"over {replicas} replicas in {time.time() - started:.2f}s")
    return CoupledPairEstimate(mean=mean, stderr=stderr, replicas=replicas, samples=samples)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def _fmt(value: float) -> str:
    return f"{float(value):.17g}"


def summary_rows(ensemble: TrajectoryEnsemble, times: Optional[Sequence[float]] = None) -> List[List[str]]:
    """Rows of the trajectory summary table (one per time and block)."""
    times = ensemble.times if times is None else times
    rows = []
    for t in times:
        column = ensemble.states[:, ensemble.time_index(t)]
        for block in ensemble.group_ids():
            values = column[ensemble.groups == block]
            quantiles = np.quantile(values, [0.05, 0.25, 0.5, 0.75, 0.95])
            rows.append([_fmt(t), str(block), _fmt(values.mean()), _fmt(values.var())] + [_fmt(q) for q in quantiles])
    return rows


def write_trajectory_summary(ensemble: TrajectoryEnsemble, path: Union[str, Path],
                             times: Optional[Sequence[float]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerows(summary_rows(ensemble, times))
    logger.info(f"Wrote trajectory summary to {path}")
    return path


def write_state_snapshot(ensemble: TrajectoryEnsemble, t: float, path: Union[str, Path]) -> Path:
    """Full state at time ``t`` as ``label, state`` rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    column = ensemble.states[:, ensemble.time_index(t)]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["label", "state"])
        writer.writerows([_fmt(x), _fmt(s)] for x, s in zip(ensemble.labels, column))
    return path
