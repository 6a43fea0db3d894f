"""
Distances between laws on the real line.
One-dimensional Wasserstein-2 on samples and on gridded densities, bounds on
the path distance D_T between two label processes, the pooled (unlabeled)
marginal and the cut-norm continuity diagnostic.
"""
import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import ot

from coefficients import CoefficientSet, InitialDatum
from config import CUT_NORM, METRICS, WORKERS
from dynamics import CoupledPairEstimate, SimConfig, TrajectoryEnsemble, simulate_finite
from errors import LabelDomainError, ShapeError
from graphon import StepKernel, cut_norm
from pde import SpatialGrid
from rng import PURPOSE_BOOTSTRAP, PURPOSE_PERMUTATION, PURPOSE_SPLIT, CounterStream

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["experiment", "t_or_T", "quantity", "value", "stderr"]


def quantile_mesh(points: Optional[int] = None) -> np.ndarray:
    count = METRICS["quantile_mesh"] if points is None else points
    return (np.arange(count) + 0.5) / count


class MeasureSnapshot:
    """A law on the real line, held either as sorted samples or as cell averages on a grid."""

    def __init__(self, samples: Optional[np.ndarray] = None,
                 density: Optional[np.ndarray] = None,
                 grid: Optional[SpatialGrid] = None):
        if (samples is None) == (density is None):
            raise ValueError("give either samples or a density")
        self.samples = None
        self.density = None
        self.grid = grid
        if samples is not None:
            values = np.sort(np.asarray(samples, dtype=float).ravel())
            if values.size == 0:
                raise LabelDomainError("empirical measure has no samples")
            if not np.all(np.isfinite(values)):
                raise LabelDomainError("empirical measure has non-finite samples")
            self.samples = values
        else:
            if grid is None:
                raise ShapeError("a gridded measure needs its grid")
            values = np.asarray(density, dtype=float)
            if values.shape != (grid.M,):
                raise ShapeError(f"density of shape {values.shape} does not fit a grid of {grid.M} cells")
            mass = grid.h * values.sum()
            if np.any(values < 0) or abs(mass - 1.0) > 1e-8:
                raise ShapeError(f"gridded measure must be a nonnegative unit-mass density (mass {mass:.12g})")
            self.density = values

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "MeasureSnapshot":
        return cls(samples=samples)

    @classmethod
    def from_density(cls, density: np.ndarray, grid: SpatialGrid) -> "MeasureSnapshot":
        return cls(density=density, grid=grid)

    @property
    def is_empirical(self) -> bool:
        return self.samples is not None

    @property
    def size(self) -> int:
        return self.samples.size if self.is_empirical else self.grid.M

    def quantiles(self, u: np.ndarray) -> np.ndarray:
        """Quantile function at levels ``u`` in (0, 1)."""
        u = np.asarray(u, dtype=float)
        if self.is_empirical:
            return np.quantile(self.samples, u, method="inverted_cdf")
        faces = self.grid.faces
        cdf = np.concatenate([[0.0], np.cumsum(self.density * self.grid.h)])
        cdf /= cdf[-1]
        rising = np.diff(cdf) > 0
        keep = np.concatenate([rising, [False]]) | np.concatenate([[False], rising])
        return np.interp(u, cdf[keep], faces[keep])

    def expect(self, function: Callable[[np.ndarray], np.ndarray]) -> float:
        """Integral of ``function`` against the measure (midpoint rule for gridded measures)."""
        if self.is_empirical:
            return float(np.mean(function(self.samples)))
        return float(self.grid.h * np.sum(function(self.grid.centers) * self.density))

    @property
    def mean(self) -> float:
        return self.expect(lambda v: v)

    def __repr__(self) -> str:
        kind = f"empirical n={self.samples.size}" if self.is_empirical else f"gridded M={self.grid.M}"
        return f"MeasureSnapshot({kind})"


def _as_snapshot(value: Union[MeasureSnapshot, np.ndarray]) -> MeasureSnapshot:
    if isinstance(value, MeasureSnapshot):
        return value
    return MeasureSnapshot.from_samples(value)


def wasserstein2(a: Union[MeasureSnapshot, np.ndarray], b: Union[MeasureSnapshot, np.ndarray]) -> float:
    """
    Wasserstein-2 distance between two laws on the real line.

    Equal-size empirical measures use the order coupling, which is optimal in
    one dimension; every other pairing compares quantile functions on a common
    mesh of evenly spaced levels.

    Args:
        a: first measure (snapshot or raw samples)
        b: second measure (snapshot or raw samples)

    Returns:
        W2(a, b) >= 0
    """
    a, b = _as_snapshot(a), _as_snapshot(b)
    if a.is_empirical and b.is_empirical and a.size == b.size:
        cost = float(ot.lp.emd2_1d(a.samples, b.samples, metric="sqeuclidean"))
        return float(np.sqrt(max(cost, 0.0)))
    u = quantile_mesh()
    gap = a.quantiles(u) - b.quantiles(u)
    return float(np.sqrt(np.mean(gap * gap)))


def lipschitz_gaps(a: MeasureSnapshot, b: MeasureSnapshot,
                   functions: Optional[Dict[str, Callable[[np.ndarray], np.ndarray]]] = None) -> Dict[str, float]:
    """|E_a f - E_b f| for bounded 1-Lipschitz test functions; each is at most W2(a, b)."""
    if functions is None:
        functions = {"sin": np.sin, "tanh": np.tanh, "clamp": lambda v: np.clip(v, -1.0, 1.0)}
    return {name: abs(a.expect(f) - b.expect(f)) for name, f in functions.items()}


# ---------------------------------------------------------------------------
# Path-distance bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DTBounds:
    """Lower and upper bounds on D_T between two label processes."""

    lower: float
    lower_stderr: float
    upper: Optional[float] = None
    upper_stderr: Optional[float] = None
    time_of_max: float = 0.0

    def consistent(self, factor: float = 3.0) -> bool:
        """lower <= upper within ``factor`` combined standard errors."""
        if self.upper is None:
            return True
        spread = np.hypot(self.lower_stderr, self.upper_stderr or 0.0)
        return self.lower <= self.upper + factor * spread

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {"lower": self.lower, "lower_stderr": self.lower_stderr, "upper": self.upper,
                "upper_stderr": self.upper_stderr, "time_of_max": self.time_of_max}


def _select(ensemble: TrajectoryEnsemble, selection: Optional[np.ndarray]) -> np.ndarray:
    if selection is None:
        return ensemble.states
    states = ensemble.states[selection]
    if states.shape[0] == 0:
        raise LabelDomainError("particle selection is empty")
    return states


def _resample(value: Union[MeasureSnapshot, np.ndarray], stream: CounterStream, step: int):
    if isinstance(value, MeasureSnapshot):
        if not value.is_empirical:
            return value
        value = value.samples
    pick = (stream.uniforms(step, value.size) * value.size).astype(int)
    return value[pick]


def bootstrap_stderr(first: Union[MeasureSnapshot, np.ndarray],
                     second: Union[MeasureSnapshot, np.ndarray],
                     replicates: Optional[int] = None, seed: Optional[int] = None) -> float:
    """Standard deviation of W2 over bootstrap resamples; gridded measures are held fixed."""
    replicates = METRICS["bootstrap_replicates"] if replicates is None else replicates
    seed = METRICS["bootstrap_seed"] if seed is None else seed
    values = np.empty(replicates)
    for r in range(replicates):
        stream = CounterStream(seed, PURPOSE_BOOTSTRAP, r)
        values[r] = wasserstein2(_resample(first, stream, 0), _resample(second, stream, 1))
    return float(np.std(values, ddof=1))


def marginal_sup_distance(first: TrajectoryEnsemble, second: TrajectoryEnsemble,
                          select_first: Optional[np.ndarray] = None,
                          select_second: Optional[np.ndarray] = None,
                          times: Optional[Sequence[float]] = None):
    """(max over times of the marginal W2, time index of the maximum)."""
    if not np.array_equal(first.times, second.times):
        raise ShapeError("ensembles live on different time grids")
    a, b = _select(first, select_first), _select(second, select_second)
    indices = range(first.times.size) if times is None else [first.time_index(t) for t in times]
    best, where = 0.0, 0
    for n in indices:
        value = wasserstein2(a[:, n], b[:, n])
        if value > best:
            best, where = value, n
    return best, where


def _as_columns(value: Union[MeasureSnapshot, np.ndarray]) -> np.ndarray:
    if isinstance(value, MeasureSnapshot):
        if not value.is_empirical:
            raise ShapeError("sampling noise is only defined for empirical measures")
        value = value.samples
    value = np.asarray(value, dtype=float)
    return value[:, None] if value.ndim == 1 else value


def _squared_path(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared W2 between matching columns of two sample matrices (rows are particles)."""
    if a.shape[0] == b.shape[0]:
        gap = np.sort(a, axis=0) - np.sort(b, axis=0)
    else:
        u = quantile_mesh()
        gap = (np.quantile(a, u, axis=0, method="inverted_cdf")
               - np.quantile(b, u, axis=0, method="inverted_cdf"))
    return np.mean(gap * gap, axis=0)


def _shuffle(size: int, stream: CounterStream) -> np.ndarray:
    return np.argsort(stream.uniforms(0, size), kind="stable")


def noise_floor(samples: Union[MeasureSnapshot, np.ndarray],
                splits: Optional[int] = None, seed: Optional[int] = None) -> np.ndarray:
    """
    Sampling floor of a squared W2 estimate, one value per column of ``samples``.

    Two disjoint random halves are each half the size of the sample, so a
    quarter of their squared distance estimates what sampling alone adds to
    the squared distance between this sample and an independent one.
    """
    samples = _as_columns(samples)
    splits = METRICS["noise_floor_splits"] if splits is None else splits
    seed = METRICS["null_seed"] if seed is None else seed
    half = samples.shape[0] // 2
    floor = np.zeros(samples.shape[1])
    if half == 0 or splits <= 0:
        return floor
    for s in range(splits):
        order = _shuffle(samples.shape[0], CounterStream(seed, PURPOSE_SPLIT, s))
        floor += _squared_path(samples[order[:half]], samples[order[half:2 * half]])
    return floor / (4.0 * splits)


def _debiased_sup(a: np.ndarray, b: np.ndarray, splits: Optional[int], seed: Optional[int]):
    excess = _squared_path(a, b) - noise_floor(a, splits, seed) - noise_floor(b, splits, seed)
    where = int(np.argmax(excess))
    return float(np.sqrt(max(excess[where], 0.0))), where


def debiased_sup_distance(first: Union[MeasureSnapshot, np.ndarray],
                          second: Union[MeasureSnapshot, np.ndarray],
                          splits: Optional[int] = None,
                          permutations: Optional[int] = None,
                          seed: Optional[int] = None):
    """
    Max over columns of the W2 between two independent samples, with the
    sampling floor of each column removed and the result clamped at zero.

    The standard error is the spread of the same statistic over random
    reassignments of the pooled rows into groups of the original sizes: its
    noise level when both samples share one law.

    Args:
        first: samples, one column per time (or a single empirical snapshot)
        second: samples on the same columns
        splits: random half-splits per noise floor
        permutations: reassignments for the standard error
        seed: seed of the splits and reassignments

    Returns:
        (distance, stderr, column of the maximum)
    """
    a, b = _as_columns(first), _as_columns(second)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"samples on {a.shape[1]} and {b.shape[1]} columns")
    permutations = METRICS["null_permutations"] if permutations is None else permutations
    seed = METRICS["null_seed"] if seed is None else seed
    if not np.any(_squared_path(a, b) > 0.0):
        return 0.0, 0.0, 0
    value, where = _debiased_sup(a, b, splits, seed)
    if permutations < 2:
        return value, 0.0, where
    pooled = np.concatenate([a, b])
    null = np.empty(permutations)
    for r in range(permutations):
        order = _shuffle(pooled.shape[0], CounterStream(seed, PURPOSE_PERMUTATION, r))
        null[r] = _debiased_sup(pooled[order[:a.shape[0]]], pooled[order[a.shape[0]:]], splits, seed)[0]
    return value, float(np.std(null, ddof=1)), where


def debiased_wasserstein2(first: Union[MeasureSnapshot, np.ndarray],
                          second: Union[MeasureSnapshot, np.ndarray]):
    """(W2 between two independent samples less their sampling floor, its standard error)."""
    value, stderr, _ = debiased_sup_distance(first, second)
    return value, stderr


def d_T_bounds(first: TrajectoryEnsemble,
               second: Optional[TrajectoryEnsemble] = None,
               coupled: Optional[CoupledPairEstimate] = None,
               select_first: Optional[np.ndarray] = None,
               select_second: Optional[np.ndarray] = None,
               times: Optional[Sequence[float]] = None,
               debias: bool = True) -> DTBounds:
    """
    Bound the path distance D_T between two processes.

    lower: max over grid times of W2 between the time marginals (a marginal
    distance never exceeds the path distance with the sup norm). Two
    independent samples of one law sit a positive W2 apart, so by default
    each time's squared distance has the sampling floor of both samples
    removed before the maximum and the bound is clamped at zero. Its standard
    error is the spread under random reassignment of particles. With
    ``debias=False`` the raw maximum is kept and the bootstrap gives its
    standard error; use that for samples driven by shared noise.
    upper: square root of a shared-noise coupling estimate, when given.

    Args:
        first: ensemble of the first process
        second: ensemble of the second process (defaults to ``first``)
        coupled: coupled_pair estimate for the same two processes
        select_first: particle indices of ``first`` to use
        select_second: particle indices of ``second`` to use
        times: restrict the lower bound to these grid times (default: every grid time)
        debias: remove the sampling floor of independent samples

    Returns:
        DTBounds
    """
    second = first if second is None else second
    if not np.array_equal(first.times, second.times):
        raise ShapeError("ensembles live on different time grids")
    if debias:
        a, b = _select(first, select_first), _select(second, select_second)
        indices = (np.arange(first.times.size) if times is None
                   else np.array([first.time_index(t) for t in times], dtype=int))
        lower, lower_stderr, column = debiased_sup_distance(a[:, indices], b[:, indices])
        where = int(indices[column])
    else:
        lower, where = marginal_sup_distance(first, second, select_first, select_second, times)
        lower_stderr = 0.0
        if lower > 0.0:
            lower_stderr = bootstrap_stderr(_select(first, select_first)[:, where],
                                            _select(second, select_second)[:, where])
    logger.debug(f"D_T lower bound {lower:.4g} (stderr {lower_stderr:.2g}) at t={first.times[where]:.4g}")

    upper = upper_stderr = None
    if coupled is not None:
        upper = coupled.distance_upper
        stderr = 0.0 if np.isnan(coupled.stderr) else coupled.stderr
        upper_stderr = stderr / (2.0 * upper) if upper > 0 else stderr
    return DTBounds(lower=lower, lower_stderr=lower_stderr, upper=upper,
                    upper_stderr=upper_stderr, time_of_max=float(first.times[where]))


def pooled_marginal(ensemble: TrajectoryEnsemble, times: Optional[Sequence[float]] = None) -> List[MeasureSnapshot]:
    """Empirical law of all particles (uniform label weighting) at each requested grid time."""
    times = ensemble.times if times is None else times
    return [MeasureSnapshot.from_samples(ensemble.marginal(t)) for t in times]


# ---------------------------------------------------------------------------
# Continuity in the cut norm
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuityScenario:
    """Dynamics shared by a kernel and its perturbations."""

    coeffs: CoefficientSet
    init: InitialDatum
    cfg: SimConfig


@dataclass
class ContinuityReport:
    """
    Table of (cut norm of W - V, D_T lower bound) pairs.

    ``c_hat`` is the smallest C with lower^2 <= C * cut_norm over all pairs with
    a nonzero cut norm; it is a heuristic fit, not a certified constant.
    """

    kernel: str
    perturbations: List[str]
    cut_norms: List[float]
    lower: List[float]
    lower_stderr: List[float]
    c_hat: float = field(default=0.0)

    def rows(self) -> List[Dict[str, float]]:
        return [
            {"perturbation": name, "cut_norm": c, "lower": d, "stderr": s}
            for name, c, d, s in zip(self.perturbations, self.cut_norms, self.lower, self.lower_stderr)
        ]


def _blockwise_lower(reference: TrajectoryEnsemble, other: TrajectoryEnsemble,
                     times: Optional[Sequence[float]]):
    best, best_stderr = 0.0, 0.0
    # matched seeds: both runs share their noise, so no sampling floor applies
    for block in reference.group_ids():
        selection = np.flatnonzero(reference.groups == block)
        bounds = d_T_bounds(reference, other, select_first=selection, select_second=selection,
                            times=times, debias=False)
        if bounds.lower > best:
            best, best_stderr = bounds.lower, bounds.lower_stderr
    return best, best_stderr


def continuity_diagnostic(kernel: StepKernel,
                          perturbations: Sequence[StepKernel],
                          scenario: ContinuityScenario,
                          times: Optional[Sequence[float]] = None,
                          workers: Optional[int] = None) -> ContinuityReport:
    """
    Compare the dynamics on ``kernel`` with the dynamics on each perturbation
    under matched seeds.

    Args:
        kernel: reference step kernel W
        perturbations: step kernels V on the same blocks
        scenario: coefficients, initial datum and simulation config
        times: restrict the marginal comparison to these grid times
        workers: thread count for the perturbed simulations

    Returns:
        ContinuityReport with cut norms, lower bounds and the fitted constant
    """
    for candidate in perturbations:
        if not kernel.same_blocks(candidate):
            raise ShapeError(f"perturbation {candidate.name} does not share the blocks of {kernel.name}")
    started = time.time()
    workers = WORKERS if workers is None else workers
    reference = simulate_finite(kernel, scenario.coeffs, scenario.init, scenario.cfg)

    def compare(candidate: StepKernel):
        difference = kernel.with_values(kernel.values - candidate.values, name=f"{kernel.name}-{candidate.name}")
        norm = cut_norm(difference, mode="exact" if kernel.k <= CUT_NORM["exact_max_blocks"] else "heuristic")
        other = simulate_finite(candidate, scenario.coeffs, scenario.init, scenario.cfg)
        lower, stderr = _blockwise_lower(reference, other, times)
        return norm, lower, stderr

    if workers > 1 and len(perturbations) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(compare, perturbations))
    else:
        results = [compare(candidate) for candidate in perturbations]

    cut_norms = [r[0] for r in results]
    lower = [r[1] for r in results]
    ratios = [d * d / c for c, d in zip(cut_norms, lower) if c > 0]
    report = ContinuityReport(
        kernel=kernel.name,
        perturbations=[candidate.name for candidate in perturbations],
        cut_norms=cut_norms,
        lower=lower,
        lower_stderr=[r[2] for r in results],
        c_hat=max(ratios) if ratios else 0.0,
    )
    logger.info(f"Continuity diagnostic on {kernel.name}: {len(perturbations)} perturbations, "
                f"C_hat={report.c_hat:.4g}, {time.time() - started:.2f}s")
    return report


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricRow:
    experiment: str
    t_or_T: float
    quantity: str
    value: float
    stderr: Optional[float] = None

    def cells(self) -> List[str]:
        stderr = "" if self.stderr is None else f"{self.stderr:.17g}"
        return [self.experiment, f"{self.t_or_T:.17g}", self.quantity, f"{self.value:.17g}", stderr]


def write_metric_csv(rows: Sequence[MetricRow], path: Union[str, Path]) -> Path:
    """Write metric rows in the order given (``experiment, t_or_T, quantity, value, stderr``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        writer.writerows(row.cells() for row in rows)
    logger.info(f"Wrote {len(rows)} metric rows to {path}")
    return path
