"""
Graphon module for the graphon particle system toolkit.
Represents kernels on the unit square and computes degrees, cut norms,
cut distances between step kernels, step approximations, block relabelings
and the class-wise degree condition (H) under which blocks sharing an
initial law can be merged.
"""
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate

from config import CUT_NORM, QUADRATURE, TOLERANCES, WORKERS
from errors import (
    CapabilityError,
    ConfigError,
    LabelDomainError,
    PartitionError,
    QuadratureError,
    ShapeError,
)

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

_MEASURE_ATOL = 1e-12


class IntervalUnion:
    """Finite union of intervals [a, b) inside [0, 1] (the interval ending at 1 is closed)."""

    def __init__(self, intervals: Sequence[Tuple[float, float]]):
        cleaned = []
        for a, b in sorted((float(a), float(b)) for a, b in intervals):
            if a < 0.0 or b > 1.0 or a > b:
                raise LabelDomainError(f"interval [{a}, {b}) is not inside [0, 1]")
            if b == a:
                continue
            if cleaned and a <= cleaned[-1][1]:
                cleaned[-1] = (cleaned[-1][0], max(cleaned[-1][1], b))
            else:
                cleaned.append((a, b))
        self.intervals: Tuple[Tuple[float, float], ...] = tuple(cleaned)

    @classmethod
    def full(cls) -> "IntervalUnion":
        return cls([(0.0, 1.0)])

    @classmethod
    def interval(cls, a: float, b: float) -> "IntervalUnion":
        return cls([(a, b)])

    @property
    def measure(self) -> float:
        return float(sum(b - a for a, b in self.intervals))

    def is_empty(self) -> bool:
        return not self.intervals

    def contains(self, x: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = np.zeros(x.shape, dtype=bool)
        for a, b in self.intervals:
            if b >= 1.0:
                inside |= (x >= a) & (x <= b)
            else:
                inside |= (x >= a) & (x < b)
        return inside

    def overlap(self, a: float, b: float) -> float:
        """Lebesgue measure of the intersection with [a, b)."""
        return float(sum(max(0.0, min(b, hi) - max(a, lo)) for lo, hi in self.intervals))

    def intersection_measure(self, other: "IntervalUnion") -> float:
        return float(sum(other.overlap(a, b) for a, b in self.intervals))

    def isdisjoint(self, other: "IntervalUnion") -> bool:
        return self.intersection_measure(other) == 0.0

    def union(self, other: "IntervalUnion") -> "IntervalUnion":
        return IntervalUnion(self.intervals + other.intervals)

    def sample_points(self, n: int) -> np.ndarray:
        """Return ``n`` stratified labels: the (j + 1/2)/n quantiles of the uniform law on the set."""
        if self.is_empty():
            raise PartitionError("cannot sample an empty label class")
        lengths = np.array([b - a for a, b in self.intervals])
        cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
        targets = (np.arange(n) + 0.5) / n * cumulative[-1]
        which = np.clip(np.searchsorted(cumulative, targets, side="right") - 1, 0, len(lengths) - 1)
        starts = np.array([a for a, _ in self.intervals])
        return starts[which] + (targets - cumulative[which])

    def __eq__(self, other: object) -> bool:
        return isinstance(other, IntervalUnion) and self.intervals == other.intervals

    def __hash__(self) -> int:
        return hash(self.intervals)

    def __repr__(self) -> str:
        parts = ", ".join(f"[{a:.6g}, {b:.6g})" for a, b in self.intervals)
        return f"IntervalUnion({parts})"


class LabelPartition:
    """
    Finite partition of [0, 1] into label classes.

    Each class is a finite union of intervals; one representative label is
    kept per class (the orbit representative of the equivalence relation
    induced by equal initial laws).
    """

    def __init__(self, classes: Sequence[IntervalUnion], representatives: Optional[Sequence[float]] = None):
        self.classes: Tuple[IntervalUnion, ...] = tuple(classes)
        if not self.classes:
            raise PartitionError("a label partition needs at least one class")
        for index, label_class in enumerate(self.classes):
            if label_class.measure <= 0.0:
                raise PartitionError(f"label class {index} is empty")
        for first, second in itertools.combinations(range(len(self.classes)), 2):
            if not self.classes[first].isdisjoint(self.classes[second]):
                raise PartitionError(f"label classes {first} and {second} overlap")
        total = sum(c.measure for c in self.classes)
        if abs(total - 1.0) > _MEASURE_ATOL:
            raise PartitionError(f"label classes cover measure {total:.12g}, expected 1")

        if representatives is None:
            representatives = [float(c.sample_points(1)[0]) for c in self.classes]
        if len(representatives) != len(self.classes):
            raise PartitionError("one representative label is required per class")
        for index, (label_class, rep) in enumerate(zip(self.classes, representatives)):
            if not label_class.contains(rep):
                raise PartitionError(f"representative {rep} is not in class {index}")
        self.representatives: Tuple[float, ...] = tuple(float(r) for r in representatives)

    @classmethod
    def from_breakpoints(cls, breakpoints: Sequence[float]) -> "LabelPartition":
        breaks = _validate_breakpoints(breakpoints)
        return cls([IntervalUnion.interval(a, b) for a, b in zip(breaks[:-1], breaks[1:])])

    @classmethod
    def single(cls) -> "LabelPartition":
        return cls([IntervalUnion.full()])

    def __len__(self) -> int:
        return len(self.classes)

    def class_of(self, labels: ArrayLike) -> np.ndarray:
        """Return the class index of every label."""
        labels = np.atleast_1d(np.asarray(labels, dtype=float))
        result = np.full(labels.shape, -1, dtype=int)
        for index, label_class in enumerate(self.classes):
            result[label_class.contains(labels) & (result < 0)] = index
        if np.any(result < 0):
            raise PartitionError("some labels are not covered by the partition")
        return result

    def __repr__(self) -> str:
        return f"LabelPartition({list(self.classes)})"


class Kernel:
    """Bounded symmetric function on [0, 1]^2."""

    name: str = "kernel"
    bound: float = 0.0
    is_graphon: bool = False

    def evaluate(self, x: ArrayLike, y: ArrayLike) -> np.ndarray:
        raise NotImplementedError

    def degree_wrt(self, x: float, region: IntervalUnion) -> float:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name})"


class ConstantKernel(Kernel):
    """W(x, y) = value everywhere."""

    def __init__(self, value: float, name: Optional[str] = None):
        self.value = float(value)
        self.bound = abs(self.value)
        self.is_graphon = 0.0 <= self.value <= 1.0
        self.name = name or f"constant:{self.value:g}"

    def evaluate(self, x: ArrayLike, y: ArrayLike) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return np.full(x.shape, self.value)

    def degree_wrt(self, x: float, region: IntervalUnion) -> float:
        return self.value * region.measure

    def as_step(self) -> "StepKernel":
        return StepKernel([0.0, 1.0], [[self.value]], name=self.name)


class StepKernel(Kernel):
    """
    Kernel constant on every product of partition blocks S_i x S_j.

    Attributes:
        breakpoints: 0 = b_0 < b_1 < ... < b_k = 1, block S_i = [b_{i-1}, b_i)
        values: symmetric k x k matrix w
    """

    def __init__(self, breakpoints: Sequence[float], values: Sequence[Sequence[float]], name: Optional[str] = None):
        breaks = _validate_breakpoints(breakpoints)
        matrix = np.array(values, dtype=float, ndmin=2)
        k = len(breaks) - 1
        if matrix.shape != (k, k):
            raise ShapeError(f"step values must be {k}x{k} for {k + 1} breakpoints, got {matrix.shape}")
        if not np.array_equal(matrix, matrix.T):
            raise ShapeError("step kernel values must be symmetric")
        if not np.all(np.isfinite(matrix)):
            raise ShapeError("step kernel values must be finite")
        breaks.setflags(write=False)
        matrix.setflags(write=False)
        self.breakpoints = breaks
        self.values = matrix
        self.bound = float(np.max(np.abs(matrix)))
        self.is_graphon = bool(np.all((matrix >= 0.0) & (matrix <= 1.0)))
        self.name = name or f"step[{k}]"

    @classmethod
    def equipartition(cls, values: Sequence[Sequence[float]], name: Optional[str] = None) -> "StepKernel":
        k = np.array(values, ndmin=2).shape[0]
        return cls(np.linspace(0.0, 1.0, k + 1), values, name=name)

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def measures(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def block(self, index: int) -> IntervalUnion:
        return IntervalUnion.interval(self.breakpoints[index], self.breakpoints[index + 1])

    def partition(self) -> LabelPartition:
        return LabelPartition.from_breakpoints(self.breakpoints)

    def block_of(self, labels: ArrayLike) -> np.ndarray:
        labels = np.asarray(labels, dtype=float)
        index = np.searchsorted(self.breakpoints, labels, side="right") - 1
        return np.clip(index, 0, self.k - 1)

    def evaluate(self, x: ArrayLike, y: ArrayLike) -> np.ndarray:
        return self.values[self.block_of(x), self.block_of(y)]

    def degree_wrt(self, x: float, region: IntervalUnion) -> float:
        row = self.values[int(self.block_of(x))]
        overlaps = np.array([region.overlap(a, b) for a, b in zip(self.breakpoints[:-1], self.breakpoints[1:])])
        return float(np.dot(row, overlaps))

    def block_degrees(self) -> np.ndarray:
        """Degree d(x) of a label in each block."""
        return self.values @ self.measures

    def with_values(self, values: np.ndarray, name: Optional[str] = None) -> "StepKernel":
        return StepKernel(self.breakpoints, values, name=name)

    def same_blocks(self, other: "StepKernel") -> bool:
        return self.k == other.k and np.allclose(self.breakpoints, other.breakpoints, rtol=0.0, atol=_MEASURE_ATOL)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, StepKernel)
            and np.array_equal(self.breakpoints, other.breakpoints)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = Kernel.__hash__


class AnalyticKernel(Kernel):
    """
    Kernel given by a vectorized evaluator.

    Args:
        evaluator: callable (x, y) -> W(x, y) accepting numpy arrays
        bound: declared sup |W|
        name: identifier used in provenance and logs
        is_graphon: declared flag, true only if values lie in [0, 1]
        singular_points: optional callable x -> y-locations where W(x, .) jumps,
            passed to the quadrature as breakpoints
    """

    def __init__(self,
                 evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray],
                 bound: float,
                 name: str = "analytic",
                 is_graphon: bool = False,
                 singular_points: Optional[Callable[[float], Sequence[float]]] = None):
        if bound < 0:
            raise ValueError("kernel bound must be nonnegative")
        self._evaluator = evaluator
        self.bound = float(bound)
        self.name = name
        self.is_graphon = bool(is_graphon)
        self._singular_points = singular_points

    def evaluate(self, x: ArrayLike, y: ArrayLike) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return np.asarray(self._evaluator(x, y), dtype=float)

    def degree_wrt(self, x: float, region: IntervalUnion) -> float:
        total = 0.0
        x_value = float(x)
        for a, b in region.intervals:
            points = None
            if self._singular_points is not None:
                points = [p for p in self._singular_points(x_value) if a < p < b] or None
            total += _quad(lambda y: float(self._evaluator(np.float64(x_value), np.float64(y))), a, b, points)
        return total


def _quad(func: Callable[[float], float], a: float, b: float, points: Optional[List[float]] = None) -> float:
    """Adaptive Gauss-Kronrod quadrature with the configured absolute tolerance."""
    epsabs = QUADRATURE["epsabs"]
    limit = max(50, QUADRATURE["max_evaluations"] // QUADRATURE["points_per_interval"])
    result = integrate.quad(func, a, b, epsabs=epsabs, epsrel=QUADRATURE["epsrel"],
                            limit=limit, points=points, full_output=1)
    value, abserr = result[0], result[1]
    if len(result) > 3:
        if abserr > epsabs:
            raise QuadratureError(f"quadrature over [{a:.6g}, {b:.6g}] did not converge", abserr, epsabs)
        logger.warning(f"Quadrature warning within tolerance on [{a:.6g}, {b:.6g}]: {result[3]}")
    return float(value)


def _validate_breakpoints(breakpoints: Sequence[float]) -> np.ndarray:
    breaks = np.array(breakpoints, dtype=float)
    if breaks.ndim != 1 or breaks.size < 2:
        raise ShapeError("at least two breakpoints are required")
    if breaks[0] != 0.0 or breaks[-1] != 1.0:
        raise ShapeError("breakpoints must start at 0 and end at 1")
    if np.any(np.diff(breaks) <= 0.0):
        raise ShapeError("breakpoints must be strictly increasing")
    return breaks


def _as_step(kernel: Kernel) -> StepKernel:
    if isinstance(kernel, StepKernel):
        return kernel
    if isinstance(kernel, ConstantKernel):
        return kernel.as_step()
    raise ShapeError(f"{kernel.name} is not a step kernel")


def _check_labels(*labels: ArrayLike) -> None:
    for value in labels:
        array = np.asarray(value, dtype=float)
        if np.any(~np.isfinite(array)) or np.any(array < 0.0) or np.any(array > 1.0):
            raise LabelDomainError(f"labels must lie in [0, 1], got {value}")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def eval_kernel(kernel: Kernel, x: ArrayLike, y: ArrayLike) -> Union[float, np.ndarray]:
    """
    Evaluate W(x, y).

    Args:
        kernel: the kernel
        x: label(s) in [0, 1]
        y: label(s) in [0, 1]

    Returns:
        W(x, y); a float for scalar labels
    """
    _check_labels(x, y)
    value = kernel.evaluate(x, y)
    if np.ndim(value) == 0:
        return float(value)
    return value


def degree_wrt(kernel: Kernel, x: float, region: IntervalUnion) -> float:
    """Degree of label ``x`` with respect to ``region``: the integral of W(x, .) over it."""
    _check_labels(x)
    return kernel.degree_wrt(float(x), region)


def degree(kernel: Kernel, x: float) -> float:
    """Degree d(x) = integral of W(x, y) over y in [0, 1]."""
    return degree_wrt(kernel, x, IntervalUnion.full())


def degree_profile(kernel: Kernel, labels: ArrayLike) -> np.ndarray:
    return np.array([degree(kernel, float(x)) for x in np.atleast_1d(labels)])


def step_approximate(kernel: Kernel, k: int) -> StepKernel:
    """
    Average a kernel over the equipartition into ``k`` blocks.

    Step kernels are refined exactly through block overlaps; analytic kernels
    are averaged block by block with adaptive 2-D quadrature.

    Args:
        kernel: kernel to approximate
        k: number of blocks (k >= 1)

    Returns:
        StepKernel whose entry (i, j) is the mean of W over S_i x S_j
    """
    if int(k) < 1:
        raise ValueError("k must be a positive integer")
    k = int(k)
    breaks = np.linspace(0.0, 1.0, k + 1)
    lengths = np.diff(breaks)
    name = f"{kernel.name}~step{k}"

    if isinstance(kernel, ConstantKernel):
        return StepKernel(breaks, np.full((k, k), kernel.value), name=name)

    if isinstance(kernel, StepKernel):
        overlaps = np.array([
            [max(0.0, min(b, hi) - max(a, lo)) for lo, hi in zip(kernel.breakpoints[:-1], kernel.breakpoints[1:])]
            for a, b in zip(breaks[:-1], breaks[1:])
        ])
        averaged = (overlaps @ kernel.values @ overlaps.T) / np.outer(lengths, lengths)
        return StepKernel(breaks, 0.5 * (averaged + averaged.T), name=name)

    values = np.zeros((k, k))
    epsabs = QUADRATURE["epsabs"]
    for i in range(k):
        for j in range(i, k):
            mass, abserr = integrate.dblquad(
                lambda y, x: float(kernel.evaluate(x, y)),
                breaks[i], breaks[i + 1], breaks[j], breaks[j + 1],
                epsabs=epsabs, epsrel=QUADRATURE["epsrel"],
            )
            if abserr > epsabs:
                raise QuadratureError(f"block ({i}, {j}) average of {kernel.name}", abserr, epsabs)
            values[i, j] = values[j, i] = mass / (lengths[i] * lengths[j])
    logger.info(f"Step-approximated {kernel.name} with {k} blocks")
    return StepKernel(breaks, values, name=name)


def _vertex_values(rows: np.ndarray, weighted: np.ndarray) -> np.ndarray:
    """
    Best cut value for every row-indicator vector s, optimizing t per coordinate.

    Accumulation is elementwise in a fixed order so a single row gives the same
    bits as the same row inside a large chunk.
    """
    sums = np.zeros((rows.shape[0], weighted.shape[1]))
    for i in range(weighted.shape[0]):
        sums += rows[:, i, None] * weighted[i]
    positive = np.where(sums > 0.0, sums, 0.0).sum(axis=1)
    negative = np.where(sums < 0.0, -sums, 0.0).sum(axis=1)
    return np.maximum(positive, negative)


def _indicator_rows(start: int, stop: int, k: int) -> np.ndarray:
    codes = np.arange(start, stop, dtype=np.int64)
    return ((codes[:, None] >> np.arange(k)) & 1).astype(float)


def _cut_norm_exact(weighted: np.ndarray, workers: int) -> float:
    k = weighted.shape[0]
    total = 1 << k
    chunk = CUT_NORM["chunk_size"]
    bounds = [(start, min(start + chunk, total)) for start in range(0, total, chunk)]

    def best_in(span: Tuple[int, int]) -> float:
        return float(np.max(_vertex_values(_indicator_rows(span[0], span[1], k), weighted)))

    if len(bounds) == 1 or workers <= 1:
        return max(best_in(span) for span in bounds)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return max(executor.map(best_in, bounds))


def _cut_norm_heuristic(weighted: np.ndarray, restarts: int, seed: int) -> float:
    k = weighted.shape[0]
    rng = np.random.default_rng(seed)
    starts = [np.ones(k)]
    eigenvalues, eigenvectors = np.linalg.eigh(weighted)
    for column in (int(np.argmax(eigenvalues)), int(np.argmin(eigenvalues))):
        starts.append((eigenvectors[:, column] > 0.0).astype(float))
    while len(starts) < restarts:
        starts.append(rng.integers(0, 2, size=k).astype(float))

    best = 0.0
    for start in starts[:max(restarts, 1)]:
        for sign in (1.0, -1.0):
            rows = _alternate(start.copy(), weighted, sign)
            best = max(best, float(_vertex_values(rows[None, :], weighted)[0]))
    return best


def _alternate(rows: np.ndarray, weighted: np.ndarray, sign: float, max_rounds: int = 200) -> np.ndarray:
    """Alternating s/t maximization of sign * s^T A t followed by single-flip improvement."""
    k = rows.size
    for _ in range(max_rounds):
        for _ in range(max_rounds):
            columns = (sign * (rows @ weighted) > 0.0).astype(float)
            updated = (sign * (weighted @ columns) > 0.0).astype(float)
            if np.array_equal(updated, rows):
                break
            rows = updated
        current = _vertex_values(rows[None, :], weighted)[0]
        flips = np.repeat(rows[None, :], k, axis=0)
        flips[np.arange(k), np.arange(k)] = 1.0 - flips[np.arange(k), np.arange(k)]
        candidates = _vertex_values(flips, weighted)
        best = int(np.argmax(candidates))
        if candidates[best] <= current:
            break
        rows = flips[best]
    return rows


def cut_norm(kernel: Kernel,
             mode: str = "exact",
             restarts: Optional[int] = None,
             seed: Optional[int] = None,
             workers: Optional[int] = None) -> float:
    """
    Cut norm of a step kernel: max over label sets S, T of |integral of W over S x T|.

    With a_ij = w_ij m_i m_j the bilinear objective attains its maximum at
    indicator vectors, so exact mode enumerates s in {0,1}^k and picks t
    coordinatewise. Heuristic mode alternates s/t maximization from several
    starts and never exceeds the exact value.

    Args:
        kernel: step (or constant) kernel
        mode: "exact" or "heuristic"
        restarts: heuristic starting points (default from config)
        seed: heuristic seed (default from config)
        workers: thread count for exact enumeration

    Returns:
        The cut norm
    """
    step = _as_step(kernel)
    weighted = step.values * step.measures[:, None] * step.measures[None, :]
    if mode == "exact":
        if step.k > CUT_NORM["exact_max_blocks"]:
            raise CapabilityError(
                f"exact cut norm supports k <= {CUT_NORM['exact_max_blocks']} blocks (got {step.k}); "
                "use mode='heuristic'"
            )
        return _cut_norm_exact(weighted, WORKERS if workers is None else workers)
    if mode == "heuristic":
        return _cut_norm_heuristic(
            weighted,
            CUT_NORM["heuristic_restarts"] if restarts is None else restarts,
            CUT_NORM["heuristic_seed"] if seed is None else seed,
        )
    raise ValueError(f"unknown cut norm mode: {mode}")


def relabel(kernel: StepKernel, perm: Sequence[int]) -> StepKernel:
    """
    Relabel a step kernel by a block permutation: v_ij = w_{perm(i), perm(j)}.

    Args:
        kernel: step kernel
        perm: permutation of range(k) mapping equal-measure blocks onto each other

    Returns:
        The relabeled StepKernel
    """
    step = _as_step(kernel)
    order = np.asarray(perm, dtype=int)
    if sorted(order.tolist()) != list(range(step.k)):
        raise ShapeError(f"{list(perm)} is not a permutation of {step.k} blocks")
    if not np.allclose(step.measures[order], step.measures, rtol=0.0, atol=_MEASURE_ATOL):
        raise ShapeError("block permutation must map blocks onto blocks of equal measure")
    return StepKernel(step.breakpoints, step.values[np.ix_(order, order)], name=f"{step.name}^perm")


def _admissible_permutations(measures: np.ndarray) -> List[Tuple[int, ...]]:
    return [
        perm for perm in itertools.permutations(range(measures.size))
        if np.allclose(measures[list(perm)], measures, rtol=0.0, atol=_MEASURE_ATOL)
    ]


def _sampled_permutations(measures: np.ndarray, count: int, seed: int) -> List[np.ndarray]:
    rng = np.random.default_rng(seed)
    keys = np.round(measures / _MEASURE_ATOL).astype(np.int64)
    groups = [np.flatnonzero(keys == key) for key in np.unique(keys)]
    perms = [np.arange(measures.size)]
    for _ in range(count):
        perm = np.arange(measures.size)
        for group in groups:
            perm[group] = rng.permutation(group)
        perms.append(perm)
    return perms


def cut_distance_step(first: Kernel, second: Kernel, mode: str = "auto", seed: Optional[int] = None) -> float:
    """
    Upper bound on the cut distance: min over block permutations phi of ||W - V^phi||.

    The minimization runs over measure-preserving block permutations only, so
    the result is exact whenever the optimal relabeling permutes blocks.
    Up to ``distance_exact_max_blocks`` blocks every admissible permutation is
    enumerated; beyond that (or with mode="heuristic") random admissible
    permutations are sampled.

    Args:
        first: step kernel W
        second: step kernel V with the same block measures
        mode: "auto", "exact" or "heuristic"
        seed: permutation sampling seed

    Returns:
        The minimal cut norm found
    """
    w, v = _as_step(first), _as_step(second)
    if w.k != v.k or not np.allclose(w.measures, v.measures, rtol=0.0, atol=_MEASURE_ATOL):
        raise ShapeError("cut distance needs kernels with matching block measures")
    exhaustive = mode == "exact" or (mode == "auto" and w.k <= CUT_NORM["distance_exact_max_blocks"])
    if exhaustive:
        if w.k > CUT_NORM["distance_exact_max_blocks"]:
            raise CapabilityError(
                f"exhaustive cut distance supports k <= {CUT_NORM['distance_exact_max_blocks']}; use mode='heuristic'"
            )
        perms = [np.array(p) for p in _admissible_permutations(w.measures)]
    else:
        perms = _sampled_permutations(
            w.measures, CUT_NORM["distance_sampled_permutations"], CUT_NORM["heuristic_seed"] if seed is None else seed
        )
        logger.warning(f"Cut distance between {w.name} and {v.name} uses {len(perms)} sampled permutations")

    norm_mode = "exact" if w.k <= CUT_NORM["exact_max_blocks"] else "heuristic"
    best = math.inf
    for perm in perms:
        difference = w.values - v.values[np.ix_(perm, perm)]
        best = min(best, cut_norm(StepKernel(w.breakpoints, difference), mode=norm_mode, workers=1))
        if best == 0.0:
            break
    return best


@dataclass(frozen=True)
class ConditionHResult:
    """Outcome of check_condition_H; ``deviations[a, b]`` is the spread of d_b over class a."""

    holds: bool
    max_deviation: float
    deviations: np.ndarray
    tol: float

    def as_dict(self) -> Dict[str, object]:
        return {"holds": self.holds, "max_deviation": self.max_deviation}


def check_condition_H(kernel: Kernel,
                      partition: LabelPartition,
                      samples_per_class: int = 16,
                      tol: Optional[float] = None) -> ConditionHResult:
    """
    Check that class degrees d_B(x) are constant on every class A.

    Step kernels are checked exactly block by block (every block meeting a
    class contributes its degree); other kernels are sampled at stratified
    labels inside each class.

    Args:
        kernel: kernel W
        partition: label classes (finite unions of intervals)
        samples_per_class: labels sampled per class (>= 2)
        tol: tolerance on the spread (default 1e-8 for step, 1e-6 otherwise)

    Returns:
        ConditionHResult with the largest spread over class pairs
    """
    if samples_per_class < 2:
        raise ValueError("samples_per_class must be at least 2")
    exact = isinstance(kernel, (StepKernel, ConstantKernel))
    if tol is None:
        tol = TOLERANCES["condition_h_step"] if exact else TOLERANCES["condition_h_analytic"]

    size = len(partition)
    deviations = np.zeros((size, size))
    if isinstance(kernel, StepKernel):
        edges = list(zip(kernel.breakpoints[:-1], kernel.breakpoints[1:]))
    for a, source in enumerate(partition.classes):
        if isinstance(kernel, StepKernel):
            members = [j for j, (lo, hi) in enumerate(edges) if source.overlap(lo, hi) > 0.0]
        else:
            points = list(source.sample_points(samples_per_class))
        for b, target in enumerate(partition.classes):
            if isinstance(kernel, StepKernel):
                weights = [target.overlap(lo, hi) for lo, hi in edges]
                degrees = [float(np.dot(kernel.values[j], weights)) for j in members]
            else:
                degrees = [kernel.degree_wrt(float(x), target) for x in points]
            deviations[a, b] = float(np.max(degrees) - np.min(degrees))

    max_deviation = float(np.max(deviations))
    holds = max_deviation <= tol
    logger.info(f"Condition (H) for {kernel.name} over {size} classes: "
                f"{'holds' if holds else 'fails'} (max deviation {max_deviation:.3e}, exact={exact})")
    return ConditionHResult(holds=holds, max_deviation=max_deviation, deviations=deviations, tol=float(tol))


def split_block(kernel: StepKernel, index: int, ratio: float) -> StepKernel:
    """Split block ``index`` at fraction ``ratio`` into two blocks carrying identical rows."""
    step = _as_step(kernel)
    if not 0 <= index < step.k:
        raise ShapeError(f"block {index} does not exist in a {step.k}-block kernel")
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must lie in (0, 1)")
    cut = step.breakpoints[index] + ratio * step.measures[index]
    breaks = np.insert(step.breakpoints, index + 1, cut)
    source = np.insert(np.arange(step.k), index + 1, index)
    return StepKernel(breaks, step.values[np.ix_(source, source)], name=f"{step.name}/split{index}")


def sample_symmetry(kernel: Kernel, samples: Optional[int] = None, seed: int = 0) -> Dict[str, float]:
    """
    Sample the kernel invariants at random label pairs.

    Returns:
        Dict with the largest asymmetry |W(x,y) - W(y,x)| and the sampled range
    """
    rng = np.random.default_rng(seed)
    count = TOLERANCES["symmetry_samples"] if samples is None else samples
    x, y = rng.random(count), rng.random(count)
    forward, backward = kernel.evaluate(x, y), kernel.evaluate(y, x)
    return {
        "asymmetry": float(np.max(np.abs(forward - backward))),
        "min": float(np.min(forward)),
        "max": float(np.max(forward)),
        "max_abs": float(np.max(np.abs(forward))),
    }


# ---------------------------------------------------------------------------
# Built-in families and the kernel spec grammar
# ---------------------------------------------------------------------------

def cayley_kernel(profile: str, params: Sequence[float], name: Optional[str] = None) -> AnalyticKernel:
    """
    Cayley graphon on the circle group: W(x, y) = f(x - y) with an even profile f.

    Profiles:
        cosine (a, b): f(u) = a + b cos(2 pi u), degree a
        band (r,):     f(u) = 1 if the circular distance of u to 0 is below r, degree 2r
    """
    if profile == "cosine":
        if len(params) != 2:
            raise ConfigError("cayley cosine profile takes two parameters a,b")
        a, b = float(params[0]), float(params[1])
        return AnalyticKernel(
            lambda x, y: a + b * np.cos(2.0 * np.pi * (x - y)),
            bound=abs(a) + abs(b),
            name=name or f"cayley:cosine:{a:g},{b:g}",
            is_graphon=(a - abs(b) >= 0.0 and a + abs(b) <= 1.0),
        )
    if profile == "band":
        if len(params) != 1 or not 0.0 < float(params[0]) <= 0.5:
            raise ConfigError("cayley band profile takes one radius in (0, 1/2]")
        radius = float(params[0])

        def band(x: np.ndarray, y: np.ndarray) -> np.ndarray:
            distance = np.abs(x - y)
            distance = np.minimum(distance, 1.0 - distance)
            return np.where(distance < radius, 1.0, 0.0)

        def jumps(x: float) -> List[float]:
            return sorted({(x - radius) % 1.0, (x + radius) % 1.0})

        return AnalyticKernel(band, bound=1.0, name=name or f"cayley:band:{radius:g}",
                              is_graphon=True, singular_points=jumps)
    raise ConfigError(f"unknown Cayley profile: {profile}")


def scalefree_kernel(gamma: float = 1.0, name: Optional[str] = None) -> AnalyticKernel:
    """Scale-free graphon W(x, y) = ((1 - x)(1 - y))^gamma."""
    gamma = float(gamma)
    if gamma <= 0.0:
        raise ConfigError("scale-free exponent must be positive")
    return AnalyticKernel(
        lambda x, y: ((1.0 - x) * (1.0 - y)) ** gamma,
        bound=1.0,
        name=name or f"scalefree:{gamma:g}",
        is_graphon=True,
    )


def parse_number(text: str) -> float:
    """Parse a decimal or a fraction such as ``1/3``."""
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigError(f"not a number: {text!r}") from e


def parse_numbers(text: str) -> List[float]:
    return [parse_number(part) for part in text.split(",") if part.strip()]


def load_step_csv(path: Union[str, Path], breakpoints: Optional[Sequence[float]] = None,
                  name: Optional[str] = None) -> StepKernel:
    """Load a k x k step-kernel matrix from a plain decimal CSV file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"step kernel matrix not found: {path}")
    values = np.loadtxt(path, delimiter=",", ndmin=2)
    if breakpoints is None:
        return StepKernel.equipartition(values, name=name or f"step:{path.name}")
    return StepKernel(breakpoints, values, name=name or f"step:{path.name}")


def write_step_csv(kernel: StepKernel, path: Union[str, Path]) -> None:
    np.savetxt(path, kernel.values, delimiter=",", fmt="%.17g")


def parse_kernel_spec(text: str, base_dir: Optional[Union[str, Path]] = None) -> Kernel:
    """
    Build a kernel from the config grammar.

    Grammar:
        constant:p
        step:<matrix.csv>[:<b0,b1,...,bk>]
        cayley:<profile>:<params>
        scalefree:<gamma>

    Args:
        text: spec string
        base_dir: directory that relative CSV paths are resolved against

    Returns:
        The kernel
    """
    kind, _, rest = text.strip().partition(":")
    if kind == "constant":
        return ConstantKernel(parse_number(rest), name=text.strip())
    if kind == "step":
        path_text, _, breaks_text = rest.partition(":")
        path = Path(path_text)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        breaks = parse_numbers(breaks_text) if breaks_text else None
        return load_step_csv(path, breaks, name=text.strip())
    if kind == "cayley":
        profile, _, params = rest.partition(":")
        return cayley_kernel(profile, parse_numbers(params), name=text.strip())
    if kind == "scalefree":
        return scalefree_kernel(parse_number(rest) if rest else 1.0, name=text.strip())
    raise ConfigError(f"unrecognized kernel spec: {text!r}")
