"""
Finite-volume solver for the coupled Fokker-Planck system of a step-kernel
graphon particle system.

Each block density follows
    d/dt rho^i = -d/dtheta( b_i rho^i ) + 1/2 d^2/dtheta^2( sigma^2 rho^i ),
    b_i(theta) = F(theta) + sum_j w_ij |S_j| int Gamma(theta, theta') rho^j(theta') dtheta',
on [-L, L] with no-flux boundaries. Fluxes use exponential fitting
(Scharfetter-Gummel / Chang-Cooper weights), the transport-diffusion step is
implicit and the interaction drift is lagged by one step.
"""
import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from coefficients import CoefficientSet, Distribution, Gaussian, InitialDatum
from config import GRID_DEFAULTS, TOLERANCES
from errors import ConfigError, ShapeError, SolverFaultError, StabilityError
from graphon import ConstantKernel, Kernel, StepKernel, split_block
from registry import resolve_coefficients

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

_SMALL_PECLET = 1e-6


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid of M cells on [-L, L]."""

    L: float = GRID_DEFAULTS["L"]
    M: int = GRID_DEFAULTS["M"]

    def __post_init__(self):
        if not self.L > 0:
            raise ShapeError(f"grid half-width must be positive, got {self.L}")
        if self.M < 8:
            raise ShapeError(f"grid needs at least 8 cells, got {self.M}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.M

    @property
    def faces(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.M + 1)

    @property
    def centers(self) -> np.ndarray:
        return -self.L + self.h * (np.arange(self.M) + 0.5)

    def refine(self) -> "SpatialGrid":
        return SpatialGrid(self.L, 2 * self.M)

    def widen(self) -> "SpatialGrid":
        """Twice the domain at the same cell width."""
        return SpatialGrid(2.0 * self.L, 2 * self.M)


@dataclass
class DensityGrid:
    """
    Time series of block densities (cell averages).

    Attributes:
        grid: spatial grid
        times: snapshot times
        densities: array of shape (snapshots, k, M)
        provenance: kernel id and coefficient set
    """

    grid: SpatialGrid
    times: np.ndarray
    densities: np.ndarray
    provenance: Dict[str, str] = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.densities.shape[1]

    def time_index(self, t: float) -> int:
        index = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[index] - t) > 1e-9 * max(1.0, abs(t)):
            raise ShapeError(f"time {t} is not a stored snapshot")
        return index

    def density(self, block: int, t: float) -> np.ndarray:
        return self.densities[self.time_index(t), block]

    def final(self) -> np.ndarray:
        return self.densities[-1]

    def masses(self) -> np.ndarray:
        """h * sum_c rho_c for every snapshot and block."""
        return self.grid.h * self.densities.sum(axis=2)


def densities_from_laws(laws: Sequence[Distribution], grid: SpatialGrid) -> np.ndarray:
    """Cell-average densities of each law; mass outside [-L, L] goes to the edge cells."""
    faces = grid.faces
    return np.array([law.cell_masses(faces) / grid.h for law in laws])


def initial_densities(kernel: Kernel, init: InitialDatum, grid: SpatialGrid) -> np.ndarray:
    """Block densities of an initial datum that is constant on every block of ``kernel``."""
    return densities_from_laws(init.block_laws(_as_step(kernel)), grid)


def default_half_width(laws: Sequence[Distribution], coeffs: CoefficientSet, T: float) -> float:
    """Largest initial |mean| + 8 * (largest initial sd + drift bound + interaction bound) * max(1, T)."""
    offset = max(abs(law.mean) for law in laws)
    spread = max(law.sd() for law in laws)
    bounds = 0.0
    for value in (coeffs.drift_bound(), coeffs.interaction_bound()):
        if np.isfinite(value):
            bounds += value
    return offset + 8.0 * (spread + bounds) * max(1.0, T)


def _as_step(kernel: Kernel) -> StepKernel:
    if isinstance(kernel, ConstantKernel):
        return kernel.as_step()
    if not isinstance(kernel, StepKernel):
        raise ShapeError(f"the Fokker-Planck solver needs a step kernel, got {kernel.name}")
    return kernel


def _bernoulli(z: np.ndarray) -> np.ndarray:
    """z / (exp(z) - 1), continuous at 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _SMALL_PECLET
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 - 0.5 * z, safe / np.expm1(safe))


def _time_steps(T: float, dt: float) -> int:
    if not (T > 0 and dt > 0 and T >= dt):
        raise ConfigError(f"need T >= dt > 0, got T={T}, dt={dt}")
    ratio = T / dt
    steps = int(round(ratio))
    if abs(ratio - steps) > 1e-6 * ratio:
        raise ConfigError(f"T/dt = {ratio:.9g} is not an integer number of steps")
    return steps


class _FluxOperator:
    """Exponentially fitted face coefficients and the implicit tridiagonal step."""

    def __init__(self, grid: SpatialGrid, coeffs: CoefficientSet, dt: float):
        self.grid = grid
        self.dt = dt
        h = grid.h
        interior = grid.faces[1:-1]
        centers = grid.centers
        self.diffusion_faces = 0.5 * coeffs.diffusion(interior) ** 2
        centre_diffusion = 0.5 * coeffs.diffusion(centers) ** 2
        # -(d/dtheta D) moves into the advective part of the flux
        self.diffusion_gradient = np.diff(centre_diffusion) / h
        self.degenerate = self.diffusion_faces <= 0.0

    def coefficients(self, drift: np.ndarray):
        """Return (a, c) with face flux a * rho_left - c * rho_right at interior faces."""
        h = self.grid.h
        advection = drift - self.diffusion_gradient
        diffusion = self.diffusion_faces
        a = np.empty_like(advection)
        c = np.empty_like(advection)
        fitted = ~self.degenerate
        if np.any(fitted):
            peclet = advection[fitted] * h / diffusion[fitted]
            scale = diffusion[fitted] / h
            a[fitted] = scale * _bernoulli(-peclet)
            c[fitted] = scale * _bernoulli(peclet)
        if np.any(self.degenerate):
            upwind = advection[self.degenerate]
            a[self.degenerate] = np.maximum(upwind, 0.0)
            c[self.degenerate] = -np.minimum(upwind, 0.0)
        return a, c

    def step(self, rho: np.ndarray, drift: np.ndarray) -> np.ndarray:
        a, c = self.coefficients(drift)
        ratio = self.dt / self.grid.h
        M = rho.size
        banded = np.zeros((3, M))
        diagonal = np.ones(M)
        diagonal[:-1] += ratio * a
        diagonal[1:] += ratio * c
        banded[0, 1:] = -ratio * c
        banded[1] = diagonal
        banded[2, :-1] = -ratio * a
        return linalg.solve_banded((1, 1), banded, rho, check_finite=False)


def _to_faces(values: np.ndarray) -> np.ndarray:
    """Average cell-centre values onto the interior faces."""
    return 0.5 * (values[:-1] + values[1:])


def _courant_check(grid: SpatialGrid, coeffs: CoefficientSet, coupling: np.ndarray,
                   interaction: Optional[np.ndarray], flux: _FluxOperator, dt: float) -> float:
    drift = float(np.max(np.abs(coeffs.drift(grid.faces[1:-1]))))
    if interaction is not None:
        drift += float(np.max(np.abs(coupling).sum(axis=1))) * float(np.max(np.abs(interaction)))
    drift += float(np.max(np.abs(flux.diffusion_gradient), initial=0.0))
    courant = dt * drift / grid.h
    limit = TOLERANCES["courant"]
    if courant > limit:
        raise StabilityError(courant, limit, 0.9 * grid.h / drift)
    return courant


def solve_fp_system(kernel: Kernel,
                    coeffs: CoefficientSet,
                    init_densities: np.ndarray,
                    grid: SpatialGrid,
                    T: float,
                    dt: float,
                    snapshot_every: int = 1) -> DensityGrid:
    """
    Advance the k coupled Fokker-Planck equations of a step kernel.

    Args:
        kernel: step (or constant) kernel
        coeffs: drift, interaction and diffusion
        init_densities: (k, M) nonnegative cell averages, each of unit mass
        grid: spatial grid
        T: horizon
        dt: time step
        snapshot_every: store every n-th step (the final step is always stored)

    Returns:
        DensityGrid with the stored snapshots
    """
    kernel = _as_step(kernel)
    steps = _time_steps(T, dt)
    dt = T / steps
    rho = np.array(init_densities, dtype=float, copy=True)
    if rho.shape != (kernel.k, grid.M):
        raise ShapeError(f"expected initial densities of shape {(kernel.k, grid.M)}, got {rho.shape}")
    if np.any(rho < 0) or np.any(np.abs(grid.h * rho.sum(axis=1) - 1.0) > TOLERANCES["mass"]):
        raise ShapeError("initial densities must be nonnegative with unit mass on the grid")
    if snapshot_every < 1:
        raise ConfigError("snapshot_every must be at least 1")

    started = time.time()
    h = grid.h
    interior = grid.faces[1:-1]
    base_drift = coeffs.drift(interior)
    coupling = kernel.values * kernel.measures[None, :]
    interaction = None
    if not coeffs.zero_interaction:
        interaction = coeffs.interaction(grid.centers[:, None], grid.centers[None, :])
    flux = _FluxOperator(grid, coeffs, dt)
    courant = _courant_check(grid, coeffs, coupling, interaction, flux, dt)
    logger.info(f"Solving {kernel.k}-block Fokker-Planck system on {kernel.name}: "
                f"M={grid.M}, L={grid.L}, {steps} steps, Courant {courant:.3f}")

    times = [0.0]
    snapshots = [rho.copy()]
    negativity = TOLERANCES["negativity"]
    for n in range(steps):
        if interaction is not None:
            integrals = [_to_faces(h * (interaction @ rho[j])) for j in range(kernel.k)]
        updated = np.empty_like(rho)
        for i in range(kernel.k):
            drift = base_drift.copy()
            if interaction is not None:
                for j in range(kernel.k):
                    drift += coupling[i, j] * integrals[j]
            updated[i] = flux.step(rho[i], drift)
        lowest = float(updated.min())
        if lowest < negativity:
            raise SolverFaultError(f"negative density {lowest:.3e}", step=n + 1)
        if lowest < 0.0:
            logger.debug(f"Clipped negative density {lowest:.3e} at step {n + 1}")
            np.maximum(updated, 0.0, out=updated)
        rho = updated
        mass_error = float(np.max(np.abs(h * rho.sum(axis=1) - 1.0)))
        if mass_error > TOLERANCES["mass"]:
            raise SolverFaultError(f"mass drifted by {mass_error:.3e}", step=n + 1)
        if (n + 1) % snapshot_every == 0 or n + 1 == steps:
            times.append((n + 1) * dt)
            snapshots.append(rho.copy())

    logger.info(f"Fokker-Planck solve finished in {time.time() - started:.2f}s ({len(times)} snapshots)")
    return DensityGrid(
        grid=grid,
        times=np.array(times),
        densities=np.array(snapshots),
        provenance={"kernel": kernel.name, "coefficients": coeffs.name},
    )


def solve_mckean_vlasov(p: float,
                        coeffs: CoefficientSet,
                        init_density: Union[np.ndarray, Distribution],
                        grid: SpatialGrid,
                        T: float,
                        dt: float,
                        snapshot_every: int = 1) -> DensityGrid:
    """Classical McKean-Vlasov equation with interaction strength ``p`` (one block, w = p)."""
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"interaction strength must lie in [0, 1], got {p}")
    if isinstance(init_density, Distribution):
        init_density = densities_from_laws([init_density], grid)[0]
    kernel = StepKernel([0.0, 1.0], [[p]], name=f"constant:{p:.17g}")
    return solve_fp_system(kernel, coeffs, np.asarray(init_density)[None, :], grid, T, dt, snapshot_every)


def _parent_blocks(kernel: StepKernel, refined: StepKernel, index: int) -> List[int]:
    """Parent block of every refined block; the refinement must add one breakpoint inside ``index``."""
    if refined.k != kernel.k + 1:
        raise ShapeError("refined kernel must have exactly one more block")
    inserted = refined.breakpoints[index + 1]
    expected = np.insert(kernel.breakpoints, index + 1, inserted)
    if not (kernel.breakpoints[index] < inserted < kernel.breakpoints[index + 1]) \
            or not np.allclose(refined.breakpoints, expected, rtol=0.0, atol=1e-15):
        raise ShapeError(f"refined kernel does not split block {index} of {kernel.name}")
    return list(range(index + 1)) + list(range(index, kernel.k))


def split_block_refinement_check(kernel: StepKernel,
                                 index: int,
                                 ratio: float,
                                 refined: Optional[StepKernel] = None,
                                 coeffs: Optional[CoefficientSet] = None,
                                 init: Optional[Distribution] = None,
                                 grid: Optional[SpatialGrid] = None,
                                 T: float = 0.5,
                                 dt: float = 1e-3,
                                 tol: Optional[float] = None) -> bool:
    """
    Solve the system on ``kernel`` and on its refinement with block ``index``
    split at ``ratio``; the refined blocks must reproduce their parent densities.

    Args:
        kernel: step kernel
        index: block to split
        ratio: split position within the block, in (0, 1)
        refined: refined kernel to test (defaults to the exact split)
        coeffs: coefficient set (defaults to the noisy Kuramoto set)
        init: common initial law of every block (defaults to Gaussian(0.5, 1))
        grid: spatial grid (defaults to L=8, M=200)
        T: horizon
        dt: time step
        tol: max-abs tolerance (defaults to 1e-12)

    Returns:
        True iff every refined block density equals its parent's within ``tol``
    """
    if not 0 <= index < kernel.k:
        raise ShapeError(f"block index {index} out of range for {kernel.k} blocks")
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must lie in (0, 1), got {ratio}")
    if refined is None:
        refined = split_block(kernel, index, ratio)
    parents = _parent_blocks(kernel, refined, index)
    if coeffs is None:
        coeffs = resolve_coefficients("kuramoto")
    law = init if init is not None else Gaussian(0.5, 1.0)
    grid = grid if grid is not None else SpatialGrid(8.0, 200)
    tol = TOLERANCES["split_refinement"] if tol is None else tol

    density = densities_from_laws([law], grid)[0]
    coarse = solve_fp_system(kernel, coeffs, np.tile(density, (kernel.k, 1)), grid, T, dt)
    fine = solve_fp_system(refined, coeffs, np.tile(density, (refined.k, 1)), grid, T, dt)
    deviation = float(np.max(np.abs(fine.densities - coarse.densities[:, parents, :])))
    logger.info(f"Split-block check on {kernel.name} (block {index}, ratio {ratio}): max deviation {deviation:.3e}")
    return deviation <= tol


def write_density_csv(solution: DensityGrid, path: Union[str, Path], times: Optional[Sequence[float]] = None) -> Path:
    """Density snapshots as ``time, block, cell_center, density`` rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    indices = range(solution.times.size) if times is None else [solution.time_index(t) for t in times]
    centers = solution.grid.centers
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["time", "block", "cell_center", "density"])
        for n in indices:
            for block in range(solution.k):
                for center, value in zip(centers, solution.densities[n, block]):
                    writer.writerow([f"{solution.times[n]:.17g}", block, f"{center:.17g}", f"{value:.17g}"])
    logger.info(f"Wrote {len(indices)} density snapshots to {path}")
    return path
