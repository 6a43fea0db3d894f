"""
Coefficients and initial data for graphon particle systems.
Holds the drift/interaction/diffusion triple with its declared Lipschitz
constants and bounds, and the piecewise-constant label-to-law initial datum.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from config import TOLERANCES
from errors import CoefficientError, ConfigError, ShapeError
from graphon import IntervalUnion, LabelPartition, StepKernel, parse_number, parse_numbers

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

Scalar = Callable[[np.ndarray], np.ndarray]
Pairwise = Callable[[np.ndarray, np.ndarray], np.ndarray]


def zero_scalar(theta: np.ndarray) -> np.ndarray:
    return np.zeros_like(np.asarray(theta, dtype=float))


def zero_pairwise(theta: np.ndarray, other: np.ndarray) -> np.ndarray:
    theta, other = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(other, dtype=float))
    return np.zeros(theta.shape)


def unit_scalar(theta: np.ndarray) -> np.ndarray:
    return np.ones_like(np.asarray(theta, dtype=float))


@dataclass(frozen=True)
class CoefficientSet:
    """
    Drift F, interaction Gamma (first argument is the particle's own state)
    and diffusion sigma, all vectorized over numpy arrays.

    ``separable`` optionally lists pairs (f_r, g_r) with
    Gamma(a, b) = sum_r f_r(a) g_r(b); simulators use it to aggregate the
    interaction without forming pairwise matrices.
    """

    name: str
    drift: Scalar
    interaction: Pairwise
    diffusion: Scalar
    lipschitz: Dict[str, float]
    bounds: Dict[str, float]
    separable: Optional[Tuple[Tuple[Scalar, Scalar], ...]] = None
    description: str = ""
    zero_interaction: bool = False
    zero_diffusion: bool = False

    def interaction_bound(self) -> float:
        return float(self.bounds.get("interaction", np.inf))

    def drift_bound(self) -> float:
        return float(self.bounds.get("drift", np.inf))


def check_lipschitz(coeffs: CoefficientSet,
                    pairs: int = 10_000,
                    seed: int = 0,
                    span: float = 10.0,
                    raise_on_violation: bool = True) -> Dict[str, float]:
    """
    Randomized check of declared Lipschitz constants and bounds.

    The interaction is checked separately in each argument.

    Args:
        coeffs: coefficient set to verify
        pairs: number of sampled pairs per check
        seed: sampling seed
        span: states are drawn uniformly from [-span, span]
        raise_on_violation: raise CoefficientError instead of only reporting

    Returns:
        Dict of the largest observed difference quotients and magnitudes
    """
    rng = np.random.default_rng(seed)
    a, b, c = (rng.uniform(-span, span, pairs) for _ in range(3))
    gap = np.abs(a - b)
    gap[gap == 0.0] = np.inf

    report = {
        "drift_lipschitz": float(np.max(np.abs(coeffs.drift(a) - coeffs.drift(b)) / gap)),
        "diffusion_lipschitz": float(np.max(np.abs(coeffs.diffusion(a) - coeffs.diffusion(b)) / gap)),
        "interaction_lipschitz_first": float(np.max(np.abs(coeffs.interaction(a, c) - coeffs.interaction(b, c)) / gap)),
        "interaction_lipschitz_second": float(np.max(np.abs(coeffs.interaction(c, a) - coeffs.interaction(c, b)) / gap)),
        "drift_bound": float(np.max(np.abs(coeffs.drift(a)))),
        "diffusion_bound": float(np.max(np.abs(coeffs.diffusion(a)))),
        "interaction_bound": float(np.max(np.abs(coeffs.interaction(a, c)))),
    }
    slack = TOLERANCES["lipschitz_slack"]
    limits = {
        "drift_lipschitz": coeffs.lipschitz.get("drift", np.inf),
        "diffusion_lipschitz": coeffs.lipschitz.get("diffusion", np.inf),
        "interaction_lipschitz_first": coeffs.lipschitz.get("interaction", np.inf),
        "interaction_lipschitz_second": coeffs.lipschitz.get("interaction", np.inf),
        "drift_bound": coeffs.bounds.get("drift", np.inf),
        "diffusion_bound": coeffs.bounds.get("diffusion", np.inf),
        "interaction_bound": coeffs.bounds.get("interaction", np.inf),
    }
    violations = [key for key, value in report.items() if value > limits[key] * (1.0 + slack) + slack]
    if violations:
        message = f"{coeffs.name} violates declared constants: " + ", ".join(
            f"{key}={report[key]:.6g} > {limits[key]:.6g}" for key in violations
        )
        if raise_on_violation:
            raise CoefficientError(message)
        logger.warning(message)
    return report


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------

class Distribution:
    """Law on the real line sampled through its quantile function."""

    spec: str = ""

    def quantile(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def cell_masses(self, faces: np.ndarray) -> np.ndarray:
        """Probability of each grid cell; mass beyond the grid is folded into the edge cells."""
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def second_moment(self) -> float:
        raise NotImplementedError

    def sd(self) -> float:
        return float(np.sqrt(max(self.second_moment - self.mean ** 2, 0.0)))

    def __str__(self) -> str:
        return self.spec


def _fold_cdf(cdf: np.ndarray) -> np.ndarray:
    masses = np.diff(cdf)
    masses[0] += cdf[0]
    masses[-1] += 1.0 - cdf[-1]
    return masses


@dataclass(frozen=True)
class PointMass(Distribution):
    location: float

    @property
    def spec(self) -> str:
        return f"pointmass:{self.location:.17g}"

    def quantile(self, u: np.ndarray) -> np.ndarray:
        return np.full(np.shape(u), self.location)

    def cell_masses(self, faces: np.ndarray) -> np.ndarray:
        masses = np.zeros(faces.size - 1)
        index = int(np.clip(np.searchsorted(faces, self.location, side="right") - 1, 0, masses.size - 1))
        masses[index] = 1.0
        return masses

    @property
    def mean(self) -> float:
        return self.location

    @property
    def second_moment(self) -> float:
        return self.location ** 2


@dataclass(frozen=True)
class Gaussian(Distribution):
    loc: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0.0:
            raise ConfigError("Gaussian standard deviation must be positive")

    @property
    def spec(self) -> str:
        return f"gaussian:{self.loc:.17g},{self.scale:.17g}"

    def quantile(self, u: np.ndarray) -> np.ndarray:
        return self.loc + self.scale * special.ndtri(u)

    def cell_masses(self, faces: np.ndarray) -> np.ndarray:
        return _fold_cdf(special.ndtr((faces - self.loc) / self.scale))

    @property
    def mean(self) -> float:
        return self.loc

    @property
    def second_moment(self) -> float:
        return self.loc ** 2 + self.scale ** 2


@dataclass(frozen=True)
class Uniform(Distribution):
    low: float
    high: float

    def __post_init__(self):
        if not self.high > self.low:
            raise ConfigError("uniform distribution needs low < high")

    @property
    def spec(self) -> str:
        return f"uniform:{self.low:.17g},{self.high:.17g}"

    def quantile(self, u: np.ndarray) -> np.ndarray:
        return self.low + (self.high - self.low) * np.asarray(u)

    def cell_masses(self, faces: np.ndarray) -> np.ndarray:
        return _fold_cdf(np.clip((faces - self.low) / (self.high - self.low), 0.0, 1.0))

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    @property
    def second_moment(self) -> float:
        return (self.low ** 2 + self.low * self.high + self.high ** 2) / 3.0


@dataclass(frozen=True)
class Empirical(Distribution):
    samples: Tuple[float, ...]
    source: str = ""

    def __post_init__(self):
        values = np.asarray(self.samples, dtype=float)
        if values.size == 0:
            raise ConfigError("empirical distribution needs at least one sample")
        if not np.all(np.isfinite(values)):
            raise ConfigError("empirical samples must be finite (finite second moment)")

    @property
    def spec(self) -> str:
        return f"empirical:{self.source}" if self.source else f"empirical[{len(self.samples)}]"

    def _sorted(self) -> np.ndarray:
        return np.sort(np.asarray(self.samples, dtype=float))

    def quantile(self, u: np.ndarray) -> np.ndarray:
        return np.quantile(self._sorted(), np.asarray(u), method="inverted_cdf")

    def cell_masses(self, faces: np.ndarray) -> np.ndarray:
        values = np.clip(self._sorted(), faces[0], faces[-1])
        counts, _ = np.histogram(values, bins=faces)
        return counts / values.size

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples))

    @property
    def second_moment(self) -> float:
        return float(np.mean(np.square(self.samples)))


@dataclass(frozen=True)
class Mixture(Distribution):
    """Finite mixture; quantile sampling selects the component by slicing [0, 1)."""

    components: Tuple[Distribution, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        if len(self.components) != len(self.weights) or not self.components:
            raise ConfigError("mixture needs one weight per component")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-12:
            raise ConfigError("mixture weights must be nonnegative and sum to 1")

    @property
    def spec(self) -> str:
        return "mixture:" + "|".join(f"{w:.17g}*{c.spec}" for w, c in zip(self.weights, self.components))

    def quantile(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        edges = np.concatenate([[0.0], np.cumsum(self.weights)])
        edges[-1] = 1.0
        which = np.clip(np.searchsorted(edges, u, side="right") - 1, 0, len(self.weights) - 1)
        result = np.empty(u.shape)
        for index, component in enumerate(self.components):
            mask = which == index
            if np.any(mask):
                local = (u[mask] - edges[index]) / self.weights[index]
                result[mask] = component.quantile(np.clip(local, 2.0 ** -54, np.nextafter(1.0, 0.0)))
        return result

    def cell_masses(self, faces: np.ndarray) -> np.ndarray:
        return sum(w * c.cell_masses(faces) for w, c in zip(self.weights, self.components))

    @property
    def mean(self) -> float:
        return float(sum(w * c.mean for w, c in zip(self.weights, self.components)))

    @property
    def second_moment(self) -> float:
        return float(sum(w * c.second_moment for w, c in zip(self.weights, self.components)))


def parse_distribution_spec(text: str, base_dir: Optional[Union[str, Path]] = None) -> Distribution:
    """
    Build a distribution from the config grammar.

    Grammar: pointmass:a | gaussian:mean,sd | uniform:a,b | empirical:<csv> |
    mixture:<w1>*<dist1>|<w2>*<dist2>...
    """
    kind, _, rest = text.strip().partition(":")
    if kind == "pointmass":
        return PointMass(parse_number(rest))
    if kind == "gaussian":
        params = parse_numbers(rest)
        if len(params) != 2:
            raise ConfigError(f"gaussian needs mean,sd: {text!r}")
        return Gaussian(*params)
    if kind == "uniform":
        params = parse_numbers(rest)
        if len(params) != 2:
            raise ConfigError(f"uniform needs a,b: {text!r}")
        return Uniform(*params)
    if kind == "empirical":
        path = Path(rest)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        if not path.exists():
            raise ConfigError(f"empirical sample file not found: {path}")
        samples = np.loadtxt(path, delimiter=",", ndmin=1).ravel()
        return Empirical(tuple(float(s) for s in samples), source=rest)
    if kind == "mixture":
        weights, components = [], []
        for part in rest.split("|"):
            weight, _, component = part.partition("*")
            weights.append(parse_number(weight))
            components.append(parse_distribution_spec(component, base_dir))
        return Mixture(tuple(components), tuple(weights))
    raise ConfigError(f"unrecognized distribution spec: {text!r}")


# ---------------------------------------------------------------------------
# Initial datum
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitialDatum:
    """Piecewise-constant map from label classes to initial laws."""

    partition: LabelPartition
    distributions: Tuple[Distribution, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.distributions) != len(self.partition):
            raise ShapeError(
                f"{len(self.partition)} label classes but {len(self.distributions)} distributions"
            )

    @classmethod
    def uniform_law(cls, distribution: Distribution) -> "InitialDatum":
        """Same law for every label (a single class)."""
        return cls(LabelPartition.single(), (distribution,))

    @classmethod
    def from_breakpoints(cls, breakpoints: Sequence[float], distributions: Sequence[Distribution]) -> "InitialDatum":
        return cls(LabelPartition.from_breakpoints(breakpoints), tuple(distributions))

    @classmethod
    def from_blocks(cls, kernel: StepKernel, distributions: Sequence[Distribution]) -> "InitialDatum":
        """One law per kernel block; blocks with equal laws are merged into one class."""
        if len(distributions) != kernel.k:
            raise ShapeError(f"need {kernel.k} block distributions, got {len(distributions)}")
        classes: List[IntervalUnion] = []
        laws: List[Distribution] = []
        for index, law in enumerate(distributions):
            block = kernel.block(index)
            if law in laws:
                position = laws.index(law)
                classes[position] = classes[position].union(block)
            else:
                laws.append(law)
                classes.append(block)
        return cls(LabelPartition(classes), tuple(laws))

    def class_of(self, labels: np.ndarray) -> np.ndarray:
        return self.partition.class_of(labels)

    def law_of(self, label: float) -> Distribution:
        return self.distributions[int(self.class_of(np.array([label]))[0])]

    def sample(self, labels: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
        """Map one uniform per label through the quantile function of its class law."""
        classes = self.class_of(labels)
        states = np.empty(np.shape(labels))
        for index, law in enumerate(self.distributions):
            mask = classes == index
            if np.any(mask):
                states[mask] = law.quantile(uniforms[mask])
        return states

    def block_laws(self, kernel: StepKernel) -> List[Distribution]:
        """Law of every kernel block; each block must sit inside one label class."""
        laws = []
        for index in range(kernel.k):
            lo, hi = kernel.breakpoints[index], kernel.breakpoints[index + 1]
            owners = [c for c, label_class in enumerate(self.partition.classes)
                      if label_class.overlap(lo, hi) > 1e-12]
            if len(owners) != 1 or abs(self.partition.classes[owners[0]].overlap(lo, hi) - (hi - lo)) > 1e-12:
                raise ShapeError(f"block {index} of {kernel.name} is split between initial label classes")
            laws.append(self.distributions[owners[0]])
        return laws

    def pooled(self) -> "InitialDatum":
        """The label-independent datum whose law is the class-measure mixture of this one."""
        if len(self.distributions) == 1:
            return self
        weights = [c.measure for c in self.partition.classes]
        total = sum(weights)
        law = Mixture(tuple(self.distributions), tuple(w / total for w in weights))
        return InitialDatum.uniform_law(law)

    def check_moments(self) -> None:
        for index, law in enumerate(self.distributions):
            if not np.isfinite(law.second_moment):
                raise ConfigError(f"initial law of class {index} has no finite second moment")
