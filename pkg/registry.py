"""
Built-in kernels, coefficient sets and initial distributions.
"""
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from coefficients import (
    CoefficientSet,
    Distribution,
    parse_distribution_spec,
    unit_scalar,
    zero_pairwise,
    zero_scalar,
)
from errors import ConfigError
from graphon import ConstantKernel, Kernel, StepKernel, cayley_kernel, parse_kernel_spec, scalefree_kernel


def _sine_coupling(theta: np.ndarray, other: np.ndarray) -> np.ndarray:
    return np.sin(other - theta)


def _tanh_coupling(theta: np.ndarray, other: np.ndarray) -> np.ndarray:
    return np.tanh(other - theta)


def _negative_tanh(theta: np.ndarray) -> np.ndarray:
    return -np.tanh(theta)


def _negative_sin(theta: np.ndarray) -> np.ndarray:
    return -np.sin(theta)


# sin(b - a) = cos(a) sin(b) - sin(a) cos(b)
_SINE_SEPARABLE = ((np.cos, np.sin), (_negative_sin, np.cos))


KERNELS = {
    "fig1-constant": {
        "description": "Constant graphon 1/3 (classical mean-field interaction)",
        "build": lambda: ConstantKernel(1.0 / 3.0, name="fig1-constant"),
    },
    "fig1-disconnected": {
        "description": "Two disconnected components [0,1/3) and [1/3,1] with weights 1 and 1/2; degree 1/3 everywhere",
        "build": lambda: StepKernel([0.0, 1.0 / 3.0, 1.0], [[1.0, 0.0], [0.0, 0.5]], name="fig1-disconnected"),
    },
    "fig1-cayley": {
        "description": "Cayley graphon 1/3 + 1/4 cos(2 pi (x - y)); degree 1/3 everywhere",
        "build": lambda: cayley_kernel("cosine", [1.0 / 3.0, 0.25], name="fig1-cayley"),
    },
    "fig2-step3": {
        "description": "Three-block step kernel on thirds approximating the scale-free graphon",
        "build": lambda: StepKernel.equipartition(
            np.outer([5.0 / 6.0, 0.5, 1.0 / 6.0], [5.0 / 6.0, 0.5, 1.0 / 6.0]), name="fig2-step3"
        ),
    },
    "fig2-scalefree": {
        "description": "Scale-free graphon (1 - x)(1 - y)",
        "build": lambda: scalefree_kernel(1.0, name="fig2-scalefree"),
    },
    "h-4block": {
        "description": "Four quarter blocks with unequal rows whose degrees are constant on the halves [0,1/2) and [1/2,1]",
        "build": lambda: StepKernel.equipartition(
            [[0.8, 0.2, 0.4, 0.4],
             [0.2, 0.8, 0.4, 0.4],
             [0.4, 0.4, 0.6, 0.0],
             [0.4, 0.4, 0.0, 0.6]],
            name="h-4block",
        ),
    },
    "h-violating-2block": {
        "description": "Halves with weights 1 and 0; unequal degrees under a common initial law",
        "build": lambda: StepKernel([0.0, 0.5, 1.0], [[1.0, 0.0], [0.0, 0.0]], name="h-violating-2block"),
    },
}

COEFFICIENTS = {
    "zero": {
        "description": "F = 0, Gamma = 0, sigma = 0 (frozen states)",
        "build": lambda: CoefficientSet(
            name="zero", drift=zero_scalar, interaction=zero_pairwise, diffusion=zero_scalar,
            lipschitz={"drift": 0.0, "interaction": 0.0, "diffusion": 0.0},
            bounds={"drift": 0.0, "interaction": 0.0, "diffusion": 0.0},
            zero_interaction=True, zero_diffusion=True,
        ),
    },
    "heat": {
        "description": "F = 0, Gamma = 0, sigma = 1 (Brownian motion)",
        "build": lambda: CoefficientSet(
            name="heat", drift=zero_scalar, interaction=zero_pairwise, diffusion=unit_scalar,
            lipschitz={"drift": 0.0, "interaction": 0.0, "diffusion": 0.0},
            bounds={"drift": 0.0, "interaction": 0.0, "diffusion": 1.0},
            zero_interaction=True,
        ),
    },
    "kuramoto": {
        "description": "F = 0, Gamma(a, b) = sin(b - a), sigma = 1 (noisy Kuramoto)",
        "build": lambda: CoefficientSet(
            name="kuramoto", drift=zero_scalar, interaction=_sine_coupling, diffusion=unit_scalar,
            lipschitz={"drift": 0.0, "interaction": 1.0, "diffusion": 0.0},
            bounds={"drift": 0.0, "interaction": 1.0, "diffusion": 1.0},
            separable=_SINE_SEPARABLE,
        ),
    },
    "kuramoto-deterministic": {
        "description": "F = 0, Gamma(a, b) = sin(b - a), sigma = 0",
        "build": lambda: CoefficientSet(
            name="kuramoto-deterministic", drift=zero_scalar, interaction=_sine_coupling, diffusion=zero_scalar,
            lipschitz={"drift": 0.0, "interaction": 1.0, "diffusion": 0.0},
            bounds={"drift": 0.0, "interaction": 1.0, "diffusion": 0.0},
            separable=_SINE_SEPARABLE, zero_diffusion=True,
        ),
    },
    "tanh-drift": {
        "description": "F = -tanh, Gamma(a, b) = sin(b - a), sigma = 1",
        "build": lambda: CoefficientSet(
            name="tanh-drift", drift=_negative_tanh, interaction=_sine_coupling, diffusion=unit_scalar,
            lipschitz={"drift": 1.0, "interaction": 1.0, "diffusion": 0.0},
            bounds={"drift": 1.0, "interaction": 1.0, "diffusion": 1.0},
            separable=_SINE_SEPARABLE,
        ),
    },
    "tanh-attraction": {
        "description": "F = 0, Gamma(a, b) = tanh(b - a), sigma = 1 (non-separable interaction)",
        "build": lambda: CoefficientSet(
            name="tanh-attraction", drift=zero_scalar, interaction=_tanh_coupling, diffusion=unit_scalar,
            lipschitz={"drift": 0.0, "interaction": 1.0, "diffusion": 0.0},
            bounds={"drift": 0.0, "interaction": 1.0, "diffusion": 1.0},
        ),
    },
}

DISTRIBUTIONS = {
    "standard-gaussian": {"description": "Gaussian(0, 1)", "spec": "gaussian:0,1"},
    "narrow-gaussian": {"description": "Gaussian(0, 0.5)", "spec": "gaussian:0,0.5"},
    "origin": {"description": "Point mass at 0", "spec": "pointmass:0"},
    "point-two": {"description": "Point mass at 2", "spec": "pointmass:2"},
    "symmetric-uniform": {"description": "Uniform(-1, 1)", "spec": "uniform:-1,1"},
}


def resolve_kernel(text: str, base_dir: Optional[Union[str, Path]] = None) -> Kernel:
    """Registry name or kernel spec string to a kernel."""
    key = text.strip()
    if key in KERNELS:
        return KERNELS[key]["build"]()
    return parse_kernel_spec(key, base_dir)


def resolve_coefficients(name: str) -> CoefficientSet:
    key = name.strip()
    if key not in COEFFICIENTS:
        raise ConfigError(f"unknown coefficient set {name!r}; available: {', '.join(sorted(COEFFICIENTS))}")
    return COEFFICIENTS[key]["build"]()


def resolve_distribution(text: str, base_dir: Optional[Union[str, Path]] = None) -> Distribution:
    """Registry name or distribution spec string to a distribution."""
    key = text.strip()
    if key in DISTRIBUTIONS:
        return parse_distribution_spec(DISTRIBUTIONS[key]["spec"])
    return parse_distribution_spec(key, base_dir)


def registry_list() -> Dict[str, List[Dict[str, str]]]:
    """Every registered name with its description, sorted by name within each category."""
    return {
        "kernels": [{"name": name, "description": KERNELS[name]["description"]} for name in sorted(KERNELS)],
        "coefficients": [
            {"name": name, "description": COEFFICIENTS[name]["description"]} for name in sorted(COEFFICIENTS)
        ],
        "distributions": [
            {"name": name, "description": DISTRIBUTIONS[name]["description"]} for name in sorted(DISTRIBUTIONS)
        ],
    }
