"""
Configuration settings for the graphon particle system toolkit.
"""
import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Runtime settings (loaded from .env file or the environment)
OUTPUT_DIR = os.getenv("GRAPHON_OUTPUT_DIR", "results")
WORKERS = int(os.getenv("GRAPHON_WORKERS", "4"))
LOG_LEVEL = os.getenv("GRAPHON_LOG_LEVEL", "INFO")

# Particle simulation defaults
SIMULATION_DEFAULTS = {
    "T": 1.0,
    "dt": 1e-3,
    "N": 2000,
    "seed": 20210301,
    "coupling_mode": "weighted",
    "label_mode": "equispaced",
}

# Finite-volume grid defaults
GRID_DEFAULTS = {
    "L": 8.0,
    "M": 400,
    "dt_pde": 1e-3,
}

# Adaptive quadrature for analytic kernels
QUADRATURE = {
    "epsabs": 1e-10,
    "epsrel": 0.0,
    "max_evaluations": 1_000_000,
    # scipy's QUADPACK uses a 21-point Gauss-Kronrod rule per subinterval
    "points_per_interval": 21,
}

# Cut norm / cut distance search
CUT_NORM = {
    "exact_max_blocks": 20,
    "heuristic_restarts": 8,
    "heuristic_seed": 7,
    "chunk_size": 1 << 15,
    "distance_exact_max_blocks": 8,
    "distance_sampled_permutations": 2000,
}

# Distances between laws
METRICS = {
    "quantile_mesh": 2048,
    "bootstrap_replicates": 50,
    "bootstrap_seed": 11,
    "noise_floor_splits": 4,
    "null_permutations": 30,
    "null_seed": 13,
}

# Solver and checker tolerances
TOLERANCES = {
    "condition_h_step": 1e-8,
    "condition_h_analytic": 1e-6,
    "mass": 1e-10,
    "negativity": -1e-14,
    "courant": 1.0,
    "split_refinement": 1e-12,
    "lipschitz_slack": 1e-12,
    "symmetry_samples": 10_000,
}

# Acceptance thresholds used by the experiment runner
EXPERIMENT_TOLERANCES = {
    "E1-meanfield-equivalence": {"w2": 0.05, "pde_l1": 1e-10},
    "E2-condition-H": {"w2": 0.05, "pde_max_abs": 1e-12, "stderr_factor": 3.0},
    "E3-relabeling": {"w2": 0.04},
    "E4-cutnorm-continuity": {"stderr_factor": 3.0},
    "E5-initial-mixing": {"stderr_factor": 3.0},
    "E6-reduction-consistency": {"w2": 0.06},
}

# Default report times for marginal comparisons
REPORT_TIMES = [0.25, 0.5, 1.0]
