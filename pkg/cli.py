"""
Command-line interface for the graphon particle system toolkit.

    python cli.py simulate --config configs/e6_reduction.yaml --out results
    python cli.py cutnorm fig2-step3 --minus constant:1/3 --mode heuristic
    python cli.py experiment E2-condition-H --config configs/e2_condition_h.yaml
"""
import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from config import LOG_LEVEL, OUTPUT_DIR
from dynamics import simulate_finite, simulate_reduced, write_state_snapshot, write_trajectory_summary
from errors import EXIT_SUCCESS, ConfigError, exit_code_for
from experiment_engine import ExperimentEngine
from experiment_spec import EXPERIMENT_IDS, ExperimentSpec, load_experiment_spec
from graphon import (
    ConstantKernel,
    LabelPartition,
    StepKernel,
    check_condition_H,
    cut_distance_step,
    cut_norm,
    degree,
    parse_numbers,
    step_approximate,
)
from pde import initial_densities, solve_fp_system, write_density_csv
from registry import registry_list, resolve_coefficients, resolve_kernel

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def _load_spec(args) -> tuple:
    """Config file (or defaults) with the command-line overrides applied."""
    if args.config:
        spec, base_dir = load_experiment_spec(args.config)
    else:
        spec, base_dir = ExperimentSpec(), Path.cwd()
    if args.seed is not None:
        spec = spec.model_copy(update={"simulation": spec.simulation.model_copy(update={"seed": args.seed})})
    return spec, base_dir


def _output_dir(args, spec: ExperimentSpec) -> Path:
    return Path(args.out) if args.out else Path(spec.output_dir)


def _config_step_kernel(spec: ExperimentSpec, base_dir: Path) -> StepKernel:
    kernel = resolve_kernel(spec.kernels[0], base_dir)
    if isinstance(kernel, ConstantKernel):
        return kernel.as_step()
    if not isinstance(kernel, StepKernel):
        raise ConfigError(f"{kernel.name} is not a step kernel")
    return kernel


def cmd_simulate(args) -> int:
    spec, base_dir = _load_spec(args)
    kernel = resolve_kernel(spec.kernels[0], base_dir)
    ensemble = simulate_finite(kernel, resolve_coefficients(spec.coefficients), spec.initial.build(base_dir),
                               spec.simulation)
    out = _output_dir(args, spec)
    write_trajectory_summary(ensemble, out / "summary.csv", spec.report_times)
    if args.snapshots:
        for t in spec.report_times:
            write_state_snapshot(ensemble, t, out / f"snapshot_t{t:g}.csv")
    print(f"Wrote {out / 'summary.csv'}")
    return EXIT_SUCCESS


def cmd_reduce(args) -> int:
    spec, base_dir = _load_spec(args)
    kernel = _config_step_kernel(spec, base_dir)
    cfg = spec.simulation
    ensemble = simulate_reduced(kernel, resolve_coefficients(spec.coefficients), spec.initial.build(base_dir),
                                spec.particles_per_block, cfg.T, cfg.dt, cfg.seed)
    out = _output_dir(args, spec)
    write_trajectory_summary(ensemble, out / "reduced_summary.csv", spec.report_times)
    print(f"Wrote {out / 'reduced_summary.csv'}")
    return EXIT_SUCCESS


def cmd_pde(args) -> int:
    spec, base_dir = _load_spec(args)
    kernel = _config_step_kernel(spec, base_dir)
    grid = spec.grid.spatial()
    densities = initial_densities(kernel, spec.initial.build(base_dir), grid)
    solution = solve_fp_system(kernel, resolve_coefficients(spec.coefficients), densities, grid,
                               spec.simulation.T, spec.grid.dt_pde)
    out = _output_dir(args, spec)
    times = [0.0] + [t for t in spec.report_times if t > 0.0]
    write_density_csv(solution, out / "density.csv", times)
    print(f"Wrote {out / 'density.csv'}")
    return EXIT_SUCCESS


def cmd_cutnorm(args) -> int:
    kernel = _step_from_text(args.kernel, args.blocks)
    if args.minus:
        other = _step_from_text(args.minus, args.blocks)
        if kernel.k != other.k and other.k == 1:
            other = StepKernel(kernel.breakpoints, np.full((kernel.k, kernel.k), other.values[0, 0]), other.name)
        elif kernel.k == 1 and other.k != 1:
            kernel = StepKernel(other.breakpoints, np.full((other.k, other.k), kernel.values[0, 0]), kernel.name)
        if not kernel.same_blocks(other):
            raise ConfigError("kernels must share their blocks to take a difference")
        difference = kernel.with_values(kernel.values - other.values, name=f"{kernel.name}-{other.name}")
        result = {
            "cut_norm": cut_norm(difference, mode=args.mode, workers=args.workers),
            "cut_distance": cut_distance_step(kernel, other, mode="auto" if args.mode == "exact" else "heuristic"),
        }
    else:
        result = {"cut_norm": cut_norm(kernel, mode=args.mode, workers=args.workers)}
    print(json.dumps(result, indent=2))
    return EXIT_SUCCESS


def _step_from_text(text: str, blocks: int) -> StepKernel:
    kernel = resolve_kernel(text, Path.cwd())
    if isinstance(kernel, StepKernel):
        return kernel
    if isinstance(kernel, ConstantKernel):
        return kernel.as_step()
    logger.warning(f"{kernel.name} is not a step kernel; using its {blocks}-block average")
    return step_approximate(kernel, blocks)


def cmd_degree(args) -> int:
    kernel = resolve_kernel(args.kernel, Path.cwd())
    labels = parse_numbers(args.labels)
    print(json.dumps({"kernel": kernel.name, "degrees": [{"label": x, "degree": degree(kernel, x)} for x in labels]},
                     indent=2))
    return EXIT_SUCCESS


def cmd_check_h(args) -> int:
    kernel = resolve_kernel(args.kernel, Path.cwd())
    if args.breakpoints:
        partition = LabelPartition.from_breakpoints(parse_numbers(args.breakpoints))
    elif args.config:
        spec, _ = _load_spec(args)
        partition = LabelPartition.from_breakpoints(spec.initial.numeric_breakpoints())
    else:
        partition = LabelPartition.single()
    result = check_condition_H(kernel, partition)
    print(json.dumps({"kernel": kernel.name, **result.as_dict(), "tol": result.tol}, indent=2))
    return EXIT_SUCCESS


def cmd_compare(args) -> int:
    spec, base_dir = _load_spec(args)
    if len(spec.kernels) < 2:
        raise ConfigError("compare needs at least two kernels in the config")
    engine = ExperimentEngine(output_dir=args.out, workers=args.workers)
    table = engine.compare_kernels(spec, base_dir)
    out = _output_dir(args, spec)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "compare.csv"
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["time", "first", "second", "w2", "stderr"])
        for row in table:
            writer.writerow([f"{row['time']:.17g}", row["first"], row["second"],
                             f"{row['w2']:.17g}", f"{row['stderr']:.17g}"])
    print(f"Wrote {path}")
    return EXIT_SUCCESS


def cmd_experiment(args) -> int:
    spec, base_dir = _load_spec(args)
    engine = ExperimentEngine(output_dir=args.out, workers=args.workers)
    result = engine.run(spec, base_dir, experiment=args.id)
    print(result["message"])
    for criterion in result.get("criteria", []):
        mark = "PASS" if criterion["passed"] else "FAIL"
        print(f"  [{mark}] {criterion['name']}: {criterion['value']:.6g} (threshold {criterion['threshold']:.6g})")
    return result["exit_code"]


def cmd_registry(args) -> int:
    print(json.dumps(registry_list(), indent=2))
    return EXIT_SUCCESS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Graphon particle systems: simulation, PDE and experiments")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (YAML)")
    common.add_argument("--seed", type=int, help="override the simulation seed")
    common.add_argument("--out", help=f"output directory (default from config or {OUTPUT_DIR})")
    common.add_argument("--mode", choices=["exact", "heuristic"], default="exact", help="cut norm mode")
    common.add_argument("--workers", type=int, default=None, help="worker threads")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    sub = parser.add_subparsers(dest="command", required=True)
    simulate = sub.add_parser("simulate", parents=[common], help="simulate the finite particle system")
    simulate.add_argument("--snapshots", action="store_true", help="also write full states at report times")
    simulate.set_defaults(handler=cmd_simulate)
    sub.add_parser("reduce", parents=[common], help="simulate the reduced block system").set_defaults(handler=cmd_reduce)
    sub.add_parser("pde", parents=[common], help="solve the block Fokker-Planck system").set_defaults(handler=cmd_pde)

    cut = sub.add_parser("cutnorm", parents=[common], help="cut norm of a kernel or of a difference")
    cut.add_argument("kernel")
    cut.add_argument("--minus", help="subtract this kernel and also report the cut distance")
    cut.add_argument("--blocks", type=int, default=16, help="blocks used to average non-step kernels")
    cut.set_defaults(handler=cmd_cutnorm)

    deg = sub.add_parser("degree", parents=[common], help="degrees d(x) at labels")
    deg.add_argument("kernel")
    deg.add_argument("--labels", default="0.25,0.5,0.75", help="comma-separated labels")
    deg.set_defaults(handler=cmd_degree)

    check = sub.add_parser("check-h", parents=[common], help="check condition (H) against label classes")
    check.add_argument("kernel")
    check.add_argument("--breakpoints", help="class breakpoints, e.g. 0,1/3,1")
    check.set_defaults(handler=cmd_check_h)

    sub.add_parser("compare", parents=[common],
                   help="pooled-marginal W2 between the config's kernels").set_defaults(handler=cmd_compare)

    experiment = sub.add_parser("experiment", parents=[common], help="run a scripted experiment")
    experiment.add_argument("id", choices=EXPERIMENT_IDS)
    experiment.set_defaults(handler=cmd_experiment)

    sub.add_parser("registry", parents=[common], help="list built-in names").set_defaults(handler=cmd_registry)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else getattr(logging, LOG_LEVEL.upper(), logging.INFO)
    logging.getLogger().setLevel(level)
    try:
        return args.handler(args)
    except Exception as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
