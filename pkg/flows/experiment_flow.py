import argparse
import sys
from pathlib import Path

from prefect import flow, task
from prefect.cache_policies import NO_CACHE

from config import (
    LITERAL_VERTICES,
    MASS_LUMPING,
    MESH_N,
    NOISE_LEVELS,
    OUTPUT_DIR,
    PHANTOM_PATH,
    PHASE_BUDGET,
    POTENTIAL_C,
    RHO0,
    SEED,
    SSN_I_MAX,
    SSN_K_MAX,
    SSN_Q,
    SSN_TOL,
    TAU,
    configure_prefect,
    is_verbose,
    log_event,
    set_verbose,
)
from experiment import (
    ExperimentConfig,
    Problem,
    RecordResult,
    build_problem,
    default_phantom,
    read_phantom_csv,
    run_experiment,
    solve_record,
    write_record_artifacts,
    write_results,
)
from fem import write_grid_csv
from quasisolve import SsnParams


@task(name="build_problem", cache_policy=NO_CACHE)
def build_problem_task(config: ExperimentConfig) -> Problem:
    return build_problem(config)


@task(name="solve_record", cache_policy=NO_CACHE)
def solve_record_task(config: ExperimentConfig, problem: Problem, index: int, s: float) -> RecordResult:
    return solve_record(config, problem, index, s)


@task(name="write_record_artifacts", cache_policy=NO_CACHE, retries=2, retry_delay_seconds=[2, 10])
def write_record_task(problem: Problem, result: RecordResult, out_dir: str) -> dict:
    return write_record_artifacts(problem, result, out_dir)


@task(name="write_results", cache_policy=NO_CACHE, retries=2, retry_delay_seconds=[2, 10])
def write_results_task(records: list, out_dir: str) -> str:
    return write_results(records, out_dir)


@flow(name="Ivanov Experiment Flow", log_prints=True, validate_parameters=False)
def experiment_flow(config: ExperimentConfig) -> dict:
    log_event("FLOW_START", flow="ivanov_experiment", n=config.n, records=len(config.noise_levels))

    problem = build_problem_task(config)
    write_grid_csv(problem.mesh, problem.u_true, Path(config.out_dir) / "phantom.csv")

    futures = [
        solve_record_task.submit(config, problem, index, s)
        for index, s in enumerate(config.noise_levels)
    ]

    results = []
    errors = 0
    for index, future in enumerate(futures):
        try:
            results.append(future.result())
        except Exception as e:
            errors += 1
            log_event("ERROR", index=index, s=config.noise_levels[index], error=str(e)[:200])

    # writes are serialized
    for result in results:
        write_record_task(problem, result, config.out_dir)
    results_path = write_results_task([r.record for r in results], config.out_dir)

    failures = errors + sum(not r.record.success for r in results)
    log_event("FLOW_COMPLETE", flow="ivanov_experiment", records=len(results), failures=failures)
    return {"results": results_path, "records": len(results), "failures": failures}


def parse_noise(raw: str) -> tuple:
    return tuple(float(v) for v in raw.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Quasi-solution reconstructions with a discrepancy-principle radius")
    parser.add_argument("--n", type=int, default=MESH_N, help="cells per axis (vertices with --literal-vertices)")
    parser.add_argument("--literal-vertices", action="store_true", default=LITERAL_VERTICES)
    parser.add_argument("--c", type=float, default=POTENTIAL_C, help="potential coefficient")
    parser.add_argument("--mass-lumping", action=argparse.BooleanOptionalAction, default=MASS_LUMPING,
                        help="row-sum coupling mass (--no-mass-lumping for the consistent one)")
    parser.add_argument("--tau", type=float, default=TAU)
    parser.add_argument("--rho0", type=float, default=RHO0)
    parser.add_argument("--noise", type=parse_noise, default=NOISE_LEVELS, help="comma separated percentages")
    parser.add_argument("--seed", type=int, default=SEED)
    parser.add_argument("--out", default=OUTPUT_DIR)
    parser.add_argument("--phantom", default=PHANTOM_PATH, help="phantom CSV (xmin,xmax,ymin,ymax,value)")
    parser.add_argument("--background", type=float, default=0.0)
    parser.add_argument("--q", type=float, default=SSN_Q)
    parser.add_argument("--i-max", type=int, default=SSN_I_MAX)
    parser.add_argument("--k-max", type=int, default=SSN_K_MAX)
    parser.add_argument("--tol", type=float, default=SSN_TOL)
    parser.add_argument("--residual-norm", choices=("mass", "euclidean"), default="mass")
    parser.add_argument("--phase-budget", type=int, default=PHASE_BUDGET)
    parser.add_argument("--adaptive-growth", action="store_true")
    parser.add_argument("--local", action="store_true", help="run without prefect")
    parser.add_argument("-v", "--verbose", action="store_true", default=is_verbose())
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    phantom = read_phantom_csv(args.phantom, args.background) if args.phantom else default_phantom()
    return ExperimentConfig(
        n=args.n,
        literal_vertices=args.literal_vertices,
        c=args.c,
        mass_lumping=args.mass_lumping,
        tau=args.tau,
        rho0=args.rho0,
        noise_levels=tuple(args.noise),
        seed=args.seed,
        out_dir=args.out,
        phantom=phantom,
        ssn=SsnParams(q=args.q, i_max=args.i_max, k_max=args.k_max, tol=args.tol,
                      residual_norm=args.residual_norm),
        phase_budget=args.phase_budget,
        adaptive_growth=args.adaptive_growth,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    set_verbose(args.verbose)
    config = config_from_args(args)

    if args.local:
        records = run_experiment(config)
        failures = sum(not r.success for r in records)
    else:
        configure_prefect()
        failures = experiment_flow(config)["failures"]

    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
