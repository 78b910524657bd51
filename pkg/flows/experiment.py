"""
End-to-end reconstruction experiment: phantom, seeded noisy data, discrepancy
choice of rho, error metrics and the results table.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel

from config import (
    LITERAL_VERTICES,
    MASS_LUMPING,
    MESH_N,
    NOISE_LEVELS,
    OUTPUT_DIR,
    PHASE_BUDGET,
    POTENTIAL_C,
    RHO0,
    SEED,
    TAU,
    log_event,
)
from fem import EllipticOperator, Mesh, Rectangle, build_mesh_cells, write_grid_csv
from paramchoice import ChoiceParams, ChoiceReport, choose_rho
from quasisolve import SsnParams, SsnState
from schemas import PHANTOM_SCHEMA, RESULTS_SCHEMA, validate_frame

RESULTS_COLUMNS = ["s", "delta", "discrepancy", "rho", "err_inf", "err_l2", "bregman_pair", "success"]


@dataclass(frozen=True)
class Inclusion:
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    value: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(f"Empty inclusion {self}")

    def inside(self, rect: Rectangle) -> bool:
        return rect.contains(self.xmin, self.ymin) and rect.contains(self.xmax, self.ymax)

    def mask(self, vertices: np.ndarray, eps: float = 1e-12) -> np.ndarray:
        x, y = vertices[:, 0], vertices[:, 1]
        return (
            (x >= self.xmin - eps) & (x <= self.xmax + eps)
            & (y >= self.ymin - eps) & (y <= self.ymax + eps)
        )


@dataclass(frozen=True)
class Phantom:
    inclusions: Tuple[Inclusion, ...] = ()
    background: float = 0.0

    @property
    def rho_dagger(self) -> float:
        values = [abs(inc.value) for inc in self.inclusions] + [abs(self.background)]
        return max(values)


def default_phantom() -> Phantom:
    return Phantom(
        inclusions=(
            Inclusion(-0.7, -0.3, -0.7, -0.3, 4.0),
            Inclusion(0.3, 0.7, -0.7, -0.3, -4.0),
            Inclusion(-0.7, -0.3, 0.3, 0.7, 2.0),
            Inclusion(0.3, 0.7, 0.3, 0.7, -2.0),
        ),
        background=0.0,
    )


def read_phantom_csv(path, background: float = 0.0) -> Phantom:
    df = validate_frame(pd.read_csv(path), PHANTOM_SCHEMA, str(path))
    inclusions = tuple(
        Inclusion(row.xmin, row.xmax, row.ymin, row.ymax, row.value) for row in df.itertuples(index=False)
    )
    log_event("READ_PHANTOM", path=path, inclusions=len(inclusions))
    return Phantom(inclusions=inclusions, background=background)


def write_phantom_csv(phantom: Phantom, path) -> str:
    df = pd.DataFrame(
        [(inc.xmin, inc.xmax, inc.ymin, inc.ymax, inc.value) for inc in phantom.inclusions],
        columns=["xmin", "xmax", "ymin", "ymax", "value"],
    )
    df = validate_frame(df, PHANTOM_SCHEMA, str(path))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    return str(path)


def build_phantom(mesh: Mesh, phantom: Phantom) -> np.ndarray:
    """Nodal values; later inclusions overwrite earlier ones where they overlap."""
    values = np.full(mesh.n_vertices, float(phantom.background))
    for inc in phantom.inclusions:
        if not inc.inside(mesh.rect):
            raise ValueError(f"Inclusion {inc} leaves the domain {mesh.rect}")
        values[inc.mask(mesh.vertices)] = inc.value
    nodal_max = float(np.max(np.abs(values)))
    if nodal_max != phantom.rho_dagger:
        raise ValueError(
            f"Phantom maximum {phantom.rho_dagger} is not attained on the mesh (nodal maximum {nodal_max}); "
            "an inclusion is overwritten or contains no vertex"
        )
    return values


@dataclass(frozen=True)
class NoiseSpec:
    s: float
    seed: int = SEED

    def __post_init__(self):
        if self.s < 0:
            raise ValueError(f"Noise percentage must be nonnegative, got {self.s}")


def make_noisy_data(y_true, noise_spec: NoiseSpec, M) -> tuple:
    """
    y_delta = y_true + (s/100) ||y_true||_inf eta / ||eta||_M with eta ~ N(0, I)
    drawn from PCG64(seed). Returns (y_delta, delta) with delta = ||y_delta - y_true||_M.
    """
    y_true = np.asarray(y_true, dtype=float)
    if noise_spec.s == 0:
        return y_true.copy(), 0.0

    rng = np.random.Generator(np.random.PCG64(noise_spec.seed))
    eta_norm = 0.0
    while eta_norm == 0.0:
        eta = rng.standard_normal(len(y_true))
        eta_norm = float(np.sqrt(eta @ (M @ eta)))

    noise = (noise_spec.s / 100.0) * np.max(np.abs(y_true)) * eta / eta_norm
    y_delta = y_true + noise
    delta = float(np.sqrt(max(noise @ (M @ noise), 0.0)))
    return y_delta, delta


def _lumped(M) -> np.ndarray:
    return np.asarray(M.sum(axis=1)).ravel()


def bregman_subgradient(u_true, M, atol: float = 0.0) -> np.ndarray:
    """
    Subgradient of the sup-norm at u_true: sign(u_i)/m_C on C = {|u_i| = ||u||_inf},
    m_C the lumped mass of C. atol > 0 widens C to |u_i| >= ||u||_inf - atol.
    """
    u_true = np.asarray(u_true, dtype=float)
    rho_dagger = np.max(np.abs(u_true))
    active = np.abs(u_true) >= rho_dagger - atol
    if rho_dagger == 0.0 or not active.any():
        raise ValueError("Empty active set: the subgradient needs a nonzero maximum")
    lumped = _lumped(M)
    m_c = lumped[active].sum()
    xi = np.zeros_like(u_true)
    xi[active] = np.sign(u_true[active]) / m_c
    return xi


def bregman_pairing(xi, v, M) -> float:
    """<xi, v> weighted by the lumped mass."""
    return float(np.sum(np.asarray(xi) * _lumped(M) * np.asarray(v)))


class ErrorRecord(BaseModel):
    s: float
    delta: float
    discrepancy: float
    rho_chosen: float
    err_inf: float
    err_l2: float
    bregman_pair: float
    bregman_distance: float
    success: bool

    def to_row(self) -> dict:
        return {
            "s": self.s,
            "delta": self.delta,
            "discrepancy": self.discrepancy,
            "rho": self.rho_chosen,
            "err_inf": self.err_inf,
            "err_l2": self.err_l2,
            "bregman_pair": self.bregman_pair,
            "success": self.success,
        }


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = MESH_N
    literal_vertices: bool = LITERAL_VERTICES
    c: float = POTENTIAL_C
    mass_lumping: bool = MASS_LUMPING
    tau: float = TAU
    rho0: float = RHO0
    noise_levels: Tuple[float, ...] = NOISE_LEVELS
    seed: int = SEED
    out_dir: str = OUTPUT_DIR
    phantom: Phantom = field(default_factory=default_phantom)
    ssn: SsnParams = field(default_factory=SsnParams)
    phase_budget: int = PHASE_BUDGET
    adaptive_growth: bool = False

    def __post_init__(self):
        if any(s < 0 for s in self.noise_levels):
            raise ValueError(f"Noise levels must be nonnegative, got {self.noise_levels}")


@dataclass
class Problem:
    mesh: Mesh
    operator: EllipticOperator
    u_true: np.ndarray
    y_true: np.ndarray


@dataclass
class RecordResult:
    index: int
    record: ErrorRecord
    state: SsnState
    report: ChoiceReport


def build_problem(config: ExperimentConfig) -> Problem:
    mesh = build_mesh_cells(config.n, literal_vertices=config.literal_vertices)
    operator = EllipticOperator.from_mesh(mesh, config.c, mass_lumping=config.mass_lumping)
    u_true = build_phantom(mesh, config.phantom)
    y_true = operator.forward(u_true)
    log_event(
        "PROBLEM_READY",
        vertices=mesh.n_vertices,
        triangles=mesh.n_triangles,
        rho_dagger=config.phantom.rho_dagger,
        y_true_max=f"{np.max(np.abs(y_true)):.6e}",
    )
    return Problem(mesh, operator, u_true, y_true)


def record_seed(seed: int, index: int) -> int:
    return seed ^ index


def solve_record(config: ExperimentConfig, problem: Problem, index: int, s: float) -> RecordResult:
    op = problem.operator
    y_delta, delta = make_noisy_data(problem.y_true, NoiseSpec(s, record_seed(config.seed, index)), op.mass)

    params = ChoiceParams(
        delta=delta,
        tau=config.tau,
        rho0=config.rho0,
        ssn=config.ssn,
        phase_budget=config.phase_budget,
        adaptive_growth=config.adaptive_growth,
    )
    state, report = choose_rho(y_delta, params, op)

    error = state.u - problem.u_true
    xi = bregman_subgradient(problem.u_true, op.consistent_mass)
    pair = bregman_pairing(xi, error, op.consistent_mass)
    record = ErrorRecord(
        s=s,
        delta=delta,
        discrepancy=report.discrepancy_final,
        rho_chosen=report.rho_final,
        err_inf=float(np.max(np.abs(error))),
        err_l2=op.mass_norm(error),
        bregman_pair=pair,
        bregman_distance=float(np.max(np.abs(state.u)) - np.max(np.abs(problem.u_true)) - pair),
        success=report.success,
    )
    log_event(
        "RECORD_DONE",
        index=index,
        s=s,
        delta=f"{delta:.6e}",
        rho=f"{record.rho_chosen:.6g}",
        err_l2=f"{record.err_l2:.3e}",
        success=record.success,
    )
    return RecordResult(index, record, state, report)


def results_frame(records: List[ErrorRecord]) -> pd.DataFrame:
    df = pd.DataFrame([r.to_row() for r in records], columns=RESULTS_COLUMNS)
    return validate_frame(df, RESULTS_SCHEMA, "results")


def write_results(records: List[ErrorRecord], out_dir) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    df = results_frame(records)
    df.to_csv(out / "results.csv", index=False, float_format="%.12e")
    df.to_parquet(out / "results.parquet", index=False)
    log_event("WRITE_RESULTS", path=str(out / "results.csv"), rows=len(df))
    return str(out / "results.csv")


def write_record_artifacts(problem: Problem, result: RecordResult, out_dir) -> dict:
    out = Path(out_dir) / f"record_{result.index:02d}"
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "reconstruction": write_grid_csv(problem.mesh, result.state.u, out / "reconstruction.csv"),
        "trace": result.report.write_trace_csv(out / "trace.csv"),
    }
    payload = {"record": result.record.model_dump(), "choice": result.report.model_dump()}
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    files["report"] = str(out / "report.json")
    return files


def run_experiment(config: ExperimentConfig) -> List[ErrorRecord]:
    """Sequential harness; writes per-record artifacts and results.csv under config.out_dir."""
    log_event("EXPERIMENT_START", n=config.n, noise=",".join(str(s) for s in config.noise_levels),
              seed=config.seed, out=config.out_dir)
    problem = build_problem(config)
    write_grid_csv(problem.mesh, problem.u_true, Path(config.out_dir) / "phantom.csv")

    records = []
    for index, s in enumerate(config.noise_levels):
        result = solve_record(config, problem, index, s)
        write_record_artifacts(problem, result, config.out_dir)
        records.append(result.record)

    write_results(records, config.out_dir)
    log_event("EXPERIMENT_COMPLETE", records=len(records), failures=sum(not r.success for r in records))
    return records
