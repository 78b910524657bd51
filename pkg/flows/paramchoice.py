"""Discrepancy-principle choice of the radius rho: grow, halve, then bisect."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np
import pandas as pd
from pydantic import BaseModel

from config import PHASE_BUDGET, RHO0, TAU, log_event
from fem import EllipticOperator
from quasisolve import NewtonReport, SsnParams, SsnState, ssn_solve
from schemas import TRACE_SCHEMA, validate_frame


@dataclass(frozen=True)
class ChoiceParams:
    delta: float
    tau: float = TAU
    rho0: float = RHO0
    ssn: SsnParams = field(default_factory=SsnParams)
    phase_budget: int = PHASE_BUDGET
    adaptive_growth: bool = False
    zero_noise_tol: float = 1e-8

    def __post_init__(self):
        if self.tau <= 1:
            raise ValueError(f"tau must exceed 1, got {self.tau}")
        if self.rho0 <= 0:
            raise ValueError(f"rho0 must be positive, got {self.rho0}")
        if self.delta < 0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")
        if self.phase_budget < 1:
            raise ValueError(f"phase_budget must be >= 1, got {self.phase_budget}")

    @property
    def upper(self) -> float:
        return self.tau * self.delta if self.delta > 0 else self.zero_noise_tol

    def accepts(self, d: float) -> bool:
        """delta <= d <= tau * delta; for delta = 0 only d <= zero_noise_tol."""
        return self.delta <= d <= self.upper


class TraceEntry(BaseModel):
    phase: str
    k: int
    rho: float
    discrepancy: float
    converged: bool


class ChoiceReport(BaseModel):
    rho_final: float
    discrepancy_final: float
    success: bool
    phase_trace: List[TraceEntry] = []

    def to_frame(self) -> pd.DataFrame:
        rows = [entry.model_dump() for entry in self.phase_trace]
        df = pd.DataFrame(rows, columns=["phase", "k", "rho", "discrepancy", "converged"])
        return validate_frame(df, TRACE_SCHEMA, "phase_trace")

    def write_trace_csv(self, path) -> str:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.12e")
        return str(path)


def discrepancy(y_delta, rho: float, warm_start: SsnState, operator: EllipticOperator,
                ssn_params: SsnParams) -> tuple:
    """Mass-weighted misfit ||y - y_delta||_M of the quasi-solution at radius rho."""
    if rho < 0:
        raise ValueError(f"Radius must be nonnegative, got {rho}")
    state, report = ssn_solve(y_delta, rho, warm_start, ssn_params, operator)
    value = operator.mass_norm(state.y - y_delta)
    return value, state, report


@dataclass
class _Accepted:
    rho: float
    d: float
    state: SsnState
    report: NewtonReport


def choose_rho(y_delta, params: ChoiceParams, operator: EllipticOperator) -> tuple:
    """Returns (state, ChoiceReport). Warm starts only ever come from convergent states."""
    y_delta = np.asarray(y_delta, dtype=float)
    trace = []
    ssn = params.ssn
    cold = SsnState.zeros(operator.n)

    def evaluate(phase: str, k: int, rho: float, start: SsnState):
        d, state, report = discrepancy(y_delta, rho, start, operator, ssn)
        if not report.converged and start is not cold:
            log_event("CHOICE_COLD_RESTART", phase=phase, k=k, rho=f"{rho:.6g}",
                      reason=report.termination_reason.value)
            d, state, report = discrepancy(y_delta, rho, cold, operator, ssn)
        trace.append(TraceEntry(phase=phase, k=k, rho=rho, discrepancy=d, converged=report.converged))
        log_event(
            "CHOICE_STEP",
            phase=phase,
            k=k,
            rho=f"{rho:.6g}",
            discrepancy=f"{d:.6e}",
            converged=report.converged,
            newton_iterations=report.iterations,
        )
        return d, state, report

    def result(state: SsnState, rho: float, d: float, success: bool):
        log_event("CHOICE_DONE", rho=f"{rho:.6g}", discrepancy=f"{d:.6e}", delta=f"{params.delta:.6e}",
                  success=success, solves=len(trace))
        return state, ChoiceReport(rho_final=rho, discrepancy_final=d, success=success, phase_trace=trace)

    # Phase I: grow rho until the misfit falls below delta with a convergent solve
    start = cold
    rho = params.rho0
    increment = params.rho0
    last = None
    for k in range(params.phase_budget):
        d, state, report = evaluate("I", k, rho, start)
        if report.converged:
            start = state
            last = _Accepted(rho, d, state, report)
            if params.accepts(d):
                return result(state, rho, d, True)
            if d < params.delta:
                break
        elif params.adaptive_growth:
            increment *= 2.0
        rho += increment
    else:
        log_event("CHOICE_BUDGET_EXHAUSTED", phase="I", budget=params.phase_budget)
        if last is None:
            return result(state, trace[-1].rho, d, False)
        return result(last.state, last.rho, last.d, False)

    # Phase II: halve rho until the misfit exceeds delta or Newton fails
    rho = last.rho / 2.0
    for k in range(params.phase_budget):
        d, state, report = evaluate("II", k, rho, last.state)
        if report.converged and params.accepts(d):
            return result(state, rho, d, True)
        if d > params.delta or not report.converged:
            break
        last = _Accepted(rho, d, state, report)
        rho /= 2.0
    else:
        log_event("CHOICE_BUDGET_EXHAUSTED", phase="II", budget=params.phase_budget)
        return result(last.state, last.rho, last.d, False)

    # Phase III: bisection below the smallest convergent radius with d < delta,
    # every solve warm-started from that radius
    upper = last
    step = upper.rho / 2.0
    rho = upper.rho - step
    for k in range(params.phase_budget):
        d, state, report = evaluate("III", k, rho, upper.state)
        if report.converged and params.accepts(d):
            return result(state, rho, d, True)
        if d > params.upper or not report.converged:
            step /= 2.0
            rho = rho + step
        else:
            upper = _Accepted(rho, d, state, report)
            rho = max(rho - step, 0.0)

    log_event("CHOICE_BUDGET_EXHAUSTED", phase="III", budget=params.phase_budget)
    return result(upper.state, upper.rho, upper.d, False)
