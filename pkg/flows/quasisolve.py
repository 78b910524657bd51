"""Damped semismooth Newton solver for the discrete quasi-solution system at fixed rho."""
from dataclasses import dataclass
from enum import Enum
from typing import List

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, model_validator

from config import SSN_I_MAX, SSN_K_MAX, SSN_Q, SSN_TOL, is_verbose, log_event
from fem import EllipticOperator, LinearSolveError, solve_sparse


class TerminationReason(str, Enum):
    ACTIVE_SETS_STABLE = "active_sets_stable"
    RESIDUAL_BELOW_TOL = "residual_below_tol"
    MAX_ITERATIONS = "max_iterations"
    LINE_SEARCH_FAILURE = "line_search_failure"
    LINEAR_SOLVE_FAILURE = "linear_solve_failure"


CONVERGED_REASONS = {TerminationReason.ACTIVE_SETS_STABLE, TerminationReason.RESIDUAL_BELOW_TOL}


class NewtonReport(BaseModel):
    converged: bool
    iterations: int
    final_residual: float
    termination_reason: TerminationReason
    residual_history: List[float] = []

    @model_validator(mode="after")
    def _converged_matches_reason(self):
        if self.converged != (self.termination_reason in CONVERGED_REASONS):
            raise ValueError(f"converged={self.converged} inconsistent with {self.termination_reason.value}")
        return self


@dataclass(frozen=True)
class SsnParams:
    q: float = SSN_Q
    i_max: int = SSN_I_MAX
    k_max: int = SSN_K_MAX
    tol: float = SSN_TOL
    residual_norm: str = "mass"

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"Damping factor q must lie in (0, 1), got {self.q}")
        if self.i_max < 1 or self.k_max < 1:
            raise ValueError(f"i_max and k_max must be >= 1, got {self.i_max}, {self.k_max}")
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.residual_norm not in ("euclidean", "mass"):
            raise ValueError(f"Unknown residual norm {self.residual_norm!r}")


@dataclass
class SsnState:
    y: np.ndarray
    p: np.ndarray
    u: np.ndarray
    rho: float

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if not (self.y.shape == self.p.shape == self.u.shape) or self.y.ndim != 1:
            raise ValueError(f"Inconsistent state shapes {self.y.shape}, {self.p.shape}, {self.u.shape}")
        if self.rho < 0:
            raise ValueError(f"Radius must be nonnegative, got {self.rho}")

    @classmethod
    def zeros(cls, n: int, rho: float = 0.0) -> "SsnState":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n), rho)

    @property
    def n(self) -> int:
        return len(self.u)

    def with_rho(self, rho: float) -> "SsnState":
        return SsnState(self.y.copy(), self.p.copy(), self.u.copy(), rho)

    def step(self, dy: np.ndarray, dp: np.ndarray, du: np.ndarray, t: float = 1.0) -> "SsnState":
        return SsnState(self.y + t * dy, self.p + t * dp, self.u + t * du, self.rho)


@dataclass(frozen=True)
class ActiveSets:
    """Boolean masks over the vertices; exactly one is set per index."""
    a_plus: np.ndarray
    a_minus: np.ndarray
    inactive: np.ndarray

    @property
    def active(self) -> np.ndarray:
        return self.a_plus | self.a_minus

    def sizes(self) -> dict:
        return {
            "a_plus": int(self.a_plus.sum()),
            "a_minus": int(self.a_minus.sum()),
            "inactive": int(self.inactive.sum()),
        }

    def same_active(self, other: "ActiveSets") -> bool:
        return np.array_equal(self.a_plus, other.a_plus) and np.array_equal(self.a_minus, other.a_minus)


def project_box(v, rho: float) -> np.ndarray:
    if rho < 0:
        raise ValueError(f"Radius must be nonnegative, got {rho}")
    return np.clip(np.asarray(v, dtype=float), -rho, rho)


def compute_active_sets(u, p, rho: float) -> ActiveSets:
    v = np.asarray(u, dtype=float) - np.asarray(p, dtype=float)
    a_plus = v > rho
    a_minus = v < -rho
    # |u - p| == rho is inactive
    return ActiveSets(a_plus=a_plus, a_minus=a_minus, inactive=~(a_plus | a_minus))


def newton_residual(state: SsnState, operator: EllipticOperator, y_delta) -> np.ndarray:
    S, M = operator.system, operator.mass
    b1 = S @ state.y - M @ state.u
    b2 = S @ state.p - M @ (state.y - y_delta)
    b3 = state.u - project_box(state.u - state.p, state.rho)
    return np.concatenate([b1, b2, b3])


def residual_norm(b: np.ndarray, operator: EllipticOperator, kind: str = "mass") -> float:
    if kind == "euclidean":
        return float(np.linalg.norm(b))
    # dual blocks weighted by the inverse lumped mass, primal block by the lumped mass
    d = operator.lumped_diagonal
    b1, b2, b3 = np.split(b, 3)
    return float(np.sqrt(b1 @ (b1 / d) + b2 @ (b2 / d) + b3 @ (b3 * d)))


def newton_step(state: SsnState, sets: ActiveSets, operator: EllipticOperator, y_delta,
                b: np.ndarray = None) -> tuple:
    # third row: dp = -b3 on the inactive set, du = -b3 on the active set
    if b is None:
        b = newton_residual(state, operator, y_delta)
    S, M = operator.system, operator.mass
    chi_inactive = sp.diags(sets.inactive.astype(float))
    chi_active = sp.diags(sets.active.astype(float))

    jacobian = sp.bmat(
        [
            [S, None, -M],
            [-M, S, None],
            [None, chi_inactive, chi_active],
        ],
        format="csc",
    )
    delta = solve_sparse(jacobian, -b)
    dy, dp, du = np.split(delta, 3)
    return dy, dp, du


def ssn_solve(y_delta, rho: float, start: SsnState, params: SsnParams,
              operator: EllipticOperator, verbose: bool = None) -> tuple:
    """Returns (state, NewtonReport); failures are reported, not raised."""
    verbose = is_verbose() if verbose is None else verbose
    y_delta = np.asarray(y_delta, dtype=float)
    if rho < 0:
        raise ValueError(f"Radius must be nonnegative, got {rho}")
    if start.n != len(y_delta) or start.n != operator.n:
        raise ValueError(f"Start state has {start.n} nodes, data {len(y_delta)}, operator {operator.n}")

    state = start.with_rho(rho)
    previous_sets = None
    history = []

    def finish(reason: TerminationReason, steps: int, norm_b: float):
        report = NewtonReport(
            converged=reason in CONVERGED_REASONS,
            iterations=steps,
            final_residual=norm_b,
            termination_reason=reason,
            residual_history=history,
        )
        if verbose:
            log_event("SSN_DONE", rho=rho, reason=reason.value, iterations=steps, residual=f"{norm_b:.3e}")
        return state, report

    if rho == 0.0:
        # the box is {0}: u = y = 0 and p solves the adjoint equation for -y_delta
        zeros = np.zeros(operator.n)
        state = SsnState(zeros, operator.adjoint(-y_delta), zeros.copy(), 0.0)
        norm_b = residual_norm(newton_residual(state, operator, y_delta), operator, params.residual_norm)
        history.append(norm_b)
        if norm_b < params.tol:
            return finish(TerminationReason.RESIDUAL_BELOW_TOL, 0, norm_b)
        return finish(TerminationReason.LINEAR_SOLVE_FAILURE, 0, norm_b)

    b = newton_residual(state, operator, y_delta)
    norm_b = residual_norm(b, operator, params.residual_norm)

    for k in range(params.k_max):
        sets = compute_active_sets(state.u, state.p, rho)
        history.append(norm_b)
        if verbose:
            log_event("SSN_ITERATION", k=k + 1, residual=f"{norm_b:.3e}", **sets.sizes())

        if norm_b < params.tol:
            stable = previous_sets is not None and sets.same_active(previous_sets)
            reason = TerminationReason.ACTIVE_SETS_STABLE if stable else TerminationReason.RESIDUAL_BELOW_TOL
            return finish(reason, k, norm_b)

        try:
            dy, dp, du = newton_step(state, sets, operator, y_delta, b)
        except LinearSolveError as e:
            log_event("SSN_LINEAR_SOLVE_FAILED", rho=rho, k=k + 1, error=str(e)[:200])
            return finish(TerminationReason.LINEAR_SOLVE_FAILURE, k, norm_b)

        for i in range(params.i_max):
            t = params.q ** i
            trial = state.step(dy, dp, du, t)
            b_trial = newton_residual(trial, operator, y_delta)
            norm_trial = residual_norm(b_trial, operator, params.residual_norm)
            if norm_trial < norm_b:
                if verbose:
                    log_event("SSN_LINE_SEARCH", k=k + 1, step=f"{t:.4g}", residual=f"{norm_trial:.3e}")
                state, b, norm_b = trial, b_trial, norm_trial
                break
        else:
            return finish(TerminationReason.LINE_SEARCH_FAILURE, k, norm_b)

        previous_sets = sets

    return finish(TerminationReason.MAX_ITERATIONS, params.k_max, norm_b)
