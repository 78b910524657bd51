"""Dense projected-gradient reference solver and checks of the distance function d(rho, y)."""
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from config import log_event
from fem import EllipticOperator
from schemas import DISTANCE_CURVE_SCHEMA, validate_frame

DENSE_MAX_N = 50
STAGNATION_TOL = 1e-10
MAX_ITER = 10**6


class OracleStagnationError(RuntimeError):
    """Projected gradient did not reach the stagnation tolerance within max_iter."""


class PreconditionViolation(ValueError):
    """A property check was asked about an instance outside its hypotheses."""


@dataclass(frozen=True)
class DenseInstance:
    A: np.ndarray
    y: np.ndarray
    rho: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "y", y)
        m, n = A.shape
        if y.shape != (m,):
            raise ValueError(f"y has shape {y.shape}, A has {m} rows")
        if n > DENSE_MAX_N:
            raise ValueError(f"Dense instances are capped at n <= {DENSE_MAX_N}, got n={n}")
        if m < n:
            raise ValueError(f"A must have full column rank, got shape {A.shape}")
        smallest = np.linalg.svd(A, compute_uv=False)[-1]
        if smallest <= 1e-8:
            raise ValueError(f"A is not injective: smallest singular value {smallest:.3e}")
        if self.rho < 0:
            raise ValueError(f"Radius must be nonnegative, got {self.rho}")

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def with_rho(self, rho: float) -> "DenseInstance":
        return replace(self, rho=rho)

    def with_data(self, y) -> "DenseInstance":
        return replace(self, y=np.asarray(y, dtype=float))

    def unconstrained_solution(self) -> np.ndarray:
        return np.linalg.lstsq(self.A, self.y, rcond=None)[0]

    def unconstrained_radius(self) -> float:
        return float(np.max(np.abs(self.unconstrained_solution())))

    def residual_min(self) -> float:
        return float(np.linalg.norm(self.A @ self.unconstrained_solution() - self.y))

    def step_size(self) -> float:
        return 1.0 / np.linalg.norm(self.A, 2) ** 2


@dataclass(frozen=True)
class DistanceCurve:
    rho_grid: np.ndarray
    d_values: np.ndarray

    def __post_init__(self):
        rho_grid = np.asarray(self.rho_grid, dtype=float)
        d_values = np.asarray(self.d_values, dtype=float)
        object.__setattr__(self, "rho_grid", rho_grid)
        object.__setattr__(self, "d_values", d_values)
        if rho_grid.shape != d_values.shape:
            raise ValueError(f"Grid and values differ in length: {rho_grid.shape} vs {d_values.shape}")
        if np.any(np.diff(rho_grid) <= 0):
            raise ValueError("rho_grid must be strictly increasing")

    def is_nonincreasing(self, slack: float = 1e-12) -> bool:
        return bool(np.all(np.diff(self.d_values) <= slack))

    def is_strictly_decreasing_above(self, floor: float, margin: float = 1e-8, step: float = 1e-10) -> bool:
        above = self.d_values[:-1] > floor + margin
        drops = -np.diff(self.d_values)
        return bool(np.all(drops[above] > step))

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"rho": self.rho_grid, "d": self.d_values})
        return validate_frame(df, DISTANCE_CURVE_SCHEMA, "distance_curve")

    def write_csv(self, path) -> str:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.12e")
        return str(path)


def _projected_gradient_residual(instance: DenseInstance, u: np.ndarray, gamma: float) -> float:
    grad = instance.A.T @ (instance.A @ u - instance.y)
    return float(np.max(np.abs(u - np.clip(u - gamma * grad, -instance.rho, instance.rho))))


def _polish(instance: DenseInstance, u: np.ndarray, gamma: float) -> np.ndarray:
    """Exact least squares on the free coordinates with the bound coordinates frozen."""
    bound = np.abs(u) >= instance.rho
    free = ~bound
    if not free.any():
        return u
    rhs = instance.y - instance.A[:, bound] @ u[bound]
    candidate = u.copy()
    candidate[free] = np.linalg.lstsq(instance.A[:, free], rhs, rcond=None)[0]
    if np.max(np.abs(candidate)) > instance.rho:
        return u
    if _projected_gradient_residual(instance, candidate, gamma) > _projected_gradient_residual(instance, u, gamma):
        return u
    return candidate


def pg_solve(instance: DenseInstance, tol: float = STAGNATION_TOL, max_iter: int = MAX_ITER,
             accelerated: bool = True, polish: bool = True) -> np.ndarray:
    """Step 1/||A||_2^2 from zero, stopped at ||u - proj(u - gamma grad)||_inf <= tol."""
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    n, rho = instance.n, instance.rho
    if rho == 0.0:
        return np.zeros(n)

    gamma = instance.step_size()
    AtA = instance.A.T @ instance.A
    Aty = instance.A.T @ instance.y

    u = np.zeros(n)
    z = u.copy()
    t = 1.0
    for _ in range(max_iter):
        u_new = np.clip(z - gamma * (AtA @ z - Aty), -rho, rho)
        if accelerated:
            if (z - u_new) @ (u_new - u) > 0:
                t = 1.0
                z = u_new
            else:
                t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
                z = u_new + ((t - 1.0) / t_new) * (u_new - u)
                t = t_new
        else:
            z = u_new
        u = u_new
        if _projected_gradient_residual(instance, u, gamma) <= tol:
            return _polish(instance, u, gamma) if polish else u

    raise OracleStagnationError(f"Projected gradient did not stagnate within {max_iter} iterations")


def distance(instance: DenseInstance, **pg_kwargs) -> float:
    u = pg_solve(instance, **pg_kwargs)
    return float(np.linalg.norm(instance.A @ u - instance.y))


def distance_curve(instance: DenseInstance, rho_grid, **pg_kwargs) -> DistanceCurve:
    rho_grid = np.asarray(rho_grid, dtype=float)
    if rho_grid.size == 0:
        raise ValueError("rho_grid must be nonempty")
    if np.any(rho_grid < 0):
        raise ValueError("rho_grid must be nonnegative")
    values = [distance(instance.with_rho(r), **pg_kwargs) for r in rho_grid]
    return DistanceCurve(rho_grid, np.array(values))


def check_boundary_property(instance: DenseInstance, tol: float = 1e-6, misfit_tol: float = 1e-8) -> bool:
    """||u*||_inf == rho whenever d(rho, y) exceeds the unconstrained residual."""
    u = pg_solve(instance)
    d = float(np.linalg.norm(instance.A @ u - instance.y))
    if d <= instance.residual_min() + misfit_tol:
        raise PreconditionViolation(
            f"Constraint does not bind at rho={instance.rho}: d={d:.3e}, residual_min={instance.residual_min():.3e}"
        )
    return bool(abs(np.max(np.abs(u)) - instance.rho) <= tol)


def check_nonexpansive(instance: DenseInstance, y_other, slack: float = 1e-8) -> bool:
    """|d(rho, y1) - d(rho, y2)| <= ||y1 - y2||_2 + slack."""
    other = instance.with_data(y_other)
    gap = abs(distance(instance) - distance(other))
    return bool(gap <= np.linalg.norm(instance.y - other.y) + slack)


def invert_distance(instance: DenseInstance, sigma: float, tol: float = 1e-6, max_bisections: int = 200) -> float:
    """rho with |d(rho, y) - sigma| <= tol, by bisection on the decreasing distance function."""
    floor = instance.residual_min()
    ceiling = float(np.linalg.norm(instance.y))
    if not floor < sigma < ceiling:
        raise ValueError(f"sigma={sigma} outside the attainable interval ({floor:.6e}, {ceiling:.6e})")

    lo, hi = 0.0, instance.unconstrained_radius()
    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        d = distance(instance.with_rho(mid))
        if abs(d - sigma) <= tol:
            return mid
        if d > sigma:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    raise OracleStagnationError(
        f"Bisection for sigma={sigma:.6e} stopped at rho in [{lo:.6e}, {hi:.6e}] without |d - sigma| <= {tol}"
    )


def random_instance(rng: np.random.Generator, m: int, n: int, rho: float = None,
                    radius_fraction: float = 0.5) -> DenseInstance:
    A = rng.standard_normal((m, n))
    y = rng.standard_normal(m)
    base = DenseInstance(A, y)
    if rho is None:
        rho = radius_fraction * base.unconstrained_radius()
    return base.with_rho(rho)


def instance_from_operator(operator: EllipticOperator, y_delta, rho: float) -> DenseInstance:
    # Euclidean misfit equals ||A_h u - y_delta||_W, W the coupling mass
    W = operator.mass.toarray()
    L = np.linalg.cholesky(W)
    return DenseInstance(L.T @ operator.dense_forward(), L.T @ np.asarray(y_delta, dtype=float), rho)


def property_sweep(seed: int, n_instances: int = 10, n_pairs: int = 100, m: int = 5, n: int = 4,
                   grid_points: int = 50) -> pd.DataFrame:
    # instance i draws from default_rng([seed, i])
    rows = []
    for i in range(n_instances):
        rng = np.random.default_rng([seed, i])
        instance = random_instance(rng, m, n)
        floor = instance.residual_min()
        grid = np.linspace(0.0, 1.2 * instance.unconstrained_radius(), grid_points)
        curve = distance_curve(instance, grid)
        rows.append({"instance": i, "check": "nonincreasing", "passed": curve.is_nonincreasing()})
        rows.append({"instance": i, "check": "strictly_decreasing",
                     "passed": curve.is_strictly_decreasing_above(floor)})
        rows.append({"instance": i, "check": "boundary", "passed": check_boundary_property(instance)})

    for j in range(n_pairs):
        rng = np.random.default_rng([seed, n_instances + j])
        instance = random_instance(rng, m, n)
        y_other = instance.y + rng.standard_normal(m) * rng.uniform(1e-3, 1.0)
        rows.append({"instance": n_instances + j, "check": "nonexpansive",
                     "passed": check_nonexpansive(instance, y_other)})

    df = pd.DataFrame(rows, columns=["instance", "check", "passed"])
    log_event("PROPERTY_SWEEP", seed=seed, checks=len(df), failures=int((~df["passed"]).sum()))
    return df
