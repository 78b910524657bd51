"""P1 finite elements on a uniform Friedrichs-Keller triangulation of a rectangle."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import cg, splu

from config import SOLVER_TOL
from schemas import GRID_SCHEMA, MATRIX_SCHEMA, validate_frame

BINARY_HEADER = np.dtype("<i8")
BINARY_VALUES = np.dtype("<f8")


class LinearSolveError(RuntimeError):
    """Raised when a sparse factorization or iterative solve fails."""


@dataclass(frozen=True)
class Rectangle:
    ax: float = -1.0
    bx: float = 1.0
    ay: float = -1.0
    by: float = 1.0

    def __post_init__(self):
        if not (self.bx > self.ax and self.by > self.ay):
            raise ValueError(f"Degenerate rectangle [{self.ax},{self.bx}]x[{self.ay},{self.by}]")

    @property
    def area(self) -> float:
        return (self.bx - self.ax) * (self.by - self.ay)

    def contains(self, x: float, y: float, eps: float = 1e-12) -> bool:
        return self.ax - eps <= x <= self.bx + eps and self.ay - eps <= y <= self.by + eps


@dataclass(frozen=True)
class Mesh:
    nx: int
    ny: int
    rect: Rectangle
    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)

    @property
    def hx(self) -> float:
        return (self.rect.bx - self.rect.ax) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.rect.by - self.rect.ay) / (self.ny - 1)

    @property
    def n_vertices(self) -> int:
        return self.nx * self.ny

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def check_grid_function(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_vertices,):
            raise ValueError(f"Grid function has shape {values.shape}, mesh has {self.n_vertices} vertices")
        return values


def build_mesh(nx: int, ny: int, rect: Rectangle = Rectangle()) -> Mesh:
    """Row-major vertices, x fastest; triangles are CCW with the right-angle vertex first."""
    if nx < 2 or ny < 2:
        raise ValueError(f"Need at least 2 vertices per axis, got nx={nx}, ny={ny}")

    xs = np.linspace(rect.ax, rect.bx, nx)
    ys = np.linspace(rect.ay, rect.by, ny)
    gx, gy = np.meshgrid(xs, ys)
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
    v00 = (j * nx + i).ravel()
    v10 = v00 + 1
    v01 = v00 + nx
    v11 = v01 + 1

    lower = np.column_stack([v10, v11, v00])
    upper = np.column_stack([v01, v00, v11])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)

    return Mesh(nx=nx, ny=ny, rect=rect, vertices=vertices, triangles=triangles)


def build_mesh_cells(n_cells: int, rect: Rectangle = Rectangle(), literal_vertices: bool = False) -> Mesh:
    """Square mesh from a per-axis count: cells by default, vertices when literal_vertices."""
    n = n_cells if literal_vertices else n_cells + 1
    return build_mesh(n, n, rect)


def _gradients(mesh: Mesh) -> tuple:
    p = mesh.vertices[mesh.triangles]
    x, y = p[:, :, 0], p[:, :, 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    gx = np.column_stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]]) / det[:, None]
    gy = np.column_stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]]) / det[:, None]
    return gx, gy, 0.5 * det


def element_stiffness(mesh: Mesh) -> np.ndarray:
    gx, gy, area = _gradients(mesh)
    local = gx[:, :, None] * gx[:, None, :] + gy[:, :, None] * gy[:, None, :]
    return area[:, None, None] * local


def element_mass(mesh: Mesh) -> np.ndarray:
    _, _, area = _gradients(mesh)
    pattern = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    return area[:, None, None] * pattern[None, :, :]


def _assemble(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    tri = mesh.triangles
    rows = np.broadcast_to(tri[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(tri[:, None, :], local.shape).ravel()
    n = mesh.n_vertices
    matrix = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    # exact symmetry of the stored entries
    matrix = ((matrix + matrix.T) * 0.5).tocsr()
    matrix.sort_indices()
    return matrix


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    return _assemble(mesh, element_stiffness(mesh))


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    return _assemble(mesh, element_mass(mesh))


def lump_mass(mass: sp.spmatrix) -> sp.csr_matrix:
    return sp.diags(np.asarray(mass.sum(axis=1)).ravel()).tocsr()


def solve_sparse(matrix: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    try:
        x = splu(sp.csc_matrix(matrix)).solve(np.asarray(rhs, dtype=float))
    except RuntimeError as e:
        raise LinearSolveError(f"Sparse factorization failed: {e}") from e
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("Sparse solve produced non-finite values")
    return x


class SpdSolver:
    """LU with one refinement step; CG takes over when the relative residual stays above tol."""

    def __init__(self, matrix: sp.spmatrix, tol: float = SOLVER_TOL, maxiter: int = None):
        self.matrix = sp.csr_matrix(matrix)
        self.tol = tol
        self.maxiter = maxiter
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError(f"Matrix must be square, got {self.matrix.shape}")
        if np.any(self.matrix.diagonal() <= 0):
            raise LinearSolveError("Matrix has a non-positive diagonal entry, not positive definite")
        try:
            self._lu = splu(sp.csc_matrix(self.matrix))
        except RuntimeError as e:
            raise LinearSolveError(f"Factorization failed: {e}") from e

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def _relative_residual(self, x: np.ndarray, rhs: np.ndarray, norm_rhs: float) -> float:
        return np.linalg.norm(rhs - self.matrix @ x) / norm_rhs

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (self.n,):
            raise ValueError(f"Right-hand side has shape {rhs.shape}, expected ({self.n},)")
        norm_rhs = np.linalg.norm(rhs)
        if norm_rhs == 0.0:
            return np.zeros(self.n)

        x = self._lu.solve(rhs)
        if self._relative_residual(x, rhs, norm_rhs) > self.tol:
            x = x + self._lu.solve(rhs - self.matrix @ x)

        if not np.all(np.isfinite(x)):
            raise LinearSolveError("Factorization produced non-finite values, matrix is singular")

        if self._relative_residual(x, rhs, norm_rhs) > self.tol:
            x, info = cg(self.matrix, rhs, x0=x, rtol=self.tol, maxiter=self.maxiter)
            if info != 0:
                raise LinearSolveError(f"Conjugate gradients stopped with info={info}")
        return x


def solve_spd(matrix: sp.spmatrix, rhs, tol: float = SOLVER_TOL) -> np.ndarray:
    return SpdSolver(matrix, tol).solve(rhs)


def forward_solve(K: sp.spmatrix, M: sp.spmatrix, c: float, u, tol: float = SOLVER_TOL) -> np.ndarray:
    """y solving (K + cM) y = M u."""
    if c <= 0:
        raise ValueError(f"Potential c must be positive, got {c}")
    return solve_spd(K + c * M, M @ np.asarray(u, dtype=float), tol)


def adjoint_solve(K: sp.spmatrix, M: sp.spmatrix, c: float, residual, tol: float = SOLVER_TOL) -> np.ndarray:
    """p solving (K + cM) p = M (y - y_delta)."""
    if c <= 0:
        raise ValueError(f"Potential c must be positive, got {c}")
    return solve_spd(K + c * M, M @ np.asarray(residual, dtype=float), tol)


class EllipticOperator:
    """-Δy + cy = u with Neumann conditions; mass_lumping swaps the coupling mass for its row sums."""

    def __init__(self, stiffness: sp.spmatrix, mass: sp.spmatrix, c: float,
                 mass_lumping: bool = False, solver_tol: float = SOLVER_TOL):
        if c <= 0:
            raise ValueError(f"Potential c must be positive, got {c}")
        self.stiffness = sp.csr_matrix(stiffness)
        self.consistent_mass = sp.csr_matrix(mass)
        self.lumped_mass = lump_mass(self.consistent_mass)
        self.c = c
        self.mass_lumping = mass_lumping
        self.mass = self.lumped_mass if mass_lumping else self.consistent_mass
        self.system = (self.stiffness + c * self.consistent_mass).tocsr()
        self.solver = SpdSolver(self.system, solver_tol)

    @classmethod
    def from_mesh(cls, mesh: Mesh, c: float, mass_lumping: bool = False,
                  solver_tol: float = SOLVER_TOL) -> "EllipticOperator":
        return cls(assemble_stiffness(mesh), assemble_mass(mesh), c, mass_lumping, solver_tol)

    @property
    def n(self) -> int:
        return self.system.shape[0]

    @property
    def lumped_diagonal(self) -> np.ndarray:
        return self.lumped_mass.diagonal()

    def forward(self, u) -> np.ndarray:
        return self.solver.solve(self.mass @ np.asarray(u, dtype=float))

    def adjoint(self, residual) -> np.ndarray:
        return self.solver.solve(self.mass @ np.asarray(residual, dtype=float))

    def mass_norm(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(np.sqrt(max(v @ (self.mass @ v), 0.0)))

    def dense_forward(self) -> np.ndarray:
        """Dense (K + cM)^-1 M, column by column; meant for small meshes."""
        return np.column_stack([self.forward(e) for e in np.eye(self.n)])


def write_grid_csv(mesh: Mesh, values, path) -> str:
    values = mesh.check_grid_function(values)
    df = pd.DataFrame({"x": mesh.vertices[:, 0], "y": mesh.vertices[:, 1], "value": values})
    df = validate_frame(df, GRID_SCHEMA, str(path))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g")
    return str(path)


def read_grid_csv(path) -> pd.DataFrame:
    return validate_frame(pd.read_csv(path), GRID_SCHEMA, str(path))


def write_grid_binary(mesh: Mesh, values, path) -> str:
    # little-endian: int64 (N, nx, ny), float64 (ax, bx, ay, by), float64 values[N]
    values = mesh.check_grid_function(values)
    r = mesh.rect
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(np.array([mesh.n_vertices, mesh.nx, mesh.ny], dtype=BINARY_HEADER).tobytes())
        f.write(np.array([r.ax, r.bx, r.ay, r.by], dtype=BINARY_VALUES).tobytes())
        f.write(values.astype(BINARY_VALUES).tobytes())
    return str(path)


def read_grid_binary(path) -> tuple:
    raw = Path(path).read_bytes()
    n, nx, ny = np.frombuffer(raw[:24], dtype=BINARY_HEADER)
    ax, bx, ay, by = np.frombuffer(raw[24:56], dtype=BINARY_VALUES)
    values = np.frombuffer(raw[56:], dtype=BINARY_VALUES).astype(float)
    if n != nx * ny or len(values) != n:
        raise ValueError(f"Corrupt grid dump {path}: header N={n}, nx={nx}, ny={ny}, values={len(values)}")
    mesh = build_mesh(int(nx), int(ny), Rectangle(float(ax), float(bx), float(ay), float(by)))
    return mesh, values


def export_matrix_coo(matrix: sp.spmatrix, path) -> str:
    coo = sp.coo_matrix(matrix)
    df = pd.DataFrame({"i": coo.row, "j": coo.col, "value": coo.data})
    df = validate_frame(df, MATRIX_SCHEMA, str(path))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g")
    return str(path)
