"""assembly.py — глобальные разреженные системы шага по времени и их решение.

Седловая система (скорость–давление–множитель), симметричная в пределе Стокса:

    [  A    −Bᵀ   0 ] [u]   [f_u]
    [ −B     0    m ] [p] = [f_p]
    [  0     mᵀ   0 ] [λ]   [ 0 ]

B = diag(|T|) D_h на свободных DOF, m = (|T|)_T: ограничение ∫p = 0.
Граничные значения скорости исключаются в правую часть.

Перенос плотности: неявный Эйлер + upwind-потоки на uⁿ; матрица является M-матрицей.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .convection import convection_matrix, upwind_trace
from .errors import SolveError
from .mesh import Mesh
from .operators import ah_full, divergence_matrix
from .quadrature import cell_means
from .spaces import (
    CellField,
    HybridVelocity,
    boundary_velocity_dofs,
    cell_mass_matrix,
    free_velocity_dofs,
    jh_matrix,
    n_velocity_dofs,
)

logger = logging.getLogger(__name__)

SOLVE_RTOL = 1e-10


@dataclass(frozen=True)
class DofLayout:
    free: np.ndarray       # свободные DOF скорости (индексы полного вектора)
    boundary: np.ndarray   # граничные DOF скорости
    n_pressure: int
    n_multiplier: int = 1

    @property
    def n_velocity(self) -> int:
        return int(self.free.size)

    @property
    def size(self) -> int:
        return self.n_velocity + self.n_pressure + self.n_multiplier

    @property
    def velocity(self) -> slice:
        return slice(0, self.n_velocity)

    @property
    def pressure(self) -> slice:
        return slice(self.n_velocity, self.n_velocity + self.n_pressure)

    @property
    def multiplier(self) -> slice:
        return slice(self.n_velocity + self.n_pressure, self.size)


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    kind: str = "generic"
    layout: Optional[DofLayout] = None
    symmetric: bool = False
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n, m = self.matrix.shape
        if n != m or self.rhs.shape != (n,):
            raise ValueError(f"dimension mismatch: matrix {self.matrix.shape}, rhs {self.rhs.shape}")
        if self.layout is not None and self.layout.size != n:
            raise ValueError(f"layout describes {self.layout.size} unknowns, matrix has {n}")


def _inv_dt(dt: float) -> float:
    dt = float(dt)
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    return 0.0 if np.isinf(dt) else 1.0 / dt


def velocity_load(mesh: Mesh, f_eval: Optional[Callable[..., Any]]) -> np.ndarray:
    """∫ f·v_h on the full velocity vector (cell DOFs only)."""
    out = np.zeros(n_velocity_dofs(mesh))
    if f_eval is not None:
        out[: 2 * mesh.n_cells] = (mesh.cell_measure[:, None] * cell_means(mesh, f_eval, vector=True)).reshape(-1)
    return out


def momentum_operator(
    mesh: Mesh,
    rho_new: CellField,
    dt: float,
    mu: float,
    *,
    rho_lower: float,
    trace: Any = None,
) -> sp.csr_matrix:
    """(1/dt)(M_ρ + ρ̲ J) + μ A (+ C) on the full velocity vector."""
    inv_dt = _inv_dt(dt)
    A = inv_dt * (cell_mass_matrix(mesh, rho_new.values) + rho_lower * jh_matrix(mesh)) + mu * ah_full(mesh)
    if trace is not None:
        A = A + convection_matrix(mesh, trace)
    return A.tocsr()


def assemble_saddle(
    mesh: Mesh,
    rho_new: CellField,
    sigma_new: CellField,
    sigma_old: CellField,
    u_old: HybridVelocity,
    f_eval: Optional[Callable[..., Any]],
    dt: float,
    mu: float,
    *,
    rho_lower: Optional[float] = None,
    boundary_values: Optional[np.ndarray] = None,
    inflow: Optional[np.ndarray] = None,
    transport: Optional[HybridVelocity] = None,
    include_convection: bool = True,
) -> SparseSystem:
    """Momentum–continuity system of one time step.

    ``transport`` is the velocity that upwinds ρⁿ⁺¹ in the first slot of c_h
    (uⁿ unless a fixed-point iteration supplies a candidate). ``boundary_values``
    holds the face velocities imposed on boundary faces (zero when omitted).
    """
    if mu < 0:
        raise ValueError(f"viscosity must be nonnegative, got {mu!r}")
    for fld in (rho_new, sigma_new, sigma_old, u_old):
        if fld.mesh is not mesh:
            raise ValueError("all fields must live on the assembly mesh")
    inv_dt = _inv_dt(dt)
    lower = float(rho_new.min() if rho_lower is None else rho_lower)

    trace = None
    if include_convection:
        trace = upwind_trace(rho_new, transport if transport is not None else u_old, inflow)
    A_full = momentum_operator(mesh, rho_new, dt, mu, rho_lower=lower, trace=trace)

    uo = u_old.to_vector()
    rhs_full = inv_dt * (
        cell_mass_matrix(mesh, sigma_new.values * sigma_old.values) @ uo + lower * (jh_matrix(mesh) @ uo)
    ) + velocity_load(mesh, f_eval)

    free = free_velocity_dofs(mesh)
    bnd = boundary_velocity_dofs(mesh)
    g = np.zeros(bnd.size)
    if boundary_values is not None:
        g = np.asarray(boundary_values, dtype=float)[mesh.boundary_faces].reshape(-1)

    A_rows = A_full[free]
    A = A_rows[:, free]
    f_u = rhs_full[free] - A_rows[:, bnd] @ g

    B_full = sp.diags(mesh.cell_measure) @ divergence_matrix(mesh)
    B = B_full[:, free]
    f_p = B_full[:, bnd] @ g
    m = sp.csr_matrix(mesh.cell_measure.reshape(-1, 1))
    nc = mesh.n_cells

    K = sp.bmat(
        [
            [A, -B.T, None],
            [-B, None, m],
            [None, m.T, sp.csr_matrix((1, 1))],
        ],
        format="csr",
    )
    rhs = np.concatenate([f_u, f_p, [0.0]])
    layout = DofLayout(free=free, boundary=bnd, n_pressure=nc)
    return SparseSystem(
        K, rhs, kind="saddle", layout=layout, symmetric=not include_convection,
        meta={"boundary_values": g},
    )


def split_saddle_solution(mesh: Mesh, system: SparseSystem, x: np.ndarray) -> tuple[HybridVelocity, CellField, float]:
    lay = system.layout
    if lay is None:
        raise ValueError("system has no DOF layout")
    full = np.zeros(n_velocity_dofs(mesh))
    full[lay.free] = x[lay.velocity]
    full[lay.boundary] = system.meta.get("boundary_values", 0.0)
    homogeneous = not np.any(full[lay.boundary])
    u = HybridVelocity.from_vector(mesh, full, homogeneous=homogeneous)
    return u, CellField(mesh, x[lay.pressure]), float(x[lay.multiplier][0])


def assemble_density_transport(
    mesh: Mesh,
    u: HybridVelocity,
    rho_old: CellField,
    dt: float,
    *,
    inflow: Optional[np.ndarray] = None,
) -> SparseSystem:
    """(|T|/dt)(ρⁿ⁺¹_T − ρⁿ_T) + Σ_F [q⁺ ρⁿ⁺¹_T − q⁻ ρⁿ⁺¹_T′] = 0 per cell.

    On boundary inflow faces the upstream value ρ_T′ is the inflow datum
    (``inflow`` indexed by face), moved to the right-hand side.
    """
    inv_dt = _inv_dt(dt)
    if inv_dt == 0.0:
        raise ValueError("density transport needs a finite dt")
    T, F = mesh.cf_cell, mesh.cf_face
    qi = mesh.cf_sign * u.normal_flux()[F]
    qp = np.maximum(qi, 0.0)
    qm = np.maximum(-qi, 0.0)
    other = np.where(mesh.cf_sign > 0, mesh.face_cells[F, 1], mesh.face_cells[F, 0])
    interior = other >= 0

    diag = mesh.cell_measure * inv_dt + np.bincount(T, weights=qp, minlength=mesh.n_cells)
    off = interior & (qm > 0.0)
    rows = np.concatenate([np.arange(mesh.n_cells), T[off]])
    cols = np.concatenate([np.arange(mesh.n_cells), other[off]])
    vals = np.concatenate([diag, -qm[off]])
    A = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_cells, mesh.n_cells)).tocsr()

    rhs = mesh.cell_measure * inv_dt * rho_old.values
    bnd_in = ~interior & (qm > 0.0)
    if np.any(bnd_in):
        if inflow is None:
            raise ValueError("boundary inflow present but no inflow density given")
        rin = np.asarray(inflow, dtype=float)[F[bnd_in]]
        rhs += np.bincount(T[bnd_in], weights=qm[bnd_in] * rin, minlength=mesh.n_cells)
    return SparseSystem(A, rhs, kind="transport", symmetric=False)


# ----------------------------
# решение
# ----------------------------

def residual_ratio(A: sp.spmatrix, x: np.ndarray, b: np.ndarray) -> float:
    """‖Ax − b‖ / (‖b‖ + ‖A‖‖x‖) in the max norm."""
    r = np.abs(A @ x - b).max(initial=0.0)
    scale = np.abs(b).max(initial=0.0) + spla.norm(A, np.inf) * np.abs(x).max(initial=0.0)
    return float(r / scale) if scale > 0 else float(r)


def _iterative(A: sp.csc_matrix, b: np.ndarray, rtol: float) -> np.ndarray:
    try:
        ilu = spla.spilu(A, drop_tol=1e-6, fill_factor=20)
        M = spla.LinearOperator(A.shape, ilu.solve)
    except RuntimeError:
        M = None
    x, info = spla.gmres(A, b, rtol=0.1 * rtol, atol=0.0, restart=200, maxiter=50, M=M)
    if info < 0:
        raise SolveError("gmres breakdown", method="gmres", residual=residual_ratio(A, x, b))
    return x


def solve(system: SparseSystem, *, rtol: float = SOLVE_RTOL) -> np.ndarray:
    """Direct LU with one refinement sweep; gmres fallback if factorisation fails."""
    A = system.matrix.tocsc()
    b = system.rhs
    method = "splu"
    try:
        lu = spla.splu(A)
        x = lu.solve(b)
        if residual_ratio(A, x, b) > rtol:
            x = x + lu.solve(b - A @ x)
    except RuntimeError as exc:
        logger.warning("%s system: direct factorisation failed (%s); falling back to gmres", system.kind, exc)
        method = "gmres"
        x = _iterative(A, b, rtol)

    res = residual_ratio(A, x, b)
    if not np.all(np.isfinite(x)) or res > rtol:
        raise SolveError(f"{system.kind} solve missed the residual contract", method=method, residual=res)
    logger.debug("%s solve (%s): n=%d, nnz=%d, residual=%.2e", system.kind, method, A.shape[0], A.nnz, res)
    return x
