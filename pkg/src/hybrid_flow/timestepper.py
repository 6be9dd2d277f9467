"""timestepper.py — разнесённая по времени схема: сначала плотность, потом импульс.

Принцип (как у runtime): цикл ничего не угадывает, он выполняет заданный TimeConfig
над FlowData и отчитывается через колбэки (observers, system_hook).

На каждом шаге n -> n+1:
- density_step: неявный upwind-перенос ρ на uⁿ (M-матрица => принцип максимума)
- momentum_step: седловая система с σ = √ρ в нестационарном члене
- проверки инвариантов (принцип максимума, баланс массы, дивергенция, среднее давления,
  L²-затухание плотности и монотонность кинетической энергии для замкнутых данных)
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from .assembly import (
    SparseSystem,
    assemble_density_transport,
    assemble_saddle,
    solve,
    split_saddle_solution,
)
from .convection import upwind_seminorm, upwind_trace
from .errors import InitialDataError, InvariantViolation
from .mesh import Mesh
from .operators import divergence, divergence_l2, norm_ah
from .quadrature import cell_means, face_means
from .spaces import CellField, HybridVelocity, interpolate_velocity, jh, norm_1h, project_cell

logger = logging.getLogger(__name__)

DIAGNOSTICS_FIELDS = ["step", "t", "rho_min", "rho_max", "mass", "l2_rho", "kinetic", "dissipation", "div_norm"]

ScalarXYT = Callable[[np.ndarray, np.ndarray, float], Any]
VectorXYT = Callable[[np.ndarray, np.ndarray, float], Any]
SystemHook = Callable[[str, SparseSystem, int], None]


@dataclass
class TimeConfig:
    dt: float
    t_final: float
    picard_iterations: int = 0
    picard_tol: float = 1e-10
    diagnostics_every: int = 1
    check_invariants: bool = True

    def __post_init__(self) -> None:
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be a positive number, got {self.dt!r}")
        if not (self.t_final > 0 and math.isfinite(self.t_final)):
            raise ValueError(f"t_final must be a positive number, got {self.t_final!r}")
        if self.picard_iterations < 0:
            raise ValueError("picard_iterations must be >= 0")
        if self.diagnostics_every < 1:
            raise ValueError("diagnostics_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_final / self.dt)))


@dataclass
class FlowData:
    """Аналитические данные одного расчёта; функции принимают (x, y, t)."""

    rho0: Callable[[np.ndarray, np.ndarray], Any]
    u0: Callable[[np.ndarray, np.ndarray], Any]
    mu: float = 1.0
    force: Optional[VectorXYT] = None
    boundary_velocity: Optional[VectorXYT] = None  # None -> стенки (u_F = 0)
    inflow_density: Optional[ScalarXYT] = None
    name: str = "data"

    @property
    def homogeneous(self) -> bool:
        return self.boundary_velocity is None


@runtime_checkable
class HasFlowData(Protocol):
    """Любой объект задачи, умеющий отдать FlowData (например ManufacturedCase)."""

    def to_flow_data(self) -> FlowData: ...


@dataclass
class SimulationState:
    t: float
    rho: CellField
    sigma: CellField
    u: HybridVelocity
    p: CellField
    step: int = 0

    def copy(self) -> "SimulationState":
        return SimulationState(self.t, self.rho.copy(), self.sigma.copy(), self.u.copy(), self.p.copy(), self.step)


@dataclass
class EnergyLedger:
    steps: list[int] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    kinetic: list[float] = field(default_factory=list)
    dissipation: list[float] = field(default_factory=list)    # μ Σ dt ‖u‖²_{a,h}
    forcing_work: list[float] = field(default_factory=list)   # Σ dt ∫ f·u
    density_l2: list[float] = field(default_factory=list)
    upwind: list[float] = field(default_factory=list)         # Σ dt |ρ|²_upw
    forcing_l2: float = 0.0
    energy_ratio: float = float("nan")

    def record(
        self, step: int, t: float, kinetic: float, *,
        dissipation: float = 0.0, forcing: float = 0.0, density_l2: float, upwind: float = 0.0,
    ) -> None:
        prev = (self.dissipation[-1], self.forcing_work[-1], self.upwind[-1]) if self.steps else (0.0, 0.0, 0.0)
        self.steps.append(int(step))
        self.times.append(float(t))
        self.kinetic.append(float(kinetic))
        self.dissipation.append(prev[0] + float(dissipation))
        self.forcing_work.append(prev[1] + float(forcing))
        self.density_l2.append(float(density_l2))
        self.upwind.append(prev[2] + float(upwind))

    def is_finite(self) -> bool:
        arrays = (self.kinetic, self.dissipation, self.forcing_work, self.density_l2, self.upwind)
        return all(np.all(np.isfinite(a)) for a in arrays)


@dataclass
class RunResult:
    state: SimulationState
    ledger: EnergyLedger
    diagnostics: list[dict[str, Any]]
    dt: float
    n_steps: int
    rho_lower: float
    wall_time: float = 0.0
    errors: Any = None


def kinetic_proxy(state: SimulationState, rho_lower: float) -> float:
    """‖σu‖²_{L²} + ρ̲ j_h(u, u)."""
    m = state.u.mesh
    cell = m.cell_measure @ (state.rho.values * np.einsum("ck,ck->c", state.u.cell_values, state.u.cell_values))
    return float(cell + rho_lower * jh(state.u, state.u))


def _at(fn: Callable[..., Any], t: float) -> Callable[[np.ndarray, np.ndarray], Any]:
    return lambda x, y: fn(x, y, t)


# ----------------------------
# шаги
# ----------------------------

def initialize(
    mesh: Mesh,
    rho0: Callable[[np.ndarray, np.ndarray], Any],
    u0: Callable[[np.ndarray, np.ndarray], Any],
    *,
    homogeneous: bool = True,
    div_tol: float = 1e-10,
) -> SimulationState:
    """ρ = π_h ρ⁰, u = I_h u⁰, σ = √ρ, p = 0 at t = 0."""
    rho = project_cell(rho0, mesh)
    if rho.min() <= 0.0:
        raise InitialDataError(f"initial density must be positive, min cell mean is {rho.min():.6g}")
    u = interpolate_velocity(u0, mesh, homogeneous)
    d = divergence(u)
    scale = max(1.0, u.max_abs() / float(mesh.cell_diameter.min()))
    worst = float(np.abs(d).max())
    if worst > div_tol * scale:
        cell = int(np.abs(d).argmax())
        raise InitialDataError(
            f"interpolated initial velocity is not divergence-free: |D_T u| = {worst:.3e} at cell {cell}"
        )
    return SimulationState(0.0, rho, rho.sqrt(), u, CellField.zeros(mesh))


def density_step(
    state: SimulationState,
    dt: float,
    *,
    inflow: Optional[np.ndarray] = None,
    system_hook: Optional[Callable[[SparseSystem], None]] = None,
) -> CellField:
    mesh = state.rho.mesh
    system = assemble_density_transport(mesh, state.u, state.rho, dt, inflow=inflow)
    if system_hook is not None:
        system_hook(system)
    return CellField(mesh, solve(system))


def momentum_step(
    state: SimulationState,
    rho_new: CellField,
    dt: float,
    mu: float,
    f: Optional[Callable[[np.ndarray, np.ndarray], Any]],
    *,
    rho_lower: Optional[float] = None,
    boundary_values: Optional[np.ndarray] = None,
    inflow: Optional[np.ndarray] = None,
    picard_iterations: int = 0,
    picard_tol: float = 1e-10,
    system_hook: Optional[Callable[[SparseSystem], None]] = None,
) -> tuple[HybridVelocity, CellField]:
    """Solve for (uⁿ⁺¹, pⁿ⁺¹); optional fixed-point sweeps re-upwind with the candidate."""
    mesh = rho_new.mesh
    sigma_new = rho_new.sqrt()
    transport = state.u
    u_new: Optional[HybridVelocity] = None
    p_new: Optional[CellField] = None
    for sweep in range(picard_iterations + 1):
        system = assemble_saddle(
            mesh, rho_new, sigma_new, state.sigma, state.u, f, dt, mu,
            rho_lower=rho_lower, boundary_values=boundary_values, inflow=inflow, transport=transport,
        )
        if system_hook is not None and sweep == 0:
            system_hook(system)
        u_cand, p_cand, lam = split_saddle_solution(mesh, system, solve(system))
        if abs(lam) > 1e-8:
            logger.debug("pressure multiplier %.3e (boundary data not exactly flux-free)", lam)
        converged = u_new is not None and (u_cand - u_new).max_abs() <= picard_tol * max(1.0, u_cand.max_abs())
        u_new, p_new = u_cand, p_cand
        if converged:
            logger.debug("fixed-point iteration converged after %d sweeps", sweep)
            break
        transport = u_new
    assert u_new is not None and p_new is not None
    return u_new, p_new


# ----------------------------
# цикл
# ----------------------------

def _as_flow_data(case: FlowData | HasFlowData) -> FlowData:
    if isinstance(case, FlowData):
        return case
    if isinstance(case, HasFlowData):
        return case.to_flow_data()
    raise TypeError(f"expected FlowData or a case with to_flow_data(), got {type(case).__name__}")


def _check(ok: bool, invariant: str, step: int, value: float, cell: Optional[int] = None, detail: str = "") -> None:
    if not ok:
        raise InvariantViolation(invariant, step, value, cell=cell, detail=detail)


def _diagnostics_row(state: SimulationState, ledger: EnergyLedger) -> dict[str, Any]:
    return {
        "step": state.step,
        "t": state.t,
        "rho_min": state.rho.min(),
        "rho_max": state.rho.max(),
        "mass": state.rho.integral(),
        "l2_rho": state.rho.l2_norm(),
        "kinetic": ledger.kinetic[-1],
        "dissipation": ledger.dissipation[-1],
        "div_norm": divergence_l2(state.u),
    }


def run(
    mesh: Mesh,
    case: FlowData | HasFlowData,
    config: TimeConfig,
    *,
    observers: Sequence[Callable[[SimulationState], None]] = (),
    system_hook: Optional[SystemHook] = None,
) -> RunResult:
    """Шаги плотности и импульса по очереди до t_final, инварианты проверяются на каждом шаге."""
    data = _as_flow_data(case)
    started = time.perf_counter()
    dt = float(config.dt)
    n_steps = config.n_steps
    closed = data.homogeneous

    state = initialize(mesh, data.rho0, data.u0, homogeneous=closed)
    rho_lower = state.rho.min()
    lo, hi = state.rho.min(), state.rho.max()

    def boundary_at(t: float) -> Optional[np.ndarray]:
        if data.boundary_velocity is None:
            return None
        return face_means(mesh, _at(data.boundary_velocity, t), vector=True)

    def inflow_at(t: float) -> Optional[np.ndarray]:
        if data.inflow_density is None:
            return None
        return face_means(mesh, _at(data.inflow_density, t))

    ledger = EnergyLedger()
    ledger.record(0, 0.0, kinetic_proxy(state, rho_lower), density_l2=state.rho.l2_norm())
    diagnostics = [_diagnostics_row(state, ledger)]
    for obs in observers:
        obs(state)

    mass0 = state.rho.integral()
    outflow = 0.0
    for n in range(1, n_steps + 1):
        t_new = n * dt
        inflow = inflow_at(t_new)
        hook_d = (lambda s, n=n: system_hook("transport", s, n)) if system_hook else None
        hook_m = (lambda s, n=n: system_hook("saddle", s, n)) if system_hook else None

        rho_new = density_step(state, dt, inflow=inflow, system_hook=hook_d)
        tr = upwind_trace(rho_new, state.u, inflow)
        bflux = tr.mass_flux[mesh.boundary_faces]
        entering = tr.face_rho[(tr.flux < 0.0) & mesh.is_boundary_face]
        step_lo = min(state.rho.min(), float(entering.min(initial=np.inf)))
        step_hi = max(state.rho.max(), float(entering.max(initial=-np.inf)))
        lo, hi = min(lo, step_lo), max(hi, step_hi)
        tol_rho = 1e-10 * max(abs(hi), 1.0)

        worst = int(rho_new.values.argmin())
        _check(rho_new.min() > 0.0, "density positivity", n, rho_new.min(), worst)
        if config.check_invariants:
            _check(rho_new.min() >= step_lo - tol_rho, "maximum principle (lower)", n, rho_new.min(), worst)
            top = int(rho_new.values.argmax())
            _check(rho_new.max() <= step_hi + tol_rho, "maximum principle (upper)", n, rho_new.max(), top)
            outflow += dt * float(bflux.sum())
            balance = rho_new.integral() - mass0 + outflow
            _check(abs(balance) <= 1e-10 * max(mass0, 1e-300) + 1e-14, "mass balance", n, balance)
            if not np.any(tr.flux[mesh.boundary_faces]):
                lhs = rho_new.l2_norm_sq() + 2.0 * dt * upwind_seminorm(state.u, rho_new) ** 2
                rhs = state.rho.l2_norm_sq()
                _check(lhs <= rhs * (1.0 + 1e-10) + 1e-14, "density L2 decay", n, lhs - rhs)
        upw = upwind_seminorm(state.u, rho_new) ** 2

        f_now = _at(data.force, t_new) if data.force is not None else None
        u_new, p_new = momentum_step(
            state, rho_new, dt, data.mu, f_now,
            rho_lower=rho_lower,
            boundary_values=boundary_at(t_new),
            inflow=inflow,
            picard_iterations=config.picard_iterations,
            picard_tol=config.picard_tol,
            system_hook=hook_m,
        )
        new_state = SimulationState(t_new, rho_new, rho_new.sqrt(), u_new, p_new, n)

        kin_old = ledger.kinetic[-1]
        kin_new = kinetic_proxy(new_state, rho_lower)
        a_norm = norm_ah(u_new)
        if config.check_invariants:
            dnorm = divergence_l2(u_new)
            _check(dnorm <= 1e-8 * a_norm + 1e-14, "discrete divergence", n, dnorm)
            pmean = p_new.integral()
            _check(abs(pmean) <= 1e-10 * p_new.l1_norm() + 1e-14, "pressure mean", n, pmean)
            if closed and data.force is None:
                _check(kin_new <= kin_old * (1.0 + 1e-10) + 1e-14, "kinetic energy", n, kin_new - kin_old)
            logger.debug(
                "step %d: rho in [%.12g, %.12g] (bounds [%.12g, %.12g]), |D_h u|=%.2e, kinetic=%.6e",
                n, rho_new.min(), rho_new.max(), step_lo, step_hi, divergence_l2(u_new), kin_new,
            )

        work = 0.0
        if f_now is not None:
            fc = cell_means(mesh, f_now, vector=True)
            work = dt * float(mesh.cell_measure @ np.einsum("ck,ck->c", fc, u_new.cell_values))
            ledger.forcing_l2 += dt * float(mesh.cell_measure @ np.einsum("ck,ck->c", fc, fc))
        ledger.record(
            n, t_new, kin_new,
            dissipation=dt * data.mu * a_norm ** 2, forcing=work,
            density_l2=rho_new.l2_norm(), upwind=dt * upw,
        )
        state = new_state
        if n % config.diagnostics_every == 0 or n == n_steps:
            diagnostics.append(_diagnostics_row(state, ledger))
        for obs in observers:
            obs(state)

    if not ledger.is_finite():
        raise InvariantViolation("finite energy ledger", n_steps, float("nan"))
    u0h = interpolate_velocity(data.u0, mesh, closed)
    bound = math.exp(n_steps * dt) * (ledger.forcing_l2 + hi * norm_1h(u0h) ** 2)
    lhs = max(ledger.kinetic) + 2.0 * ledger.dissipation[-1]
    ledger.energy_ratio = lhs / bound if bound > 0 else float("nan")
    logger.info(
        "%s on %s: %d steps, dt=%.3g, rho in [%.6g, %.6g], energy ratio %.4g",
        data.name, mesh.name, n_steps, dt, state.rho.min(), state.rho.max(), ledger.energy_ratio,
    )
    return RunResult(
        state=state, ledger=ledger, diagnostics=diagnostics, dt=dt, n_steps=n_steps,
        rho_lower=rho_lower, wall_time=time.perf_counter() - started,
    )
