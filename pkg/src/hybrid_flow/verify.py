"""verify.py — тестовые задачи с известным решением, дискретные нормы ошибок, EOC и диагностики согласованности.

Что здесь есть:
- ManufacturedCase + реестр CASES (guermond / zero / bump / rotation), get_case
- оракул сильных невязок PDE конечными разностями (проверка выведенной f до запуска решателя)
- ErrorTracker: наблюдатель для timestepper.run, копит квадраты ошибок по шагам
- density_error / velocity_error: нормы из левых частей априорных оценок
- eoc, consistency_rate_dh / consistency_rate_ch, boundedness_ratio_ch / boundedness_ratio_dh

Ошибки считаются против интерполянтов (π_h ρ, I_h u) в концах шагов tⁿ.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .convection import c_h, d_h, upwind_seminorm
from .errors import ConfigError
from .mesh import UNIT_SQUARE, Domain, Mesh
from .operators import gradient, norm_ah
from .quadrature import face_integrals_times_normal
from .spaces import (
    CellField,
    HybridVelocity,
    interpolate_velocity,
    norm_0h,
    project_cell,
    random_velocity,
)
from .timestepper import FlowData, RunResult, SimulationState, TimeConfig, run

logger = logging.getLogger(__name__)

FD_STEP = 1e-6
FD_STEP_LAPLACE = 1e-4
ORACLE_TOL = 1e-5

ScalarXYT = Callable[[Any, Any, float], Any]
VectorXYT = Callable[[Any, Any, float], Any]


@dataclass
class ManufacturedCase:
    """Exact (ρ, u, p) with the body force that makes them a solution.

    ``dirichlet``: boundary velocity and inflow density are taken from the exact
    fields; otherwise the case runs with walls (u_F = 0 on ∂Ω).
    ``exact``: (ρ, u) solve the equations for t > 0, so error norms make sense.
    """

    name: str
    rho: ScalarXYT
    u: VectorXYT
    p: ScalarXYT
    f: Optional[VectorXYT]
    mu: float = 1.0
    t_final: float = 1.0
    domain: Domain = UNIT_SQUARE
    dirichlet: bool = False
    exact: bool = True
    density_range: Optional[tuple[float, float]] = None
    range_horizon: float = math.inf   # density_range holds for t in [0, range_horizon]

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise ValueError(f"viscosity must be positive, got {self.mu!r}")

    def rho_at(self, t: float) -> Callable[[Any, Any], Any]:
        return lambda x, y: self.rho(x, y, t)

    def u_at(self, t: float) -> Callable[[Any, Any], Any]:
        return lambda x, y: self.u(x, y, t)

    def to_flow_data(self) -> FlowData:
        return FlowData(
            rho0=self.rho_at(0.0),
            u0=self.u_at(0.0),
            mu=self.mu,
            force=self.f,
            boundary_velocity=self.u if self.dirichlet else None,
            inflow_density=self.rho if self.dirichlet else None,
            name=self.name,
        )


# ----------------------------
# реестр задач
# ----------------------------

def guermond_case(mu: float = 1.0) -> ManufacturedCase:
    """ρ = 2 + x cos(sin t) + y sin(sin t), u = cos t (−y, x), p = 0."""

    def rho(x: Any, y: Any, t: float) -> Any:
        return 2.0 + x * np.cos(np.sin(t)) + y * np.sin(np.sin(t))

    def u(x: Any, y: Any, t: float) -> tuple[Any, Any]:
        return -y * np.cos(t), x * np.cos(t)

    def p(x: Any, y: Any, t: float) -> Any:
        return np.zeros_like(np.asarray(x, dtype=float))

    def f(x: Any, y: Any, t: float) -> tuple[Any, Any]:
        r = rho(x, y, t)
        s, c2 = np.sin(t), np.cos(t) ** 2
        return r * (s * y - c2 * x), r * (-s * x - c2 * y)

    return ManufacturedCase(
        "guermond", rho, u, p, f, mu=mu, dirichlet=True,
        density_range=(2.0, 2.0 + math.sqrt(2.0)), range_horizon=math.pi,
    )


def zero_case(mu: float = 1.0) -> ManufacturedCase:
    def one(x: Any, y: Any, t: float) -> Any:
        return np.ones_like(np.asarray(x, dtype=float))

    def nil(x: Any, y: Any, t: float) -> tuple[Any, Any]:
        z = np.zeros_like(np.asarray(x, dtype=float))
        return z, z

    return ManufacturedCase(
        "zero", one, nil, lambda x, y, t: np.zeros_like(np.asarray(x, dtype=float)), None, mu=mu,
        density_range=(1.0, 1.0),
    )


def _bump_velocity(x: Any, y: Any, t: float) -> tuple[Any, Any]:
    # curl of x²(1−x)²y²(1−y)²
    gx = 2.0 * x * (1.0 - x) * (1.0 - 2.0 * x) * (y * (1.0 - y)) ** 2
    gy = 2.0 * y * (1.0 - y) * (1.0 - 2.0 * y) * (x * (1.0 - x)) ** 2
    return gy, -gx


def bump_case(mu: float = 1.0) -> ManufacturedCase:
    """Closed cavity, ρ = 1, u⁰ a polynomial vortex, no forcing; energy decays."""
    return ManufacturedCase(
        "bump",
        lambda x, y, t: np.ones_like(np.asarray(x, dtype=float)),
        _bump_velocity,
        lambda x, y, t: np.zeros_like(np.asarray(x, dtype=float)),
        None,
        mu=mu,
        exact=False,
        density_range=(1.0, 1.0),
    )


def rotation_case(mu: float = 1.0) -> ManufacturedCase:
    """Steady rigid rotation: (u·∇)u + ∇p = 0 with zero-mean p."""
    return ManufacturedCase(
        "rotation",
        lambda x, y, t: np.ones_like(np.asarray(x, dtype=float)),
        lambda x, y, t: (-y + 0.0 * x, x + 0.0 * y),
        lambda x, y, t: 0.5 * (x * x + y * y) - 1.0 / 3.0,
        None,
        mu=mu,
        dirichlet=True,
        density_range=(1.0, 1.0),
    )


CASES: dict[str, Callable[[float], ManufacturedCase]] = {
    "guermond": guermond_case,
    "zero": zero_case,
    "bump": bump_case,
    "rotation": rotation_case,
}


def get_case(name: str, mu: float = 1.0) -> ManufacturedCase:
    try:
        factory = CASES[name]
    except KeyError:
        raise ConfigError(f"unknown case {name!r} (known: {', '.join(sorted(CASES))})") from None
    return factory(float(mu))


# ----------------------------
# оракул невязок (конечные разности)
# ----------------------------

def _vec(fn: VectorXYT, x: Any, y: Any, t: Any) -> np.ndarray:
    a, b = fn(x, y, t)
    shape = np.broadcast(np.asarray(x), np.asarray(y), np.asarray(t)).shape
    return np.stack([np.broadcast_to(np.asarray(a, dtype=float), shape), np.broadcast_to(np.asarray(b, dtype=float), shape)])


def _sca(fn: ScalarXYT, x: Any, y: Any, t: Any) -> np.ndarray:
    shape = np.broadcast(np.asarray(x), np.asarray(y), np.asarray(t)).shape
    return np.broadcast_to(np.asarray(fn(x, y, t), dtype=float), shape)


def _d(fn: Callable[..., np.ndarray], x: Any, y: Any, t: Any, axis: str, h: float = FD_STEP) -> np.ndarray:
    if axis == "x":
        return (fn(x + h, y, t) - fn(x - h, y, t)) / (2.0 * h)
    if axis == "y":
        return (fn(x, y + h, t) - fn(x, y - h, t)) / (2.0 * h)
    return (fn(x, y, t + h) - fn(x, y, t - h)) / (2.0 * h)


def divergence_residual(case: ManufacturedCase, x: Any, y: Any, t: Any) -> np.ndarray:
    ux = _d(lambda *a: _vec(case.u, *a)[0], x, y, t, "x")
    vy = _d(lambda *a: _vec(case.u, *a)[1], x, y, t, "y")
    return ux + vy


def mass_residual(case: ManufacturedCase, x: Any, y: Any, t: Any) -> np.ndarray:
    """∂_t ρ + u·∇ρ (equals the conservative form when div u = 0)."""
    r = lambda *a: _sca(case.rho, *a)  # noqa: E731
    u = _vec(case.u, x, y, t)
    return _d(r, x, y, t, "t") + u[0] * _d(r, x, y, t, "x") + u[1] * _d(r, x, y, t, "y")


def momentum_residual(case: ManufacturedCase, x: Any, y: Any, t: Any) -> np.ndarray:
    """ρ(∂_t u + (u·∇)u) − μΔu + ∇p − f, shape (2, ...)."""
    U = lambda *a: _vec(case.u, *a)  # noqa: E731
    P = lambda *a: _sca(case.p, *a)  # noqa: E731
    rho = _sca(case.rho, x, y, t)
    u = U(x, y, t)
    ut = _d(U, x, y, t, "t")
    ux = _d(U, x, y, t, "x")
    uy = _d(U, x, y, t, "y")
    h = FD_STEP_LAPLACE
    lap = (U(x + h, y, t) + U(x - h, y, t) + U(x, y + h, t) + U(x, y - h, t) - 4.0 * u) / (h * h)
    grad_p = np.stack([_d(P, x, y, t, "x"), _d(P, x, y, t, "y")])
    f = _vec(case.f, x, y, t) if case.f is not None else np.zeros_like(u)
    return rho * (ut + u[0] * ux + u[1] * uy) - case.mu * lap + grad_p - f


def check_case(case: ManufacturedCase, n: int = 200, rng: Optional[np.random.Generator] = None) -> dict[str, float]:
    """Max strong residuals at n random space-time points of the case's domain."""
    rng = rng if rng is not None else np.random.default_rng(0)
    (x0, x1), (y0, y1) = case.domain
    x = rng.uniform(x0, x1, n)
    y = rng.uniform(y0, y1, n)
    t = rng.uniform(0.0, case.t_final, n)
    out = {
        "divergence": float(np.abs(divergence_residual(case, x, y, t)).max()),
        "mass": float(np.abs(mass_residual(case, x, y, t)).max()),
        "momentum": float(np.abs(momentum_residual(case, x, y, t)).max()),
    }
    logger.debug("residual oracle for %s: %s", case.name, out)
    return out


# ----------------------------
# нормы ошибок
# ----------------------------

@dataclass
class ErrorSeries:
    """Квадраты вкладов ошибки в записанные моменты (индекс 0 соответствует t = 0)."""

    dt: float
    rho_lower: float
    mu: float
    times: list[float] = field(default_factory=list)
    rho_l2_sq: list[float] = field(default_factory=list)
    rho_upwind_sq: list[float] = field(default_factory=list)
    vel_0h_sq: list[float] = field(default_factory=list)
    vel_ah_sq: list[float] = field(default_factory=list)

    def record(self, t: float, rho_err: CellField, u_err: HybridVelocity, transport: HybridVelocity) -> None:
        self.times.append(float(t))
        self.rho_l2_sq.append(rho_err.l2_norm_sq())
        self.rho_upwind_sq.append(upwind_seminorm(transport, rho_err) ** 2)
        self.vel_0h_sq.append(norm_0h(u_err) ** 2)
        self.vel_ah_sq.append(norm_ah(u_err) ** 2)

    def scaled(self, lam: float) -> "ErrorSeries":
        s = float(lam) ** 2
        return replace(
            self,
            times=list(self.times),
            rho_l2_sq=[s * v for v in self.rho_l2_sq],
            rho_upwind_sq=[s * v for v in self.rho_upwind_sq],
            vel_0h_sq=[s * v for v in self.vel_0h_sq],
            vel_ah_sq=[s * v for v in self.vel_ah_sq],
        )


class ErrorTracker:
    """Наблюдатель для ``run``: сравнивает каждое состояние с интерполянтами задачи."""

    def __init__(self, mesh: Mesh, case: ManufacturedCase, dt: float) -> None:
        self.mesh = mesh
        self.case = case
        self.series = ErrorSeries(dt=float(dt), rho_lower=float("nan"), mu=case.mu)

    def __call__(self, state: SimulationState) -> None:
        m = self.mesh
        if state.step == 0:
            self.series.rho_lower = state.rho.min()
        rho_ex = project_cell(self.case.rho_at(state.t), m)
        u_ex = interpolate_velocity(self.case.u_at(state.t), m, homogeneous=not self.case.dirichlet)
        self.series.record(state.t, state.rho - rho_ex, state.u - u_ex, state.u)


def density_error(series: ErrorSeries, dt: Optional[float] = None) -> float:
    """max_n (‖e(tⁿ)‖² + Σ_{0≤m<n} dt |e(tᵐ)|²_upw)^{1/2}; интеграл по времени по левым прямоугольникам."""
    dt = series.dt if dt is None else float(dt)
    if not series.times:
        return 0.0
    upw = np.asarray(series.rho_upwind_sq, dtype=float)
    acc = np.concatenate(([0.0], np.cumsum(dt * upw[:-1])))
    return float(np.sqrt(np.max(np.asarray(series.rho_l2_sq) + acc)))


def velocity_error(
    series: ErrorSeries, dt: Optional[float] = None, mu: Optional[float] = None, rho_lower: Optional[float] = None
) -> float:
    """(ρ̲ max_n ‖ê(tⁿ)‖²_{0,h} + μ Σ_{n<N} dt ‖ê(tⁿ)‖²_{a,h})^{1/2}; левые прямоугольники по времени."""
    dt = series.dt if dt is None else float(dt)
    mu = series.mu if mu is None else float(mu)
    lower = series.rho_lower if rho_lower is None else float(rho_lower)
    if not series.times:
        return 0.0
    total = lower * max(series.vel_0h_sq) + mu * dt * float(np.sum(series.vel_ah_sq[:-1]))
    return float(np.sqrt(max(total, 0.0)))


def eoc(errors: Sequence[float], hs: Sequence[float]) -> list[float]:
    """log(e_i/e_{i+1}) / log(h_i/h_{i+1}); NaN where an error is not positive."""
    e = [float(v) for v in errors]
    h = [float(v) for v in hs]
    if len(e) != len(h):
        raise ValueError(f"errors and hs differ in length ({len(e)} vs {len(h)})")
    if len(e) < 2:
        raise ValueError("eoc needs at least two levels")
    if any(not v > 0 for v in h) or any(a <= b for a, b in zip(h, h[1:])):
        raise ValueError("hs must be positive and strictly decreasing")
    rates = []
    for (e0, e1), (h0, h1) in zip(zip(e, e[1:]), zip(h, h[1:])):
        if e0 > 0 and e1 > 0 and math.isfinite(e0) and math.isfinite(e1):
            rates.append(math.log(e0 / e1) / math.log(h0 / h1))
        else:
            rates.append(math.nan)
    return rates


def run_case(
    mesh: Mesh,
    case: ManufacturedCase,
    config: TimeConfig,
    *,
    observers: Sequence[Callable[[SimulationState], None]] = (),
    system_hook: Any = None,
) -> RunResult:
    """``run`` with an ErrorTracker attached when the case has an exact solution."""
    tracker = ErrorTracker(mesh, case, config.dt) if case.exact else None
    obs = ([tracker] if tracker is not None else []) + list(observers)
    result = run(mesh, case, config, observers=obs, system_hook=system_hook)
    if tracker is not None:
        result.errors = tracker.series
        logger.info(
            "%s on %s: density error %.4e, velocity error %.4e",
            case.name, mesh.name, density_error(tracker.series), velocity_error(tracker.series),
        )
    return result


# ----------------------------
# выборки из Z_h
# ----------------------------

@dataclass(frozen=True)
class PolynomialStreamfunction:
    """ψ = x(1−x)y(1−y)·q(x, y) with q = c0 + c1 x + c2 y + c3 x² + c4 xy + c5 y².

    curl ψ is divergence-free and ψ = 0 on the unit square boundary, so the
    homogeneous interpolant lies in Z_h on any mesh of the unit square.
    """

    coeffs: tuple[float, float, float, float, float, float] = (1.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    @classmethod
    def random(cls, rng: np.random.Generator, degree: int = 2) -> "PolynomialStreamfunction":
        c = rng.standard_normal(6)
        if degree < 2:
            c[3:] = 0.0
        if degree < 1:
            c[1:] = 0.0
        return cls(tuple(float(v) for v in c))  # type: ignore[arg-type]

    def _q(self, x: Any, y: Any) -> tuple[Any, Any, Any]:
        c0, c1, c2, c3, c4, c5 = self.coeffs
        q = c0 + c1 * x + c2 * y + c3 * x * x + c4 * x * y + c5 * y * y
        return q, c1 + 2.0 * c3 * x + c4 * y, c2 + c4 * x + 2.0 * c5 * y

    def psi(self, x: Any, y: Any) -> Any:
        return x * (1.0 - x) * y * (1.0 - y) * self._q(x, y)[0]

    def velocity(self, x: Any, y: Any) -> tuple[Any, Any]:
        b = x * (1.0 - x) * y * (1.0 - y)
        bx = (1.0 - 2.0 * x) * y * (1.0 - y)
        by = x * (1.0 - x) * (1.0 - 2.0 * y)
        q, qx, qy = self._q(x, y)
        return by * q + b * qy, -(bx * q + b * qx)


def divergence_free_sample(
    mesh: Mesh, rng: np.random.Generator, *, degree: int = 2, scale: float = 1.0
) -> HybridVelocity:
    """I_h(curl ψ) for a random polynomial streamfunction; an element of Z_h."""
    psi = PolynomialStreamfunction.random(rng, degree)
    return scale * interpolate_velocity(psi.velocity, mesh, homogeneous=True)


# ----------------------------
# согласованность и ограниченность
# ----------------------------

def _smooth_density(x: Any, y: Any) -> Any:
    return 2.0 + 0.5 * np.sin(np.pi * x) * np.cos(np.pi * y)


def _bump_test_function(x: Any, y: Any) -> Any:
    return (np.sin(np.pi * x) * np.sin(np.pi * y)) ** 2


def _wall_field(x: Any, y: Any) -> tuple[Any, Any]:
    s = np.sin(np.pi * x) * np.sin(np.pi * y)
    return s, x * (1.0 - x) * y * (1.0 - y) * (1.0 + x)


_DEFAULT_PSI = PolynomialStreamfunction((1.0, 0.5, -0.3, 0.2, 0.4, -0.1))


@dataclass
class ConsistencyReport:
    form: str
    hs: list[float]
    residuals: list[float]
    rates: list[float]

    @property
    def last_rate(self) -> float:
        return self.rates[-1] if self.rates else math.nan

    def to_dict(self) -> dict[str, Any]:
        return {"form": self.form, "hs": self.hs, "residuals": self.residuals, "rates": self.rates}


def _levels(meshes: Sequence[Mesh]) -> list[Mesh]:
    ms = list(meshes)
    if len(ms) < 2:
        raise ValueError("a consistency rate needs at least two meshes")
    return ms


def consistency_rate_dh(
    meshes: Sequence[Mesh],
    phi: Callable[[Any, Any], Any] = _bump_test_function,
    rho: Callable[[Any, Any], Any] = _smooth_density,
    psi: PolynomialStreamfunction = _DEFAULT_PSI,
    *,
    zero_velocity: bool = False,
) -> ConsistencyReport:
    """res = d_h(u_h, ρ_h, π_h φ) + ∫ ρ_h u_h·∇φ per level, with its EOC."""
    hs, res = [], []
    for m in _levels(meshes):
        rho_h = project_cell(rho, m)
        u_h = interpolate_velocity(psi.velocity, m, homogeneous=True)
        if zero_velocity:
            u_h = 0.0 * u_h
        phi_h = project_cell(phi, m)
        # ρ_h u_h is piecewise constant: ∫_T ρ_T u_T·∇φ = ρ_T u_T·Σ_F ∫_F φ n_TF
        bulk = float(np.sum(rho_h.values[:, None] * u_h.cell_values * face_integrals_times_normal(m, phi)))
        r = abs(d_h(u_h, rho_h, phi_h) + bulk)
        hs.append(m.h)
        res.append(r)
        logger.info("d_h consistency on %s: h=%.4g residual=%.4e", m.name, m.h, r)
    return ConsistencyReport("d_h", hs, res, eoc(res, hs))


def consistency_rate_ch(
    meshes: Sequence[Mesh],
    rho: Callable[[Any, Any], Any] = _smooth_density,
    psi: PolynomialStreamfunction = _DEFAULT_PSI,
    v: Callable[[Any, Any], Any] = _wall_field,
) -> ConsistencyReport:
    """res = c_h(ρ_h, u_h, u_h, I_h v) + ½ d_h(u_h, ρ_h, u_h·v_h) + Σ_T |T| ρ_T u_T·(G_T v) u_T."""
    hs, res = [], []
    for m in _levels(meshes):
        rho_h = project_cell(rho, m)
        u_h = interpolate_velocity(psi.velocity, m, homogeneous=True)
        v_h = interpolate_velocity(v, m, homogeneous=True)
        chi = CellField(m, np.einsum("ck,ck->c", u_h.cell_values, v_h.cell_values))
        uT = u_h.cell_values
        bulk = float(m.cell_measure @ (rho_h.values * np.einsum("ca,cab,cb->c", uT, gradient(v_h), uT)))
        r = abs(c_h(rho_h, u_h, u_h, v_h) + 0.5 * d_h(u_h, rho_h, chi) + bulk)
        hs.append(m.h)
        res.append(r)
        logger.info("c_h consistency on %s: h=%.4g residual=%.4e", m.name, m.h, r)
    return ConsistencyReport("c_h", hs, res, eoc(res, hs))


def boundedness_ratio_ch(mesh: Mesh, rng: np.random.Generator, samples: int = 20) -> float:
    """max |c_h(ρ, w, v, z)| / (‖ρ‖_∞ ‖w‖_a ‖v‖_a ‖z‖_a) over random homogeneous data."""
    worst = 0.0
    for _ in range(int(samples)):
        rho = CellField(mesh, rng.uniform(1.0, 2.0, mesh.n_cells))
        w, v, z = (random_velocity(mesh, rng) for _ in range(3))
        denom = rho.max() * norm_ah(w) * norm_ah(v) * norm_ah(z)
        if denom > 0:
            worst = max(worst, abs(c_h(rho, w, v, z)) / denom)
    logger.info("c_h boundedness ratio on %s (%d samples): %.4e", mesh.name, samples, worst)
    return worst


def boundedness_ratio_dh(mesh: Mesh, rng: np.random.Generator, samples: int = 20) -> float:
    """max |d_h(v, η, w_h·z_h)| / (max η ‖v‖_a ‖w‖_a ‖z‖_a) with v ∈ Z_h."""
    worst = 0.0
    for _ in range(int(samples)):
        v = divergence_free_sample(mesh, rng)
        eta = CellField(mesh, rng.uniform(0.5, 2.0, mesh.n_cells))
        w, z = random_velocity(mesh, rng), random_velocity(mesh, rng)
        chi = CellField(mesh, np.einsum("ck,ck->c", w.cell_values, z.cell_values))
        denom = eta.max() * norm_ah(v) * norm_ah(w) * norm_ah(z)
        if denom > 0:
            worst = max(worst, abs(d_h(v, eta, chi)) / denom)
    logger.info("d_h boundedness ratio on %s (%d samples): %.4e", mesh.name, samples, worst)
    return worst
