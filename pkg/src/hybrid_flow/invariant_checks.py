"""invariant_checks.py — набор проверок `check`: тождества форм и структурные свойства на малых сетках.

Без файлов и без длинных прогонов: каждая проверка считает одно число и сравнивает
его с допуском. Результат: dict-отчёт (ok, checks, issues), как у offline-тестов профилей.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .assembly import assemble_density_transport, assemble_saddle, residual_ratio, solve
from .convection import c_h, d_h, d_h_jump_form, discrete_ibp_check, upwind_seminorm
from .errors import HybridFlowError
from .mesh import FAMILIES, Mesh, build_cartesian, build_family, build_triangular, closure_defect, magic_identity_defect
from .mesh_io import load_bundled
from .operators import divergence, gradient, norm_equivalence_constants, stabilisation_matrix
from .spaces import (
    CellField,
    HybridVelocity,
    interpolate_velocity,
    max_sobolev_ratio,
    project_cell,
    random_velocity,
)
from .timestepper import TimeConfig, run
from .verify import (
    bump_case,
    check_case,
    consistency_rate_ch,
    consistency_rate_dh,
    divergence_free_sample,
    guermond_case,
    ORACLE_TOL,
)

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-12


@dataclass
class _Issue:
    level: str  # error|warn
    check: str
    message: str


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float
    status: str = ""     # pass|fail|info
    detail: str = ""
    seconds: float = 0.0

    def __post_init__(self) -> None:
        if not self.status:
            self.status = "pass" if np.isfinite(self.value) and self.value <= self.tol else "fail"

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name, "status": self.status, "value": self.value,
            "tol": self.tol, "detail": self.detail, "seconds": round(self.seconds, 3),
        }


def small_meshes() -> list[Mesh]:
    """2×2 squares, two triangles, the bundled hexagon patch."""
    return [build_cartesian(2, 2), build_triangular(1), load_bundled()]


def _rel(a: float, b: float, scale: float) -> float:
    return abs(a - b) / max(scale, 1e-300)


# ----------------------------
# проверки
# ----------------------------

def check_mesh_geometry(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for m in small_meshes() + [build_family("hexagonal", 0)]:
        worst = max(worst, float(closure_defect(m).max()), float(magic_identity_defect(m).max()))
    return CheckResult("mesh closure and Σ|F| n (x_F − x_T)ᵀ = |T| I", worst, IDENTITY_TOL)


def check_ch_skew(rng: np.random.Generator, samples: int = 500) -> CheckResult:
    worst = 0.0
    meshes = small_meshes()
    for i in range(samples):
        m = meshes[i % len(meshes)]
        rho = CellField(m, rng.uniform(0.5, 3.0, m.n_cells))
        w = random_velocity(m, rng)
        v = random_velocity(m, rng)
        scale = rho.max() * w.max_abs() * v.max_abs() ** 2 * float(m.face_measure.sum())
        worst = max(worst, abs(c_h(rho, w, v, v)) / max(scale, 1e-300))
    return CheckResult(f"c_h(ρ, w, v, v) = 0 ({samples} samples)", worst, IDENTITY_TOL)


def _zh_scale(w: HybridVelocity, eta: CellField) -> float:
    return float(np.abs(w.normal_flux()).sum()) * float(np.abs(eta.values).max()) ** 2


def check_dh_coercivity(rng: np.random.Generator, samples: int = 200) -> CheckResult:
    worst = 0.0
    meshes = small_meshes()
    for i in range(samples):
        m = meshes[i % len(meshes)]
        w = divergence_free_sample(m, rng)
        eta = CellField(m, rng.standard_normal(m.n_cells))
        worst = max(worst, _rel(d_h(w, eta, eta), upwind_seminorm(w, eta) ** 2, _zh_scale(w, eta)))
    return CheckResult(f"d_h(w, η, η) = |η|²_upw for w ∈ Z_h ({samples} samples)", worst, IDENTITY_TOL)


def check_dh_jump_form(rng: np.random.Generator, samples: int = 200) -> CheckResult:
    worst = 0.0
    meshes = small_meshes()
    for i in range(samples):
        m = meshes[i % len(meshes)]
        w = divergence_free_sample(m, rng)
        eta = CellField(m, rng.standard_normal(m.n_cells))
        chi = CellField(m, rng.standard_normal(m.n_cells))
        scale = _zh_scale(w, eta) + _zh_scale(w, chi)
        worst = max(worst, _rel(d_h(w, eta, chi), d_h_jump_form(w, eta, chi), scale))
    return CheckResult(f"d_h = jump/average form for w ∈ Z_h ({samples} samples)", worst, IDENTITY_TOL)


def check_discrete_ibp(rng: np.random.Generator, samples: int = 200) -> CheckResult:
    worst = 0.0
    meshes = small_meshes()
    for i in range(samples):
        m = meshes[i % len(meshes)]
        rho = CellField(m, rng.uniform(0.5, 3.0, m.n_cells))
        worst = max(worst, discrete_ibp_check(rho, random_velocity(m, rng), random_velocity(m, rng)))
    return CheckResult(f"discrete integration by parts for c_h ({samples} samples)", worst, IDENTITY_TOL)


def check_affine_exactness(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for m in small_meshes():
        A = rng.standard_normal((2, 2))
        b = rng.standard_normal(2)
        v = interpolate_velocity(lambda x, y: (A[0, 0] * x + A[0, 1] * y + b[0], A[1, 0] * x + A[1, 1] * y + b[1]), m)
        worst = max(worst, float(np.abs(gradient(v) - A).max()) / max(1.0, float(np.abs(A).max())))
        vec = v.to_vector()
        worst = max(worst, abs(float(vec @ (stabilisation_matrix(m) @ vec))) / max(1.0, float(vec @ vec)))
    return CheckResult("G_T exact and s_T = 0 on affine fields", worst, IDENTITY_TOL)


def check_divergence_commutes(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for m in small_meshes():
        v = interpolate_velocity(lambda x, y: (x ** 3 * y + x * x, x * y ** 3 - 2.0 * x * y), m)
        div = project_cell(lambda x, y: 3.0 * x * x * y + 3.0 * x * y * y, m)
        worst = max(worst, float(np.abs(divergence(v) - div.values).max()))
    return CheckResult("D_h I_h v = π_h div v (cubic v)", worst, IDENTITY_TOL)


def check_transport_m_matrix(rng: np.random.Generator, samples: int = 30) -> CheckResult:
    """Минимум по выборке запаса диагонального преобладания по строкам (в масштабе строки); отрицательный запас означает провал."""
    meshes = small_meshes() + [build_family("cartesian", 0)]
    worst = np.inf
    for i in range(samples):
        m = meshes[i % len(meshes)]
        u = divergence_free_sample(m, rng, scale=float(rng.uniform(0.1, 10.0)))
        dt = float(10.0 ** rng.uniform(-4, 0))
        A = assemble_density_transport(m, u, CellField.constant(m, 1.0), dt).matrix.toarray()
        diag = np.diag(A)
        off = A - np.diag(diag)
        if off.max(initial=0.0) > 0.0:
            worst = min(worst, -float(off.max()))
        row_scale = np.abs(A).max(axis=1)
        margin = (diag - np.abs(off).sum(axis=1)) / row_scale
        worst = min(worst, float(margin.min()))
    return CheckResult(
        "transport matrix is an M-matrix (row dominance margin)", -worst, 1e-13,
        detail=f"min margin {worst:.3e}",
    )


def check_transport_step(rng: np.random.Generator, samples: int = 30) -> CheckResult:
    meshes = small_meshes() + [build_family("triangular", 0)]
    worst = 0.0
    for i in range(samples):
        m = meshes[i % len(meshes)]
        u = divergence_free_sample(m, rng, scale=float(rng.uniform(0.1, 10.0)))
        dt = float(10.0 ** rng.uniform(-3, 0))
        rho = CellField(m, rng.uniform(1.0, 2.0, m.n_cells))
        new = CellField(m, solve(assemble_density_transport(m, u, rho, dt)))
        tol = rho.max()
        worst = max(
            worst,
            max(rho.min() - new.min(), new.max() - rho.max(), 0.0) / tol,
            abs(new.integral() - rho.integral()) / rho.integral(),
        )
        decay = new.l2_norm_sq() + 2.0 * dt * upwind_seminorm(u, new) ** 2 - rho.l2_norm_sq()
        worst = max(worst, max(decay, 0.0) / rho.l2_norm_sq())
    return CheckResult("implicit upwind step: range, mass, L² decay", worst, 1e-10)


def check_stokes_solve(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for m in small_meshes() + [build_family("hexagonal", 0)]:
        one = CellField.constant(m, 1.0)
        u0 = HybridVelocity.zeros(m)
        force = lambda x, y: (np.sin(np.pi * y), x * x)  # noqa: E731
        system = assemble_saddle(m, one, one, one, u0, force, float("inf"), 1.0, include_convection=False)
        x = solve(system)
        worst = max(worst, residual_ratio(system.matrix, x, system.rhs))
    return CheckResult("steady Stokes saddle solve residual", worst, 1e-10)


def check_kinetic_decay(rng: np.random.Generator, steps: int = 100) -> CheckResult:
    m = build_cartesian(4, 4)
    result = run(m, bump_case(), TimeConfig(dt=0.01, t_final=0.01 * steps))
    kin = np.asarray(result.ledger.kinetic)
    growth = float(np.max(np.diff(kin), initial=0.0)) / max(float(kin[0]), 1e-300)
    return CheckResult(f"kinetic proxy nonincreasing ({steps} steps, closed cavity)", max(growth, 0.0), 1e-10)


def check_norm_equivalence(rng: np.random.Generator) -> CheckResult:
    drift = 0.0
    parts = []
    for fam in ("cartesian", "triangular", "hexagonal"):
        consts = [norm_equivalence_constants(build_family(fam, lvl)) for lvl in range(3)]
        for k in range(2):
            vals = np.array([c[k] for c in consts])
            drift = max(drift, float(np.abs(vals - vals[-1]).max() / vals[-1]))
        parts.append(f"{fam}: c={consts[-1][0]:.3g} C={consts[-1][1]:.3g}")
    return CheckResult("‖·‖_a,h ≃ ‖·‖_1,h constants over 3 levels (drift)", drift, 0.1, detail="; ".join(parts))


def check_sobolev_ratio(
    rng: np.random.Generator,
    samples: int = 200,
    levels: Sequence[int] = (1, 2, 3),
    families: Sequence[str] = FAMILIES,
) -> CheckResult:
    """Дрейф max sobolev_lhs/norm_1h по уровням каждого семейства, p = 2 и 4."""
    drift = 0.0
    parts = []
    for fam in families:
        meshes = [build_family(fam, lvl) for lvl in levels]
        for p in (2.0, 4.0):
            # одно зерно на семейство и p: те же коэффициенты смесей на всех уровнях
            seed = int(rng.integers(2**63))
            r = np.array([max_sobolev_ratio(m, p, np.random.default_rng(seed), samples) for m in meshes])
            drift = max(drift, float(np.abs(r - r[-1]).max() / r[-1]))
            parts.append(f"{fam} p={p:g}: {r.max():.3g}")
    return CheckResult(
        f"discrete Sobolev ratio over {len(levels)} levels (drift, p = 2, 4)", drift, 0.1, detail="; ".join(parts)
    )


def check_consistency_rates(rng: np.random.Generator) -> CheckResult:
    meshes = [build_family("cartesian", lvl) for lvl in range(3)]
    rd = consistency_rate_dh(meshes)
    rc = consistency_rate_ch(meshes)
    low = min(rd.last_rate, rc.last_rate)
    return CheckResult(
        "consistency rates of d_h and c_h (≥ 0.4)", -low, -0.4,
        detail=f"d_h rates {rd.rates}, c_h rates {rc.rates}",
    )


def check_guermond_oracle(rng: np.random.Generator) -> CheckResult:
    res = check_case(guermond_case(), 200, rng)
    return CheckResult("manufactured force passes the PDE residual oracle", max(res.values()), ORACLE_TOL, detail=str(res))


CHECKS: list[Callable[[np.random.Generator], CheckResult]] = [
    check_mesh_geometry,
    check_guermond_oracle,
    check_ch_skew,
    check_dh_coercivity,
    check_dh_jump_form,
    check_discrete_ibp,
    check_affine_exactness,
    check_divergence_commutes,
    check_transport_m_matrix,
    check_transport_step,
    check_stokes_solve,
    check_kinetic_decay,
    check_norm_equivalence,
    check_sobolev_ratio,
    check_consistency_rates,
]


def run_invariant_checks(seed: int = 0, *, only: Optional[list[str]] = None) -> dict[str, Any]:
    """Запустить все проверки (или те, чьё имя функции содержит одну из строк ``only``)."""
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []
    issues: list[_Issue] = []
    for fn in CHECKS:
        if only and not any(key in fn.__name__ for key in only):
            continue
        started = time.perf_counter()
        try:
            res = fn(rng)
        except HybridFlowError as exc:
            res = CheckResult(fn.__name__, float("nan"), 0.0, status="fail", detail=str(exc))
        res.seconds = time.perf_counter() - started
        if res.status == "fail":
            issues.append(_Issue("error", res.name, res.detail or f"value {res.value:.3e} > tol {res.tol:.1e}"))
        logger.debug("check %s: %s (%.3e, %.2fs)", res.name, res.status, res.value, res.seconds)
        results.append(res)

    return {
        "ok": not any(i.level == "error" for i in issues),
        "seed": seed,
        "checks": [r.to_dict() for r in results],
        "issues": [{"level": i.level, "check": i.check, "message": i.message} for i in issues],
    }


def format_report_text(rep: dict[str, Any]) -> str:
    ok = bool(rep.get("ok"))
    checks = rep.get("checks") or []
    lines = [f"check: {'OK' if ok else 'FAIL'}  seed={rep.get('seed')}  checks={len(checks)}"]
    for c in checks:
        lines.append(f"  {c['status'].upper():4}  {c['value']:10.3e}  tol {c['tol']:8.1e}  {c['name']}")
    issues = rep.get("issues") or []
    if issues:
        lines.append("Issues:")
        for it in issues:
            lines.append(f"- {it['level']}: {it['check']} - {it['message']}")
    return "\n".join(lines)
