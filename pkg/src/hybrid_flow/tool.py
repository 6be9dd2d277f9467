"""tool.py — единая точка входа (CLI) hybrid-flow.

Философия:
- конфигурация через run_config (defaults / extends / --set), lint до любых вычислений
- библиотека только бросает исключения; коды возврата выставляет main
- stdout: только результаты команд; диагностика в stderr через logging

Команды:
- run       : один прогон (diagnostics CSV, VTK-снимки, дампы матриц)
- study     : исследование сходимости по уровням семейства сеток (CSV + gnuplot)
- check     : набор инвариантов и тождеств на малых сетках (таблица pass/fail)
- lint      : проверка конфигурации
- mesh-info : отчёт о регулярности сетки
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import invariant_checks as checks_mod
from .config_lint import format_issues_text, has_errors, lint_config
from .errors import CliError, ConfigError, HybridFlowError, InvariantViolation, StudyLevelError
from .export_csv import convergence_rows, write_convergence_csv, write_diagnostics_csv, write_gnuplot_script
from .mesh import Mesh, build_family, family_label_h, regularity_report
from .mesh_io import load_mesh, write_matrix_market, write_vtk
from .run_config import FIELD_TYPES, RunConfig, merge_config_layers, parse_overrides, resolve_output_dir, save_run_config
from .timestepper import SimulationState, TimeConfig
from .verify import (
    ManufacturedCase,
    boundedness_ratio_ch,
    boundedness_ratio_dh,
    density_error,
    get_case,
    run_case,
    velocity_error,
)

logger = logging.getLogger(__name__)

DENSITY_RANGE_SLACK = 1e-9
BOUNDEDNESS_SAMPLES = 10


# ----------------------------
# Утилиты
# ----------------------------

def _pretty(obj: Any, pretty: bool) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=(2 if pretty else None))


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.WARNING
    if getattr(args, "verbose", False):
        level = logging.INFO
    if getattr(args, "diag", False):
        level = logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)


def _cli_overrides(args: argparse.Namespace) -> dict[str, Any]:
    out = parse_overrides(getattr(args, "set", None))
    if getattr(args, "level", None) is not None:
        out["level"] = args.level
    if getattr(args, "out", None):
        out["output_dir"] = args.out
    if getattr(args, "workers", None) is not None:
        out["workers"] = args.workers
    if getattr(args, "serial", False):
        out["workers"] = 1
    return out


def load_config(args: argparse.Namespace) -> RunConfig:
    """Слить слои, проверить линтером и собрать типизированную конфигурацию; ConfigError при ошибках линта."""
    raw = merge_config_layers(args.config, defaults_path=args.defaults, overrides=_cli_overrides(args))
    base_dir = Path(args.config).parent if args.config else None
    issues = lint_config(raw, base_dir=base_dir)
    if has_errors(issues):
        raise ConfigError("config rejected by lint:\n" + format_issues_text(issues))
    unknown = sorted(set(raw) - set(FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for it in issues:
        logger.warning("config %s: %s", it.path, it.message)
    cfg = RunConfig.from_dict(raw)
    if cfg.family_is_file and base_dir is not None and not Path(cfg.family).is_absolute():
        cfg.family = str(base_dir / cfg.family)
    return cfg


def prepare_output(cfg: RunConfig) -> Path:
    out = resolve_output_dir(cfg)
    try:
        out.mkdir(parents=True, exist_ok=True)
        marker = out / ".write_marker"
        marker.write_text("", encoding="utf-8")
        marker.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory is not writable: {out} ({exc})") from None
    return out


def mesh_for(cfg: RunConfig, level: int) -> Mesh:
    if cfg.family_is_file:
        return load_mesh(cfg.family)
    return build_family(cfg.family, level)


def time_config(cfg: RunConfig, level: int) -> TimeConfig:
    return TimeConfig(
        dt=cfg.dt_for_level(level),
        t_final=cfg.t_final,
        picard_iterations=cfg.picard_iterations,
        picard_tol=cfg.picard_tol,
        diagnostics_every=cfg.diagnostics_every,
        check_invariants=cfg.check_invariants,
    )


def _family_label(cfg: RunConfig) -> str:
    return Path(cfg.family).stem if cfg.family_is_file else cfg.family


def _failure_record(exc: BaseException) -> dict[str, Any]:
    rec: dict[str, Any] = {"type": type(exc).__name__, "message": str(exc)}
    to_dict = getattr(exc, "to_dict", None)
    if callable(to_dict):
        rec.update(to_dict())
    return rec


class SnapshotWriter:
    """Observer: VTK snapshot every ``every`` steps (0 = final state only)."""

    def __init__(self, out_dir: Path, every: int, n_steps: int) -> None:
        self.out_dir = out_dir
        self.every = int(every)
        self.n_steps = int(n_steps)
        self.reports: list[dict[str, Any]] = []

    def __call__(self, state: SimulationState) -> None:
        due = state.step == self.n_steps or (self.every > 0 and state.step % self.every == 0)
        if not due:
            return
        rep = write_vtk(
            state.rho.mesh,
            self.out_dir / f"fields_{state.step:06d}.vtk",
            {"density": state.rho.values, "velocity": state.u.cell_values, "pressure": state.p.values},
        )
        rep.pop("cell_order", None)
        self.reports.append(rep)


class MatrixDumper:
    """system_hook: Matrix Market dump of each system kind at step 1."""

    def __init__(self, out_dir: Path) -> None:
        self.out_dir = out_dir
        self.reports: list[dict[str, Any]] = []

    def __call__(self, kind: str, system: Any, step: int) -> None:
        if step != 1:
            return
        rep = write_matrix_market(
            system.matrix, self.out_dir / f"{kind}_step1.mtx", comment=f"hybrid-flow {kind} system, step 1"
        )
        self.reports.append(rep)


def boundedness_report(mesh: Mesh, seed: int, level: int = 0) -> dict[str, float]:
    """Наблюдаемые константы ограниченности c_h и d_h; выборка задаётся seed из конфигурации и уровнем."""
    rng = np.random.default_rng([int(seed), int(level)])
    return {
        "c_h": boundedness_ratio_ch(mesh, rng, BOUNDEDNESS_SAMPLES),
        "d_h": boundedness_ratio_dh(mesh, rng, BOUNDEDNESS_SAMPLES),
    }


def _check_density_range(case: ManufacturedCase, t_final: float, rho_min: float, rho_max: float, step: int) -> None:
    if case.density_range is None or t_final > case.range_horizon:
        return
    lo, hi = case.density_range
    if rho_min < lo - DENSITY_RANGE_SLACK:
        raise InvariantViolation("density data range (lower)", step, rho_min, detail=f"data range [{lo}, {hi}]")
    if rho_max > hi + DENSITY_RANGE_SLACK:
        raise InvariantViolation("density data range (upper)", step, rho_max, detail=f"data range [{lo}, {hi}]")


# ----------------------------
# Прогоны
# ----------------------------

def run_single(cfg: RunConfig, out_dir: Path) -> dict[str, Any]:
    """One simulation at ``cfg.level``; writes diagnostics and optional snapshots and dumps."""
    mesh = mesh_for(cfg, cfg.level)
    case = get_case(cfg.case, cfg.mu)
    tc = time_config(cfg, cfg.level)
    observers = []
    snapshots = None
    if cfg.emit_vtk:
        snapshots = SnapshotWriter(out_dir, cfg.vtk_every, tc.n_steps)
        observers.append(snapshots)
    dumper = MatrixDumper(out_dir) if cfg.emit_matrix else None

    result = run_case(mesh, case, tc, observers=observers, system_hook=dumper)
    _check_density_range(case, tc.t_final, result.state.rho.min(), result.state.rho.max(), result.n_steps)

    files = [write_diagnostics_csv(result.diagnostics, out_dir / "diagnostics.csv")]
    files += snapshots.reports if snapshots else []
    files += dumper.reports if dumper else []
    save_run_config(cfg, out_dir / "config.used.ini")

    summary: dict[str, Any] = {
        "kind": "run",
        "case": case.name,
        "mesh": mesh.name,
        "cells": mesh.n_cells,
        "h": mesh.h,
        "dt": result.dt,
        "steps": result.n_steps,
        "rho_min": result.state.rho.min(),
        "rho_max": result.state.rho.max(),
        "energy_ratio": result.ledger.energy_ratio,
        "seed": cfg.seed,
        "boundedness": boundedness_report(mesh, cfg.seed, cfg.level),
        "err_density": density_error(result.errors) if result.errors is not None else None,
        "err_velocity": velocity_error(result.errors) if result.errors is not None else None,
        "files": [f["out"] for f in files],
    }
    _write_json(out_dir / "summary.json", summary)
    return summary


def _run_level(cfg_dict: dict[str, Any], level: int, out_dir: str) -> dict[str, Any]:
    """One study level; top-level so that worker processes can pickle it."""
    cfg = RunConfig.from_dict(cfg_dict)
    started = time.perf_counter()
    try:
        mesh = mesh_for(cfg, level)
        case = get_case(cfg.case, cfg.mu)
        result = run_case(mesh, case, time_config(cfg, level))
        if result.errors is None:
            raise ConfigError(f"case {case.name!r} has no exact solution; a convergence study needs one")
        write_diagnostics_csv(result.diagnostics, Path(out_dir) / f"diagnostics_{_family_label(cfg)}_L{level}.csv")
        bounds = boundedness_report(mesh, cfg.seed, level)
    except HybridFlowError as exc:
        return {"level": level, "failure": _failure_record(exc)}
    h_label = mesh.h if cfg.family_is_file else family_label_h(cfg.family, level)
    return {
        "level": level,
        "h": h_label,
        "h_measured": mesh.h,
        "dt": result.dt,
        "cells": mesh.n_cells,
        "steps": result.n_steps,
        "err_density": density_error(result.errors),
        "err_velocity": velocity_error(result.errors),
        "boundedness": bounds,
        "seconds": time.perf_counter() - started,
    }


def run_convergence_study(cfg: RunConfig, out_dir: Path) -> dict[str, Any]:
    """Levels 0..levels-1 with dt halved per level; rows ordered by level before writing."""
    levels = [0] if cfg.family_is_file else list(range(cfg.levels))
    payload = cfg.to_dict()
    if cfg.workers > 1 and len(levels) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(levels))) as pool:
            records = list(pool.map(_run_level, [payload] * len(levels), levels, [str(out_dir)] * len(levels)))
    else:
        records = [_run_level(payload, lvl, str(out_dir)) for lvl in levels]
    records.sort(key=lambda r: r["level"])

    for rec in records:
        if "failure" in rec:
            raise StudyLevelError(rec["level"], rec["failure"])
        logger.info(
            "level %d: h=%.4g cells=%d steps=%d err_density=%.4e err_velocity=%.4e (%.1fs)",
            rec["level"], rec["h_measured"], rec["cells"], rec["steps"],
            rec["err_density"], rec["err_velocity"], rec["seconds"],
        )

    family = _family_label(cfg)
    rows = convergence_rows(family, records)
    for row in rows[1:]:
        logger.info("level %d: eoc density %.3f, eoc velocity %.3f", row["level"], row["eoc_density"], row["eoc_velocity"])
    csv_rep = write_convergence_csv(rows, out_dir / f"convergence_{family}.csv")
    gp_rep = write_gnuplot_script(csv_rep["out"], out_dir / f"convergence_{family}.gp", family=family, rows=rows)
    save_run_config(cfg, out_dir / "config.used.ini")
    return {
        "kind": "study",
        "family": family,
        "seed": cfg.seed,
        "rows": rows,
        "boundedness": [{"level": rec["level"], **rec["boundedness"]} for rec in records],
        "files": [csv_rep["out"], gp_rep["out"]],
    }


# ----------------------------
# Команды
# ----------------------------

def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    out = prepare_output(cfg)
    args.out_dir_resolved = out
    summary = run_single(cfg, out)
    print(_pretty(summary, args.pretty))
    return 0


def _format_rows(rows: Sequence[dict[str, Any]]) -> str:
    def num(v: Any, fmt: str) -> str:
        return "-" if v is None else format(v, fmt)

    lines = [f"{'level':>5}  {'h':>9}  {'dt':>9}  {'err_rho':>10}  {'eoc':>6}  {'err_u':>10}  {'eoc':>6}"]
    for r in rows:
        lines.append(
            f"{r['level']:>5}  {r['h']:>9.4g}  {r['dt']:>9.3g}  {r['err_density']:>10.4e}  "
            f"{num(r['eoc_density'], '6.3f'):>6}  {r['err_velocity']:>10.4e}  {num(r['eoc_velocity'], '6.3f'):>6}"
        )
    return "\n".join(lines)


def cmd_study(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    out = prepare_output(cfg)
    args.out_dir_resolved = out
    rep = run_convergence_study(cfg, out)
    if args.json:
        print(_pretty(rep, args.pretty))
    else:
        print(_format_rows(rep["rows"]))
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    rep = checks_mod.run_invariant_checks(args.seed, only=args.only or None)
    if args.json:
        print(_pretty(rep, args.pretty))
    else:
        print(checks_mod.format_report_text(rep))
    return 0 if rep.get("ok") else 1


def cmd_lint(args: argparse.Namespace) -> int:
    raw = merge_config_layers(args.config, defaults_path=args.defaults, overrides=parse_overrides(args.set))
    issues = lint_config(raw, base_dir=Path(args.config).parent)
    bad = has_errors(issues)
    if args.json:
        print(_pretty({"ok": not bad, "issues": [i.to_dict() for i in issues]}, args.pretty))
    else:
        print(format_issues_text(issues))
    return 2 if bad else 0


def cmd_mesh_info(args: argparse.Namespace) -> int:
    if args.mesh:
        if not Path(args.mesh).is_file():
            raise CliError(f"mesh file not found: {args.mesh}")
        mesh = load_mesh(args.mesh)
    elif args.family:
        try:
            mesh = build_family(args.family, args.level)
        except ValueError as exc:
            raise CliError(str(exc)) from None
    else:
        raise CliError("mesh-info needs --family or --mesh")
    rep = {
        "mesh": mesh.name,
        "cells": mesh.n_cells,
        "faces": mesh.n_faces,
        "boundary_faces": int(mesh.boundary_faces.size),
        "vertices": mesh.n_vertices,
        "h": mesh.h,
        "area": mesh.domain_measure,
        "regularity": regularity_report(mesh).to_dict(),
    }
    print(_pretty(rep, args.pretty))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybrid-flow")
    p.add_argument("--pretty", action="store_true", help="pretty JSON output")
    p.add_argument("--defaults", default=None, help="defaults config file (lowest layer)")
    p.add_argument("--verbose", action="store_true", help="INFO logging on stderr")
    p.add_argument("--diag", action="store_true", help="DEBUG logging on stderr (per-step invariant margins)")

    sub = p.add_subparsers(dest="cmd", required=True)

    # run
    r = sub.add_parser("run", help="one simulation: diagnostics CSV, optional VTK and Matrix Market dumps")
    r.add_argument("--config", required=True)
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    r.add_argument("--level", type=int, default=None, help="mesh level (default from config)")
    r.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    r.set_defaults(fn=cmd_run)

    # study
    s = sub.add_parser("study", help="convergence study over the levels of a mesh family")
    s.add_argument("--config", required=True)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--out", default=None)
    s.add_argument("--workers", type=int, default=None, help="levels run in parallel processes")
    s.add_argument("--serial", action="store_true", help="force workers=1")
    s.add_argument("--json", action="store_true")
    s.set_defaults(fn=cmd_study)

    # check
    c = sub.add_parser("check", help="invariant and identity suite on small meshes")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--only", action="append", default=[], help="run checks whose name contains this")
    c.add_argument("--json", action="store_true")
    c.set_defaults(fn=cmd_check)

    # lint
    l = sub.add_parser("lint", help="static config validation (no compute)")
    l.add_argument("--config", required=True)
    l.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    l.add_argument("--json", action="store_true")
    l.set_defaults(fn=cmd_lint)

    # mesh-info
    m = sub.add_parser("mesh-info", help="mesh counts and regularity ratios")
    m.add_argument("--family", default=None)
    m.add_argument("--level", type=int, default=0)
    m.add_argument("--mesh", default=None, help="mesh file instead of a family")
    m.set_defaults(fn=cmd_mesh_info)

    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    p = build_parser()
    args = p.parse_args(argv)
    _configure_logging(args)

    try:
        return int(args.fn(args) or 0)
    except CliError as e:
        print(str(e), file=sys.stderr)
        return int(e.exit_code)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except HybridFlowError as e:
        out: Optional[Path] = getattr(args, "out_dir_resolved", None)
        if out is not None:
            _write_json(out / "failure.json", _failure_record(e))
        print(f"simulation failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
