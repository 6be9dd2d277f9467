"""config_lint.py — проверка слитой конфигурации до любых вычислений.

Что lint УМЕЕТ:
- неизвестные ключи (warn), типы и диапазоны значений (error)
- существование задачи и семейства сеток / файла сетки
- доступность каталога вывода на запись

Что lint ОСОЗНАННО НЕ ДЕЛАЕТ:
- не строит сетки и не решает ничего (для этого есть `check`)
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional

from .errors import ConfigError
from .mesh import FAMILIES
from .run_config import FIELD_TYPES, RunConfig, coerce_value, resolve_output_dir
from .verify import CASES


@dataclass
class LintIssue:
    level: str   # error|warn
    path: str
    message: str

    def to_dict(self) -> dict[str, str]:
        return {"level": self.level, "path": self.path, "message": self.message}


_RANGES: dict[str, tuple[str, float]] = {
    "levels": (">=", 1),
    "level": (">=", 0),
    "dt0": (">", 0.0),
    "t_final": (">", 0.0),
    "mu": (">", 0.0),
    "picard_iterations": (">=", 0),
    "picard_tol": (">", 0.0),
    "diagnostics_every": (">=", 1),
    "vtk_every": (">=", 0),
    "workers": (">=", 1),
    "seed": (">=", 0),
}


def _nearest_existing(p: Path) -> Path:
    cur = p
    while not cur.exists() and cur.parent != cur:
        cur = cur.parent
    return cur


def lint_config(
    raw: Mapping[str, Any],
    *,
    env: Optional[Mapping[str, str]] = None,
    base_dir: Optional[str | Path] = None,
    check_output: bool = True,
) -> list[LintIssue]:
    issues: list[LintIssue] = []
    values: dict[str, Any] = {}

    for key in sorted(raw):
        if key in ("extends", "_extends"):
            continue
        if key not in FIELD_TYPES:
            issues.append(LintIssue("warn", key, "неизвестный ключ: run его отвергнет"))
            continue
        try:
            values[key] = coerce_value(key, raw[key])
        except ConfigError as exc:
            issues.append(LintIssue("error", key, str(exc)))

    for key, (op, bound) in _RANGES.items():
        if key not in values:
            continue
        v = values[key]
        ok = v >= bound if op == ">=" else v > bound
        if not ok:
            issues.append(LintIssue("error", key, f"must be {op} {bound}, got {v!r}"))

    case = values.get("case", RunConfig.case)
    if case not in CASES:
        issues.append(LintIssue("error", "case", f"unknown case {case!r}; known: {sorted(CASES)}"))

    family = values.get("family", RunConfig.family)
    if family not in FAMILIES:
        p = Path(family)
        if not p.is_absolute() and base_dir is not None:
            p = Path(base_dir) / p
        if not p.is_file():
            issues.append(LintIssue("error", "family", f"neither a family {list(FAMILIES)} nor a mesh file: {family!r}"))
        elif values.get("levels", RunConfig.levels) > 1:
            issues.append(LintIssue("warn", "levels", "a mesh file has one level; a study will run it once"))

    dt0 = values.get("dt0", RunConfig.dt0)
    t_final = values.get("t_final", RunConfig.t_final)
    if isinstance(dt0, float) and isinstance(t_final, float) and dt0 > 0 and dt0 > t_final:
        issues.append(LintIssue("warn", "dt0", f"dt0={dt0!r} exceeds t_final={t_final!r}: a single step will run"))

    if values.get("emit_vtk") and values.get("vtk_every", 0) == 0:
        issues.append(LintIssue("warn", "vtk_every", "emit_vtk without vtk_every writes the final snapshot only"))

    if check_output:
        cfg_out = RunConfig(output_dir=values.get("output_dir", RunConfig.output_dir))
        out = resolve_output_dir(cfg_out, env)
        if out.exists() and not out.is_dir():
            issues.append(LintIssue("error", "output_dir", f"not a directory: {out}"))
        else:
            anchor = _nearest_existing(out.resolve())
            if not os.access(anchor, os.W_OK):
                issues.append(LintIssue("error", "output_dir", f"not writable: {out} (checked {anchor})"))

    return issues


def has_errors(issues: list[LintIssue]) -> bool:
    return any(i.level == "error" for i in issues)


def format_issues_text(issues: list[LintIssue]) -> str:
    if not issues:
        return "OK: конфигурация прошла lint."

    errors = [i for i in issues if i.level == "error"]
    warns = [i for i in issues if i.level != "error"]

    lines: list[str] = []
    if errors:
        lines.append(f"ERRORS: {len(errors)}")
        for i in errors:
            lines.append(f"  - {i.path}: {i.message}")
    if warns:
        lines.append(f"WARNINGS: {len(warns)}")
        for i in warns:
            lines.append(f"  - {i.path}: {i.message}")
    return "\n".join(lines)
