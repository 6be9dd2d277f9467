"""export_csv.py — CSV-отчёты прогонов и сценарий gnuplot для графика сходимости.

Форматы:
- diagnostics CSV: одна строка на записанный шаг (колонки DIAGNOSTICS_FIELDS)
- convergence CSV: одна строка на уровень; EOC пусто на первой строке и там, где не определено
- gnuplot: log-log ошибки против h + опорные наклоны ½ и 1

Числа пишутся через repr (кратчайшая точная запись), поэтому повторный
последовательный прогон даёт побайтно те же файлы.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from .timestepper import DIAGNOSTICS_FIELDS
from .verify import eoc

CONVERGENCE_FIELDS = [
    "family", "level", "h", "dt", "err_density", "err_velocity", "eoc_density", "eoc_velocity",
]


def _cast(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return "" if not math.isfinite(v) else repr(v)
    try:
        f = float(v)  # numpy scalars
    except (TypeError, ValueError):
        return str(v)
    return "" if not math.isfinite(f) else repr(f)


def _write_rows(
    rows: Sequence[Mapping[str, Any]], path: str | Path, fields: Sequence[str], kind: str, dialect: str
) -> dict[str, Any]:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with out.open("w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), dialect=dialect, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: _cast(row.get(k)) for k in fields})
            n += 1
    return {"kind": kind, "out": str(out), "rows": n, "fields": list(fields)}


def write_diagnostics_csv(
    rows: Sequence[Mapping[str, Any]], path: str | Path, *, dialect: str = "unix"
) -> dict[str, Any]:
    return _write_rows(rows, path, DIAGNOSTICS_FIELDS, "diagnostics", dialect)


def convergence_rows(family: str, levels: Sequence[Mapping[str, Any]]) -> list[dict[str, Any]]:
    """Rows of the convergence report from per-level records.

    Each record needs ``level``, ``h`` (report label), ``dt``, ``err_density``,
    ``err_velocity``; EOC uses ``h_measured`` when present.
    """
    recs = sorted(levels, key=lambda r: int(r["level"]))
    rows = [
        {
            "family": family,
            "level": int(r["level"]),
            "h": float(r["h"]),
            "dt": float(r["dt"]),
            "err_density": float(r["err_density"]),
            "err_velocity": float(r["err_velocity"]),
            "eoc_density": None,
            "eoc_velocity": None,
        }
        for r in recs
    ]
    if len(recs) >= 2:
        hs = [float(r.get("h_measured", r["h"])) for r in recs]
        for key in ("density", "velocity"):
            rates = eoc([row[f"err_{key}"] for row in rows], hs)
            for row, rate in zip(rows[1:], rates):
                row[f"eoc_{key}"] = rate
    return rows


def write_convergence_csv(
    rows: Sequence[Mapping[str, Any]], path: str | Path, *, dialect: str = "unix"
) -> dict[str, Any]:
    return _write_rows(rows, path, CONVERGENCE_FIELDS, "convergence", dialect)


def write_gnuplot_script(
    csv_path: str | Path,
    path: str | Path,
    *,
    family: str,
    rows: Optional[Sequence[Mapping[str, Any]]] = None,
) -> dict[str, Any]:
    """Log-log plot of both errors against h; reference slopes anchored at the coarsest level."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_name = Path(csv_path).name
    png = out.with_suffix(".png").name

    lines = [
        f"# convergence plot for the {family} family; run: gnuplot {out.name}",
        'set datafile separator ","',
        "set key autotitle columnhead top left",
        "set logscale xy",
        'set format x "%g"',
        'set format y "%.1e"',
        'set xlabel "h"',
        'set ylabel "error"',
        f'set title "{family} meshes"',
        "set terminal pngcairo size 900,600",
        f'set output "{png}"',
    ]
    plot = [
        f'"{csv_name}" using 3:5 with linespoints pt 7 title "density"',
        f'"{csv_name}" using 3:6 with linespoints pt 5 title "velocity"',
    ]
    if rows:
        first = min(rows, key=lambda r: int(r["level"]))
        h0 = float(first["h"])
        ed, ev = float(first["err_density"]), float(first["err_velocity"])
        if h0 > 0 and ed > 0:
            lines.append(f"ref_half(x) = {ed!r} * (x / {h0!r}) ** 0.5")
            plot.append('ref_half(x) with lines dt 2 lc rgb "gray40" title "slope 1/2"')
        if h0 > 0 and ev > 0:
            lines.append(f"ref_one(x) = {ev!r} * (x / {h0!r})")
            plot.append('ref_one(x) with lines dt 3 lc rgb "gray40" title "slope 1"')
    lines.append("plot " + ", \\\n     ".join(plot))
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"kind": "gnuplot", "in": str(csv_path), "out": str(out), "rows": len(rows or ()), "fields": ["h", "err_density", "err_velocity"]}
