from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from hybrid_flow import tool
from hybrid_flow.errors import InvariantViolation
from hybrid_flow.mesh_io import bundled_mesh_path


def _config(tmp_path: Path, body: str, name: str = "cfg.ini") -> Path:
    p = tmp_path / name
    p.write_text(body, encoding="utf-8")
    return p


SHORT_RUN = """\
[run]
case = guermond

[mesh]
family = triangular
level = 0

[time]
dt0 = 0.05
t_final = 0.1
"""


def test_mesh_info_family(capsys):
    assert tool.main(["mesh-info", "--family", "cartesian", "--level", "1"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["cells"] == 100
    assert rep["area"] == pytest.approx(1.0)
    assert rep["regularity"]["face_count_histogram"] == {"4": 100}


def test_mesh_info_file_and_errors(capsys):
    assert tool.main(["--pretty", "mesh-info", "--mesh", str(bundled_mesh_path())]) == 0
    assert json.loads(capsys.readouterr().out)["cells"] == 10
    assert tool.main(["mesh-info"]) == 2
    assert tool.main(["mesh-info", "--family", "voronoi"]) == 2
    assert tool.main(["mesh-info", "--mesh", "does/not/exist.mesh"]) == 2
    assert "not found" in capsys.readouterr().err


def test_mesh_info_reports_malformed_mesh(tmp_path: Path, capsys):
    bad = tmp_path / "bad.mesh"
    bad.write_text("VERTICES 3\n0 0\n1 0\n1 1\nCELLS 1\n3 0 2 1\n", encoding="utf-8")
    assert tool.main(["mesh-info", "--mesh", str(bad)]) == 1
    assert "simulation failed" in capsys.readouterr().err


def test_lint_ok_and_errors(tmp_path: Path, capsys):
    good = _config(tmp_path, SHORT_RUN + f"\n[output]\noutput_dir = {tmp_path / 'out'}\n")
    assert tool.main(["lint", "--config", str(good)]) == 0
    assert capsys.readouterr().out.startswith("OK")

    assert tool.main(["lint", "--config", str(good), "--set", "levels=0", "--json"]) == 2
    rep = json.loads(capsys.readouterr().out)
    assert rep["ok"] is False
    assert any(i["path"] == "levels" for i in rep["issues"])


def test_run_writes_outputs(tmp_path: Path, capsys):
    cfg = _config(
        tmp_path,
        SHORT_RUN + "\n[output]\nemit_vtk = true\nvtk_every = 1\nemit_matrix = true\n",
    )
    out = tmp_path / "out"
    assert tool.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == 2
    assert summary["cells"] == 32
    assert 2.0 - 1e-9 <= summary["rho_min"] <= summary["rho_max"] <= 2.0 + 2 ** 0.5 + 1e-9
    assert summary["err_density"] > 0.0

    for name in ("diagnostics.csv", "config.used.ini", "summary.json",
                 "fields_000000.vtk", "fields_000002.vtk", "transport_step1.mtx", "saddle_step1.mtx"):
        assert (out / name).is_file(), name
    with open(out / "diagnostics.csv", "r", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert [r["step"] for r in rows] == ["0", "1", "2"]

    # сохранённая конфигурация воспроизводит прогон
    again = tmp_path / "again"
    assert tool.main(["run", "--config", str(out / "config.used.ini"), "--out", str(again)]) == 0
    capsys.readouterr()
    assert (again / "diagnostics.csv").read_text() == (out / "diagnostics.csv").read_text()


def test_run_rejects_bad_config(tmp_path: Path, capsys):
    cfg = _config(tmp_path, SHORT_RUN + "\n[time]\nspeed = 2\n", name="bad.ini")
    assert tool.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "speed" in capsys.readouterr().err
    assert tool.main(["run", "--config", str(tmp_path / "missing.ini")]) == 2


def test_run_failure_writes_failure_json(tmp_path: Path, monkeypatch, capsys):
    def explode(*a, **kw):
        raise InvariantViolation("maximum principle (upper)", 3, 4.5, cell=7)

    monkeypatch.setattr(tool, "run_case", explode)
    out = tmp_path / "out"
    cfg = _config(tmp_path, SHORT_RUN)
    assert tool.main(["run", "--config", str(cfg), "--out", str(out)]) == 1
    rec = json.loads((out / "failure.json").read_text(encoding="utf-8"))
    assert rec["type"] == "InvariantViolation"
    assert rec["invariant"] == "maximum principle (upper)"
    assert rec["step"] == 3 and rec["cell"] == 7
    assert "simulation failed" in capsys.readouterr().err


def test_study_writes_convergence_table(tmp_path: Path, capsys):
    cfg = _config(tmp_path, SHORT_RUN.replace("triangular", "cartesian") + "levels = 2\n")
    out = tmp_path / "study"
    assert tool.main(["study", "--config", str(cfg), "--out", str(out), "--serial"]) == 0
    table = capsys.readouterr().out.splitlines()
    assert table[0].split()[:3] == ["level", "h", "dt"]
    assert len(table) == 3

    with open(out / "convergence_cartesian.csv", "r", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert [r["level"] for r in rows] == ["0", "1"]
    assert float(rows[1]["dt"]) == pytest.approx(0.025)
    assert rows[0]["eoc_density"] == "" and rows[1]["eoc_density"] != ""
    assert (out / "convergence_cartesian.gp").is_file()
    assert (out / "diagnostics_cartesian_L1.csv").is_file()

    assert tool.main(["study", "--config", str(cfg), "--out", str(tmp_path / "j"), "--serial", "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["kind"] == "study" and len(rep["rows"]) == 2
    assert [b["level"] for b in rep["boundedness"]] == [0, 1]
    assert rep["seed"] == 0
    # последовательный повтор даёт те же файлы побайтно
    a = (out / "convergence_cartesian.csv").read_bytes()
    b = (tmp_path / "j" / "convergence_cartesian.csv").read_bytes()
    assert a == b


def test_study_without_exact_solution_fails_with_level(tmp_path: Path, capsys):
    cfg = _config(tmp_path, SHORT_RUN.replace("guermond", "bump").replace("triangular", "cartesian") + "levels = 1\n")
    out = tmp_path / "s"
    assert tool.main(["study", "--config", str(cfg), "--out", str(out)]) == 1
    rec = json.loads((out / "failure.json").read_text(encoding="utf-8"))
    assert rec["level"] == 0
    assert "exact solution" in rec["message"]
    capsys.readouterr()


def test_check_subset(capsys):
    assert tool.main(["check", "--only", "mesh_geometry", "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["ok"] and len(rep["checks"]) == 1
    assert tool.main(["check", "--only", "affine", "--seed", "5"]) == 0
    assert "check: OK  seed=5" in capsys.readouterr().out


def test_config_seed_drives_sampled_diagnostics(tmp_path: Path, capsys):
    cfg = _config(tmp_path, "[run]\ncase = zero\n[mesh]\nfamily = cartesian\n[time]\ndt0 = 0.5\nt_final = 0.5\n")

    def summary(seed: int, name: str) -> dict:
        out = tmp_path / name
        assert tool.main(["run", "--config", str(cfg), "--set", f"seed={seed}", "--out", str(out)]) == 0
        capsys.readouterr()
        return json.loads((out / "summary.json").read_text(encoding="utf-8"))

    a, b, c = summary(3, "a"), summary(3, "b"), summary(4, "c")
    assert a["seed"] == 3 and c["seed"] == 4
    assert a["boundedness"] == b["boundedness"]
    assert a["boundedness"] != c["boundedness"]
    assert all(0.0 < v < float("inf") for v in a["boundedness"].values())
    assert "seed = 3" in (tmp_path / "a" / "config.used.ini").read_text(encoding="utf-8")
