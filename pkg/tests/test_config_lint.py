from __future__ import annotations

from pathlib import Path

from hybrid_flow.config_lint import format_issues_text, has_errors, lint_config
from hybrid_flow.mesh import build_cartesian
from hybrid_flow.mesh_io import write_mesh
from hybrid_flow.run_config import OUTPUT_ENV


def _paths(issues):
    return {(i.level, i.path) for i in issues}


def test_clean_config_has_no_issues(tmp_path: Path):
    raw = {"case": "guermond", "family": "cartesian", "levels": "3", "output_dir": str(tmp_path / "out")}
    issues = lint_config(raw)
    assert issues == []
    assert format_issues_text(issues).startswith("OK")


def test_type_range_and_name_errors(tmp_path: Path):
    raw = {
        "case": "vortex",
        "family": "voronoi",
        "levels": "0",
        "dt0": "-1",
        "mu": "abc",
        "seed": "-1",
        "output_dir": str(tmp_path),
    }
    issues = lint_config(raw)
    assert has_errors(issues)
    got = _paths(issues)
    for key in ("case", "family", "levels", "dt0", "mu", "seed"):
        assert ("error", key) in got


def test_unknown_key_is_a_warning(tmp_path: Path):
    issues = lint_config({"colour": "blue", "output_dir": str(tmp_path)})
    assert _paths(issues) == {("warn", "colour")}
    assert not has_errors(issues)


def test_soft_warnings(tmp_path: Path):
    raw = {"dt0": "2.0", "t_final": "1.0", "emit_vtk": "true", "output_dir": str(tmp_path)}
    got = _paths(lint_config(raw))
    assert ("warn", "dt0") in got
    assert ("warn", "vtk_every") in got


def test_mesh_file_family_resolved_against_base_dir(tmp_path: Path):
    write_mesh(build_cartesian(2, 2), tmp_path / "meshes" / "sq.mesh")
    raw = {"family": "meshes/sq.mesh", "levels": "1", "output_dir": str(tmp_path)}
    assert lint_config(raw, base_dir=tmp_path) == []
    assert ("error", "family") in _paths(lint_config(raw, base_dir=tmp_path / "elsewhere"))
    # файл сетки даёт один уровень
    multi = dict(raw, levels="3")
    assert _paths(lint_config(multi, base_dir=tmp_path)) == {("warn", "levels")}


def test_output_dir_checks(tmp_path: Path):
    blocker = tmp_path / "file.txt"
    blocker.write_text("x", encoding="utf-8")
    issues = lint_config({"output_dir": str(blocker)})
    assert ("error", "output_dir") in _paths(issues)
    assert lint_config({"output_dir": str(blocker)}, check_output=False) == []
    # относительный каталог берётся от $HYBRID_FLOW_OUT
    issues = lint_config({"output_dir": "file.txt"}, env={OUTPUT_ENV: str(tmp_path)})
    assert ("error", "output_dir") in _paths(issues)


def test_format_issues_text_groups_by_level(tmp_path: Path):
    issues = lint_config({"case": "nope", "colour": 1, "output_dir": str(tmp_path)})
    text = format_issues_text(issues)
    assert "ERRORS: 1" in text
    assert "WARNINGS: 1" in text
    assert "  - case:" in text
