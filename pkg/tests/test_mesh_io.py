from __future__ import annotations

from pathlib import Path

import meshio
import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp
from numpy.testing import assert_allclose

from hybrid_flow.errors import MeshFormatError, MeshOrientationError
from hybrid_flow.mesh import build_cartesian, build_triangular, closure_defect
from hybrid_flow.mesh_io import (
    load_bundled,
    load_mesh,
    parse_mesh,
    write_matrix_market,
    write_mesh,
    write_vtk,
)

SQUARE = """\
# единичный квадрат, две ячейки
VERTICES 4
0 0
1 0
1 1
0 1   # комментарий в строке
CELLS 2
3 0 1 2
3 0 2 3
"""


def test_parse_mesh_reads_comments_and_blank_lines():
    m = parse_mesh(SQUARE + "\n\n", name="sq")
    assert m.name == "sq"
    assert m.n_cells == 2
    assert m.n_faces == 5


def test_bundled_patch_is_a_valid_polygonal_mesh():
    m = load_bundled()
    assert m.n_cells == 10
    assert {len(c) for c in m.cells} == {4, 5, 6}
    assert m.domain_measure == pytest.approx(1.0)
    assert closure_defect(m).max() < 1e-12


def test_write_then_load_preserves_geometry(tmp_path: Path):
    src = build_triangular(3)
    p = write_mesh(src, tmp_path / "tri.mesh")
    back = load_mesh(p)
    assert back.name == "tri"
    assert back.cells == src.cells
    assert_allclose(back.vertices, src.vertices, rtol=0, atol=0)


@pytest.mark.parametrize(
    "text, needle",
    [
        ("", "unexpected end"),
        ("VERTS 3\n", "expected 'VERTICES"),
        ("VERTICES x\n", "bad VERTICES count"),
        ("VERTICES 3\n0 0\n1 0\n", "ends after 2 of 3 vertices"),
        ("VERTICES 3\n0 0\n1 0\n1 a\nCELLS 1\n3 0 1 2\n", "vertex line"),
        ("VERTICES 3\n0 0\n1 0\n1 1\nCELLS 1\n4 0 1 2\n", "k i1"),
        ("VERTICES 3\n0 0\n1 0\n1 1\nCELLS 1\n3 0 1 7\n", "outside"),
        ("VERTICES 3\n0 0\n1 0\n1 1\nCELLS 1\n3 0 1 2\nextra\n", "trailing"),
    ],
)
def test_parse_mesh_reports_format_errors(text: str, needle: str):
    with pytest.raises(MeshFormatError, match=needle):
        parse_mesh(text)


def test_format_error_carries_line_number():
    with pytest.raises(MeshFormatError) as ei:
        parse_mesh("# header\nVERTICES 3\n0 0\n1 0\n1 b\n")
    assert ei.value.line == 5
    assert str(ei.value).startswith("line 5:")


def test_clockwise_cell_in_file_is_rejected():
    with pytest.raises(MeshOrientationError):
        parse_mesh("VERTICES 3\n0 0\n1 0\n1 1\nCELLS 1\n3 0 2 1\n")


def test_write_vtk_groups_blocks_and_pads_vectors(tmp_path: Path):
    m = load_bundled()
    rho = np.arange(m.n_cells, dtype=float)
    u = np.column_stack([rho, -rho])
    rep = write_vtk(m, tmp_path / "f.vtk", {"rho": rho, "u": u})
    assert rep["kind"] == "vtk"
    assert rep["rows"] == m.n_cells
    assert rep["fields"] == ["rho", "u"]
    assert sorted(rep["cell_order"]) == list(range(m.n_cells))

    back = meshio.read(tmp_path / "f.vtk")
    got_rho = np.concatenate(back.cell_data["rho"])
    got_u = np.concatenate(back.cell_data["u"])
    order = np.asarray(rep["cell_order"])
    assert_allclose(got_rho, rho[order])
    assert got_u.shape == (m.n_cells, 3)
    assert_allclose(got_u[:, 2], 0.0)


def test_write_vtk_rejects_wrong_length(tmp_path: Path):
    m = build_cartesian(2, 2)
    with pytest.raises(ValueError, match="rows"):
        write_vtk(m, tmp_path / "bad.vtk", {"rho": np.zeros(3)})


def test_write_matrix_market_roundtrip(tmp_path: Path):
    a = sp.csr_matrix(np.array([[2.0, 0.0, -1.0], [0.0, 0.0, 0.0], [0.5, 0.0, 3.0]]))
    rep = write_matrix_market(a, tmp_path / "a.mtx", comment="test")
    assert rep["nnz"] == 4
    assert rep["rows"] == 3
    back = scipy.io.mmread(str(tmp_path / "a.mtx"))
    assert_allclose(sp.csr_matrix(back).toarray(), a.toarray())
