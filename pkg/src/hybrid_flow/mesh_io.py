"""mesh_io.py — текстовый формат сетки, VTK-снимки полей, дампы матриц.

Формат сетки (одна запись на строку, `#` начинает комментарий):
    VERTICES n
    x y            (n строк)
    CELLS m
    k i1 ... ik    (m строк, CCW, индексы с нуля)
Грани и геометрия не хранятся, они выводятся при загрузке.
"""

from __future__ import annotations

import logging
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Mapping

import meshio
import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import MeshFormatError
from .mesh import Mesh

logger = logging.getLogger(__name__)

BUNDLED_PATCH = "hexagon_patch.mesh"


def _content_lines(text: str) -> Iterator[tuple[int, str]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _header(item: tuple[int, str] | None, keyword: str) -> int:
    if item is None:
        raise MeshFormatError(f"unexpected end of file, expected '{keyword} <count>'")
    lineno, line = item
    parts = line.split()
    if len(parts) != 2 or parts[0].upper() != keyword:
        raise MeshFormatError(f"expected '{keyword} <count>', got {line!r}", lineno)
    try:
        n = int(parts[1])
    except ValueError:
        raise MeshFormatError(f"bad {keyword} count {parts[1]!r}", lineno) from None
    if n < 1:
        raise MeshFormatError(f"{keyword} count must be positive", lineno)
    return n


def parse_mesh(text: str, *, name: str = "mesh") -> Mesh:
    lines = _content_lines(text)
    nv = _header(next(lines, None), "VERTICES")
    verts = np.empty((nv, 2))
    for k in range(nv):
        item = next(lines, None)
        if item is None:
            raise MeshFormatError(f"file ends after {k} of {nv} vertices")
        lineno, line = item
        parts = line.split()
        try:
            if len(parts) != 2:
                raise ValueError
            verts[k] = (float(parts[0]), float(parts[1]))
        except ValueError:
            raise MeshFormatError(f"vertex line must be 'x y', got {line!r}", lineno) from None

    nc = _header(next(lines, None), "CELLS")
    cells: list[list[int]] = []
    for k in range(nc):
        item = next(lines, None)
        if item is None:
            raise MeshFormatError(f"file ends after {k} of {nc} cells")
        lineno, line = item
        try:
            ints = [int(t) for t in line.split()]
        except ValueError:
            raise MeshFormatError(f"non-integer entry in cell line {line!r}", lineno) from None
        if len(ints) < 4 or ints[0] != len(ints) - 1:
            raise MeshFormatError(f"cell line must be 'k i1 ... ik' with k >= 3, got {line!r}", lineno)
        loop = ints[1:]
        bad = [i for i in loop if i < 0 or i >= nv]
        if bad:
            raise MeshFormatError(f"cell vertex index {bad[0]} outside 0..{nv - 1}", lineno)
        cells.append(loop)

    extra = next(lines, None)
    if extra is not None:
        raise MeshFormatError(f"trailing content {extra[1]!r}", extra[0])
    return Mesh(verts, cells, name=name)


def load_mesh(path: str | Path) -> Mesh:
    p = Path(path)
    mesh = parse_mesh(p.read_text(encoding="utf-8"), name=p.stem)
    logger.debug("loaded %s from %s", mesh, p)
    return mesh


def write_mesh(mesh: Mesh, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    out = [f"# {mesh.name}", f"VERTICES {mesh.n_vertices}"]
    out += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    out.append(f"CELLS {mesh.n_cells}")
    out += [" ".join(str(v) for v in (len(c), *c)) for c in mesh.cells]
    p.write_text("\n".join(out) + "\n", encoding="utf-8")
    return p


def bundled_mesh_path(name: str = BUNDLED_PATCH) -> Path:
    return Path(str(resources.files("hybrid_flow") / "data" / name))


def load_bundled(name: str = BUNDLED_PATCH) -> Mesh:
    return load_mesh(bundled_mesh_path(name))


# ----------------------------
# VTK (legacy ASCII через meshio)
# ----------------------------

_BLOCK_TYPES = {3: "triangle", 4: "quad"}


def _cell_blocks(mesh: Mesh) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """(meshio type, connectivity, cell ids) grouped by vertex count."""
    by_size: dict[int, list[int]] = {}
    for c, loop in enumerate(mesh.cells):
        by_size.setdefault(len(loop), []).append(c)
    blocks = []
    for k in sorted(by_size):
        ids = np.asarray(by_size[k], dtype=np.int64)
        conn = np.asarray([mesh.cells[c] for c in ids], dtype=np.int64)
        blocks.append((_BLOCK_TYPES.get(k, "polygon"), conn, ids))
    return blocks


def write_vtk(mesh: Mesh, path: str | Path, cell_data: Mapping[str, np.ndarray]) -> dict[str, Any]:
    """P0-поля пишутся как CELL_DATA; 2-векторы дополняются до 3 компонент."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    blocks = _cell_blocks(mesh)
    points = np.column_stack([mesh.vertices, np.zeros(mesh.n_vertices)])

    data: dict[str, list[np.ndarray]] = {}
    for name, arr in cell_data.items():
        a = np.asarray(arr, dtype=float)
        if a.shape[0] != mesh.n_cells:
            raise ValueError(f"cell_data[{name!r}] has {a.shape[0]} rows, mesh has {mesh.n_cells} cells")
        if a.ndim == 2 and a.shape[1] == 2:
            a = np.column_stack([a, np.zeros(mesh.n_cells)])
        data[name] = [a[ids] for _, _, ids in blocks]

    out = meshio.Mesh(points, [(kind, conn) for kind, conn, _ in blocks], cell_data=data)
    meshio.write(str(p), out, file_format="vtk", binary=False)
    logger.debug("vtk written to %s (%d cells, fields=%s)", p, mesh.n_cells, list(data))
    return {
        "kind": "vtk",
        "out": str(p),
        "rows": mesh.n_cells,
        "fields": list(data),
        "cell_order": np.concatenate([ids for _, _, ids in blocks]).tolist(),
    }


# ----------------------------
# Matrix Market
# ----------------------------

def write_matrix_market(matrix: sp.spmatrix, path: str | Path, *, comment: str = "") -> dict[str, Any]:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    m = sp.coo_matrix(matrix)
    scipy.io.mmwrite(str(p), m, comment=comment, field="real", symmetry="general")
    return {"kind": "matrix_market", "out": str(p), "rows": int(m.shape[0]), "fields": ["row", "col", "value"], "nnz": int(m.nnz)}
