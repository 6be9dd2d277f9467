"""mesh.py — полигональная сетка: топология граней, геометрия, генераторы семейств.

Что здесь есть:
- Mesh: вершины + CCW-циклы ячеек; грани, нормали, меры, центроиды, диаметры выводятся при построении
- генераторы: build_cartesian / build_triangular / build_hexagonal / build_family
- regularity_report: отношения h_T|F|/|T| (параметр регулярности семейства)

Соглашения:
- грань = отсортированная пара вершин; порядок граней лексикографический (np.unique)
- владелец грани (owner) = ячейка с меньшим индексом; n_F внешняя для владельца
- на граничных гранях соседа нет (-1), n_F внешняя к области
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .errors import MeshOrientationError, MeshTopologyError

logger = logging.getLogger(__name__)

Domain = tuple[tuple[float, float], tuple[float, float]]
UNIT_SQUARE: Domain = ((0.0, 1.0), (0.0, 1.0))

FAMILIES = ("triangular", "cartesian", "hexagonal")
_FAMILY_BASE = {"triangular": 4, "cartesian": 5, "hexagonal": 8}


class Mesh:
    """Immutable polygonal mesh of a 2D domain.

    Cell-face incidences are stored flat, grouped by cell: the incidences of
    cell c live in ``cf_ptr[c]:cf_ptr[c+1]`` and follow the CCW vertex loop,
    so incidence k of a cell is the edge (loop[k], loop[k+1]).
    """

    def __init__(self, vertices: Any, cells: Sequence[Sequence[int]], *, name: str = "mesh") -> None:
        verts = np.array(vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise MeshTopologyError(f"vertices must be an (n, 2) array with n >= 3, got shape {verts.shape}")
        if not np.all(np.isfinite(verts)):
            raise MeshTopologyError("vertex coordinates must be finite")

        loops = tuple(tuple(int(i) for i in c) for c in cells)
        if not loops:
            raise MeshTopologyError("mesh has no cells")
        nv = verts.shape[0]
        used = np.zeros(nv, dtype=bool)
        for c, loop in enumerate(loops):
            if len(loop) < 3:
                raise MeshTopologyError(f"cell {c} has {len(loop)} vertices (need >= 3)")
            if len(set(loop)) != len(loop):
                raise MeshTopologyError(f"cell {c} repeats a vertex: {loop}")
            if min(loop) < 0 or max(loop) >= nv:
                raise MeshTopologyError(f"cell {c} references a vertex outside 0..{nv - 1}")
            used[list(loop)] = True
        if not used.all():
            raise MeshTopologyError(f"unused vertices: {np.flatnonzero(~used)[:10].tolist()}")

        self.name = str(name)
        self.vertices = verts
        self.vertices.setflags(write=False)
        self.cells = loops
        self._cache: dict[str, Any] = {}

        self._build_cells()
        self._build_faces()
        self._build_geometry()
        logger.debug(
            "mesh %s: %d cells, %d faces (%d boundary), h=%.6g",
            self.name, self.n_cells, self.n_faces, self.boundary_faces.size, self.h,
        )

    # ----------------------------
    # топология
    # ----------------------------

    def _build_cells(self) -> None:
        V = self.vertices
        counts = np.array([len(c) for c in self.cells], dtype=np.int64)
        self.cf_ptr = np.concatenate([[0], np.cumsum(counts)])
        self.cf_cell = np.repeat(np.arange(self.n_cells, dtype=np.int64), counts)

        # shoelace относительно первой вершины ячейки (устойчивость при сдвиге области)
        first = V[np.asarray([c[0] for c in self.cells])]
        start = np.concatenate([np.asarray(c) for c in self.cells])
        end = np.concatenate([np.roll(np.asarray(c), -1) for c in self.cells])
        p = V[start] - first[self.cf_cell]
        q = V[end] - first[self.cf_cell]
        cross = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
        area = 0.5 * np.bincount(self.cf_cell, weights=cross, minlength=self.n_cells)
        bad = np.flatnonzero(area <= 0.0)
        if bad.size:
            c = int(bad[0])
            raise MeshOrientationError(
                f"cell {c} has signed area {area[c]:.3e} (clockwise or degenerate loop {self.cells[c]})", cell=c
            )
        cx = np.bincount(self.cf_cell, weights=(p[:, 0] + q[:, 0]) * cross, minlength=self.n_cells)
        cy = np.bincount(self.cf_cell, weights=(p[:, 1] + q[:, 1]) * cross, minlength=self.n_cells)
        self.cell_measure = area
        self.cell_centroid = first + np.stack([cx, cy], axis=1) / (6.0 * area[:, None])
        self.cell_diameter = np.array([pdist(V[list(c)]).max() for c in self.cells])

    def _build_faces(self) -> None:
        start = np.concatenate([np.asarray(c, dtype=np.int64) for c in self.cells])
        end = np.concatenate([np.roll(np.asarray(c, dtype=np.int64), -1) for c in self.cells])
        directed = np.stack([start, end], axis=1)

        faces, inverse, multiplicity = np.unique(
            np.sort(directed, axis=1), axis=0, return_inverse=True, return_counts=True
        )
        inverse = np.asarray(inverse).reshape(-1)
        if np.any(multiplicity > 2):
            bad = int(np.flatnonzero(multiplicity > 2)[0])
            raise MeshTopologyError(f"face {tuple(faces[bad])} is shared by {multiplicity[bad]} cells")

        # первая инцидентность в порядке ячеек = владелец (минимальный индекс ячейки)
        order = np.argsort(inverse, kind="stable")
        first_pos = np.concatenate([[0], np.cumsum(multiplicity)[:-1]])
        owner_inc = order[first_pos]
        two = multiplicity == 2
        neigh_inc = np.full(faces.shape[0], -1, dtype=np.int64)
        neigh_inc[two] = order[first_pos[two] + 1]

        face_cells = np.full((faces.shape[0], 2), -1, dtype=np.int64)
        face_cells[:, 0] = self.cf_cell[owner_inc]
        face_cells[two, 1] = self.cf_cell[neigh_inc[two]]
        if np.any(face_cells[two, 0] == face_cells[two, 1]):
            raise MeshTopologyError("a cell uses the same face twice")
        same_dir = np.all(directed[owner_inc[two]] == directed[neigh_inc[two]], axis=1)
        if np.any(same_dir):
            f = int(np.flatnonzero(two)[np.flatnonzero(same_dir)[0]])
            raise MeshTopologyError(
                f"face {tuple(faces[f])} is traversed in the same direction by cells "
                f"{face_cells[f, 0]} and {face_cells[f, 1]} (overlap or inconsistent orientation)"
            )

        self.faces = faces
        self.face_cells = face_cells
        self.cf_face = inverse
        sign = np.full(inverse.shape[0], -1.0)
        sign[owner_inc] = 1.0
        self.cf_sign = sign
        self._owner_edges = directed[owner_inc]

    def _build_geometry(self) -> None:
        V = self.vertices
        a = V[self._owner_edges[:, 0]]
        b = V[self._owner_edges[:, 1]]
        t = b - a
        length = np.hypot(t[:, 0], t[:, 1])
        if np.any(length <= 0.0):
            raise MeshTopologyError("degenerate face of zero length")
        self.face_measure = length
        self.face_diameter = length
        self.face_midpoint = 0.5 * (a + b)
        # внешняя нормаль для CCW-обхода владельца: поворот касательной на -90°
        self.face_normal = np.stack([t[:, 1], -t[:, 0]], axis=1) / length[:, None]

        self.normals_TF = self.cf_sign[:, None] * self.face_normal[self.cf_face]
        self.boundary_faces = np.flatnonzero(self.face_cells[:, 1] < 0)
        self.interior_faces = np.flatnonzero(self.face_cells[:, 1] >= 0)
        self.is_boundary_face = self.face_cells[:, 1] < 0
        self.h = float(self.cell_diameter.max())

        for arr in (self.face_measure, self.face_midpoint, self.face_normal, self.cell_measure,
                    self.cell_centroid, self.cell_diameter, self.normals_TF, self.faces, self.face_cells):
            arr.setflags(write=False)

    # ----------------------------
    # доступ
    # ----------------------------

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def domain_measure(self) -> float:
        return float(self.cell_measure.sum())

    def cell_slice(self, c: int) -> slice:
        return slice(int(self.cf_ptr[c]), int(self.cf_ptr[c + 1]))

    def cell_faces(self, c: int) -> np.ndarray:
        return self.cf_face[self.cell_slice(c)]

    def cached(self, key: str, factory: Callable[[], Any]) -> Any:
        """Lazily computed mesh-bound data (quadrature, operator matrices)."""
        if key not in self._cache:
            self._cache[key] = factory()
        return self._cache[key]

    def __getstate__(self) -> dict[str, Any]:
        st = dict(self.__dict__)
        st["_cache"] = {}
        return st

    def __repr__(self) -> str:
        return f"Mesh({self.name!r}, cells={self.n_cells}, faces={self.n_faces}, h={self.h:.4g})"


# ----------------------------
# геометрические тождества (используются проверками и тестами)
# ----------------------------

def closure_defect(mesh: Mesh) -> np.ndarray:
    """Per cell: ‖Σ_F |F| n_TF‖ / Σ_F |F|."""
    w = mesh.face_measure[mesh.cf_face][:, None] * mesh.normals_TF
    s = np.stack([np.bincount(mesh.cf_cell, weights=w[:, k], minlength=mesh.n_cells) for k in range(2)], axis=1)
    perim = np.bincount(mesh.cf_cell, weights=mesh.face_measure[mesh.cf_face], minlength=mesh.n_cells)
    return np.hypot(s[:, 0], s[:, 1]) / perim


def magic_identity_defect(mesh: Mesh) -> np.ndarray:
    """Per cell: ‖Σ_F |F| n_TF ⊗ (x_F − x̄_T) − |T| I‖ / |T| (Frobenius)."""
    d = mesh.face_midpoint[mesh.cf_face] - mesh.cell_centroid[mesh.cf_cell]
    w = mesh.face_measure[mesh.cf_face]
    out = np.zeros((mesh.n_cells, 2, 2))
    for a in range(2):
        for b in range(2):
            out[:, a, b] = np.bincount(
                mesh.cf_cell, weights=w * mesh.normals_TF[:, a] * d[:, b], minlength=mesh.n_cells
            )
    out -= mesh.cell_measure[:, None, None] * np.eye(2)
    return np.linalg.norm(out, axis=(1, 2)) / mesh.cell_measure


# ----------------------------
# генераторы
# ----------------------------

def _check_count(name: str, value: int) -> int:
    v = int(value)
    if v < 1:
        raise ValueError(f"{name} must be >= 1, got {value!r}")
    return v


def build_cartesian(nx: int, ny: int, domain: Domain = UNIT_SQUARE) -> Mesh:
    nx = _check_count("nx", nx)
    ny = _check_count("ny", ny)
    (x0, x1), (y0, y1) = domain
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i: int, j: int) -> int:
        return j * (nx + 1) + i

    cells = [
        (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))
        for j in range(ny)
        for i in range(nx)
    ]
    return Mesh(verts, cells, name=f"cartesian_{nx}x{ny}")


def build_triangular(n: int, domain: Domain = UNIT_SQUARE) -> Mesh:
    """n×n squares, each split along its (i, j)→(i+1, j+1) diagonal."""
    n = _check_count("n", n)
    (x0, x1), (y0, y1) = domain
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i: int, j: int) -> int:
        return j * (n + 1) + i

    cells: list[tuple[int, int, int]] = []
    for j in range(n):
        for i in range(n):
            v00, v10, v11, v01 = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return Mesh(verts, cells, name=f"triangular_{n}")


def build_hexagonal(nx: int, ny: int | None = None) -> Mesh:
    """Brick-honeycomb mesh of the unit square.

    Rows of height 1/ny alternate between nx full bricks and a layout shifted
    by half a brick (half bricks at the side walls). Every brick edge carries
    a mid-vertex, which is pushed by 1/(8 ny) away from the brick it bisects,
    so interior cells are convex hexagons; cells along the walls are
    pentagons or quadrilaterals (no mid-vertex on the wall).
    """
    nx = _check_count("nx", nx)
    ny = _check_count("ny", nx if ny is None else ny)
    m = 2 * nx
    dx = 1.0 / m
    dy = 1.0 / ny
    delta = dy / 8.0

    def row_spans(j: int) -> list[tuple[int, int]]:
        if j % 2 == 0:
            return [(2 * k, 2 * k + 2) for k in range(nx)]
        return [(0, 1)] + [(2 * k + 1, 2 * k + 3) for k in range(nx - 1)] + [(m - 1, m)]

    def is_mid(j: int, i: int) -> bool:
        # средняя вершина ребра кирпича строки j
        if j < 0 or j >= ny or i <= 0 or i >= m:
            return False
        return (i % 2 == 1) if j % 2 == 0 else (i % 2 == 0)

    def exists(j: int, i: int) -> bool:
        if 0 < j < ny:
            return True
        row = 0 if j == 0 else ny - 1
        return not is_mid(row, i)

    index: dict[tuple[int, int], int] = {}
    verts: list[tuple[float, float]] = []
    for j in range(ny + 1):
        for i in range(m + 1):
            if not exists(j, i):
                continue
            y = j * dy
            if 0 < j < ny:
                if is_mid(j - 1, i):
                    y += delta
                elif is_mid(j, i):
                    y -= delta
            index[(j, i)] = len(verts)
            verts.append((i * dx, y))

    cells: list[list[int]] = []
    for j in range(ny):
        for a, b in row_spans(j):
            bottom = [index[(j, i)] for i in range(a, b + 1) if (j, i) in index]
            top = [index[(j + 1, i)] for i in range(b, a - 1, -1) if (j + 1, i) in index]
            cells.append(bottom + top)
    return Mesh(np.asarray(verts), cells, name=f"hexagonal_{nx}x{ny}")


def build_family(name: str, level: int) -> Mesh:
    """Level ℓ of a refinement family; the size parameter doubles per level."""
    if name not in _FAMILY_BASE:
        raise ValueError(f"unknown mesh family {name!r} (expected one of {', '.join(FAMILIES)})")
    if int(level) < 0:
        raise ValueError(f"level must be >= 0, got {level!r}")
    n = _FAMILY_BASE[name] * 2 ** int(level)
    if name == "triangular":
        return build_triangular(n)
    if name == "cartesian":
        return build_cartesian(n, n)
    return build_hexagonal(n)


def family_label_h(name: str, level: int) -> float:
    """Nominal h used in reports (1/n at level ℓ)."""
    if name not in _FAMILY_BASE:
        raise ValueError(f"unknown mesh family {name!r}")
    return 1.0 / (_FAMILY_BASE[name] * 2 ** int(level))


# ----------------------------
# регулярность
# ----------------------------

@dataclass
class RegularityReport:
    ratios: np.ndarray
    min_diameter: float
    max_diameter: float
    face_count_histogram: dict[int, int] = field(default_factory=dict)

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max())

    def to_dict(self) -> dict[str, Any]:
        return {
            "cells": int(self.ratios.size),
            "max_ratio": self.max_ratio,
            "mean_ratio": float(self.ratios.mean()),
            "min_diameter": self.min_diameter,
            "max_diameter": self.max_diameter,
            "face_count_histogram": {str(k): v for k, v in sorted(self.face_count_histogram.items())},
        }


def regularity_report(mesh: Mesh) -> RegularityReport:
    r = mesh.cell_diameter[mesh.cf_cell] * mesh.face_measure[mesh.cf_face] / mesh.cell_measure[mesh.cf_cell]
    ratios = np.zeros(mesh.n_cells)
    np.maximum.at(ratios, mesh.cf_cell, r)
    hist = Counter(len(c) for c in mesh.cells)
    return RegularityReport(
        ratios=ratios,
        min_diameter=float(mesh.cell_diameter.min()),
        max_diameter=float(mesh.cell_diameter.max()),
        face_count_histogram=dict(hist),
    )
