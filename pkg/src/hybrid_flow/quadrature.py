"""quadrature.py — средние значения аналитических данных по ячейкам и граням.

Ячейки: веерная триангуляция из центроида + симметричное 6-точечное правило степени 4.
Грани: Гаусс–Лежандр с 3 узлами (точно до степени 5).

Callable-соглашение: f(x, y) получает массивы одинаковой формы;
скалярное поле возвращает массив (или константу), векторное даёт пару компонент.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .mesh import Mesh

ScalarFn = Callable[[np.ndarray, np.ndarray], Any]
VectorFn = Callable[[np.ndarray, np.ndarray], Any]

# барицентрические (a, a, 1-2a) и веса
_TRI_ORBITS = (
    (0.445948490915965, 0.223381589678011),
    (0.091576213509771, 0.109951743655322),
)
FACE_POINTS = 3


def _triangle_rule() -> tuple[np.ndarray, np.ndarray]:
    bary = []
    weights = []
    for a, w in _TRI_ORBITS:
        b = 1.0 - 2.0 * a
        for lam in ((a, a, b), (a, b, a), (b, a, a)):
            bary.append(lam)
            weights.append(w)
    return np.asarray(bary), np.asarray(weights)


@dataclass(frozen=True)
class CellQuadrature:
    points: np.ndarray   # (nq, 2)
    weights: np.ndarray  # (nq,), Σ по ячейке = |T|
    cell: np.ndarray     # (nq,) индекс ячейки узла


@dataclass(frozen=True)
class FaceQuadrature:
    points: np.ndarray   # (nf, FACE_POINTS, 2)
    weights: np.ndarray  # (nf, FACE_POINTS), Σ по грани = |F|


def cell_quadrature(mesh: Mesh) -> CellQuadrature:
    def build() -> CellQuadrature:
        bary, w = _triangle_rule()
        V = mesh.vertices
        g = mesh.cell_centroid[mesh.cf_cell]
        start = np.concatenate([np.asarray(c) for c in mesh.cells])
        end = np.concatenate([np.roll(np.asarray(c), -1) for c in mesh.cells])
        a = V[start]
        b = V[end]
        # знаковая площадь: веер корректен и для невыпуклых звёздных ячеек
        area = 0.5 * ((a[:, 0] - g[:, 0]) * (b[:, 1] - g[:, 1]) - (b[:, 0] - g[:, 0]) * (a[:, 1] - g[:, 1]))
        pts = (
            bary[None, :, 0, None] * g[:, None, :]
            + bary[None, :, 1, None] * a[:, None, :]
            + bary[None, :, 2, None] * b[:, None, :]
        )
        wts = area[:, None] * w[None, :]
        cell = np.repeat(mesh.cf_cell, w.size)
        return CellQuadrature(pts.reshape(-1, 2), wts.reshape(-1), cell)

    return mesh.cached("quadrature.cell", build)


def face_quadrature(mesh: Mesh) -> FaceQuadrature:
    def build() -> FaceQuadrature:
        xi, w = np.polynomial.legendre.leggauss(FACE_POINTS)
        a = mesh.vertices[mesh.faces[:, 0]]
        b = mesh.vertices[mesh.faces[:, 1]]
        s = 0.5 * (1.0 + xi)
        pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
        wts = 0.5 * mesh.face_measure[:, None] * w[None, :]
        return FaceQuadrature(pts, wts)

    return mesh.cached("quadrature.face", build)


def evaluate_scalar(fn: ScalarFn, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.asarray(fn(x, y), dtype=float), x.shape)


def evaluate_vector(fn: VectorFn, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Две компоненты ``fn(x, y)`` складываются по последней оси."""
    comps = fn(x, y)
    if len(comps) != 2:
        raise ValueError(f"vector field must return 2 components, got {len(comps)}")
    return np.stack([np.broadcast_to(np.asarray(c, dtype=float), x.shape) for c in comps], axis=-1)


def cell_means(mesh: Mesh, fn: Callable[..., Any], *, vector: bool = False) -> np.ndarray:
    """π_T f for every cell: shape (nc,) or (nc, 2)."""
    q = cell_quadrature(mesh)
    x, y = q.points[:, 0], q.points[:, 1]
    if not vector:
        vals = evaluate_scalar(fn, x, y)
        return np.bincount(q.cell, weights=q.weights * vals, minlength=mesh.n_cells) / mesh.cell_measure
    vals = evaluate_vector(fn, x, y)
    out = np.stack(
        [np.bincount(q.cell, weights=q.weights * vals[:, k], minlength=mesh.n_cells) for k in range(2)], axis=1
    )
    return out / mesh.cell_measure[:, None]


def face_means(mesh: Mesh, fn: Callable[..., Any], *, vector: bool = False) -> np.ndarray:
    """π_F f for every face: shape (nf,) or (nf, 2)."""
    q = face_quadrature(mesh)
    x, y = q.points[..., 0], q.points[..., 1]
    if not vector:
        vals = evaluate_scalar(fn, x, y)
        return (q.weights * vals).sum(axis=1) / mesh.face_measure
    vals = evaluate_vector(fn, x, y)
    return (q.weights[..., None] * vals).sum(axis=1) / mesh.face_measure[:, None]


def face_integrals_times_normal(mesh: Mesh, fn: ScalarFn) -> np.ndarray:
    """Per cell Σ_F ∫_F f n_TF (shape (nc, 2)); for a constant f this is 0."""
    means = face_means(mesh, fn)
    w = (mesh.face_measure * means)[mesh.cf_face][:, None] * mesh.normals_TF
    return np.stack([np.bincount(mesh.cf_cell, weights=w[:, k], minlength=mesh.n_cells) for k in range(2)], axis=1)
