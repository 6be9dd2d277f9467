"""spaces.py — гибридная скорость и кусочно-постоянные поля + дискретные нормы.

Глобальная нумерация степеней свободы скорости (полный вектор):
    ячейка c, компонента k  -> 2c + k
    грань f,  компонента k  -> 2·nc + 2f + k
Свободные DOF (пространство с нулём на границе) = все ячейки + внутренние грани, в этом порядке.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .quadrature import cell_means, face_means

Number = Union[int, float]


# ----------------------------
# DOF-карта
# ----------------------------

def n_velocity_dofs(mesh: Mesh) -> int:
    return 2 * (mesh.n_cells + mesh.n_faces)


def cell_dofs(cells: np.ndarray) -> np.ndarray:
    c = np.asarray(cells, dtype=np.int64)
    return np.stack([2 * c, 2 * c + 1], axis=-1).reshape(-1)


def face_dofs(mesh: Mesh, faces: np.ndarray) -> np.ndarray:
    f = np.asarray(faces, dtype=np.int64)
    base = 2 * mesh.n_cells
    return np.stack([base + 2 * f, base + 2 * f + 1], axis=-1).reshape(-1)


def free_velocity_dofs(mesh: Mesh) -> np.ndarray:
    return mesh.cached(
        "spaces.free",
        lambda: np.concatenate([cell_dofs(np.arange(mesh.n_cells)), face_dofs(mesh, mesh.interior_faces)]),
    )


def boundary_velocity_dofs(mesh: Mesh) -> np.ndarray:
    return mesh.cached("spaces.boundary", lambda: face_dofs(mesh, mesh.boundary_faces))


# ----------------------------
# контейнеры
# ----------------------------

@dataclass
class CellField:
    """One scalar per cell (density, √density, pressure)."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.array(self.values, dtype=float).reshape(-1)
        if self.values.shape[0] != self.mesh.n_cells:
            raise ValueError(f"CellField needs {self.mesh.n_cells} values, got {self.values.shape[0]}")

    @classmethod
    def constant(cls, mesh: Mesh, value: float) -> "CellField":
        return cls(mesh, np.full(mesh.n_cells, float(value)))

    @classmethod
    def zeros(cls, mesh: Mesh) -> "CellField":
        return cls.constant(mesh, 0.0)

    def copy(self) -> "CellField":
        return CellField(self.mesh, self.values.copy())

    def sqrt(self) -> "CellField":
        return CellField(self.mesh, np.sqrt(self.values))

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def integral(self) -> float:
        return float(self.mesh.cell_measure @ self.values)

    def l2_norm_sq(self) -> float:
        return float(self.mesh.cell_measure @ (self.values * self.values))

    def l2_norm(self) -> float:
        return float(np.sqrt(self.l2_norm_sq()))

    def l1_norm(self) -> float:
        return float(self.mesh.cell_measure @ np.abs(self.values))

    def _other(self, other: Any) -> Any:
        if isinstance(other, CellField):
            if other.mesh is not self.mesh:
                raise ValueError("fields live on different meshes")
            return other.values
        return other

    def __add__(self, other: Any) -> "CellField":
        return CellField(self.mesh, self.values + self._other(other))

    def __sub__(self, other: Any) -> "CellField":
        return CellField(self.mesh, self.values - self._other(other))

    def __mul__(self, other: Any) -> "CellField":
        return CellField(self.mesh, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self) -> "CellField":
        return CellField(self.mesh, -self.values)


@dataclass
class HybridVelocity:
    """2-векторы в ячейках и гранях; при ``homogeneous_boundary`` граничные грани нулевые."""

    mesh: Mesh
    cell_values: np.ndarray
    face_values: np.ndarray
    homogeneous_boundary: bool = field(default=False)

    def __post_init__(self) -> None:
        self.cell_values = np.array(self.cell_values, dtype=float).reshape(-1, 2)
        self.face_values = np.array(self.face_values, dtype=float).reshape(-1, 2)
        if self.cell_values.shape[0] != self.mesh.n_cells:
            raise ValueError(f"expected {self.mesh.n_cells} cell values, got {self.cell_values.shape[0]}")
        if self.face_values.shape[0] != self.mesh.n_faces:
            raise ValueError(f"expected {self.mesh.n_faces} face values, got {self.face_values.shape[0]}")
        if self.homogeneous_boundary:
            self.face_values[self.mesh.boundary_faces] = 0.0

    @classmethod
    def zeros(cls, mesh: Mesh, *, homogeneous: bool = True) -> "HybridVelocity":
        return cls(mesh, np.zeros((mesh.n_cells, 2)), np.zeros((mesh.n_faces, 2)), homogeneous)

    @classmethod
    def from_vector(cls, mesh: Mesh, vec: np.ndarray, *, homogeneous: bool = False) -> "HybridVelocity":
        vec = np.asarray(vec, dtype=float)
        if vec.shape[0] != n_velocity_dofs(mesh):
            raise ValueError(f"expected {n_velocity_dofs(mesh)} entries, got {vec.shape[0]}")
        nc2 = 2 * mesh.n_cells
        return cls(mesh, vec[:nc2].reshape(-1, 2), vec[nc2:].reshape(-1, 2), homogeneous)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.cell_values.reshape(-1), self.face_values.reshape(-1)])

    def copy(self) -> "HybridVelocity":
        return HybridVelocity(self.mesh, self.cell_values.copy(), self.face_values.copy(), self.homogeneous_boundary)

    def max_abs(self) -> float:
        return float(max(np.abs(self.cell_values).max(), np.abs(self.face_values).max()))

    def normal_flux(self) -> np.ndarray:
        """q_F = |F| v_F·n_F per face."""
        m = self.mesh
        return m.face_measure * np.einsum("fk,fk->f", self.face_values, m.face_normal)

    def _combine(self, other: "HybridVelocity", sign: float) -> "HybridVelocity":
        if other.mesh is not self.mesh:
            raise ValueError("fields live on different meshes")
        return HybridVelocity(
            self.mesh,
            self.cell_values + sign * other.cell_values,
            self.face_values + sign * other.face_values,
            self.homogeneous_boundary and other.homogeneous_boundary,
        )

    def __add__(self, other: "HybridVelocity") -> "HybridVelocity":
        return self._combine(other, 1.0)

    def __sub__(self, other: "HybridVelocity") -> "HybridVelocity":
        return self._combine(other, -1.0)

    def __mul__(self, s: Number) -> "HybridVelocity":
        return HybridVelocity(self.mesh, s * self.cell_values, s * self.face_values, self.homogeneous_boundary)

    __rmul__ = __mul__


# ----------------------------
# интерполяторы
# ----------------------------

def interpolate_velocity(
    field: Callable[[np.ndarray, np.ndarray], Any], mesh: Mesh, homogeneous: bool = False
) -> HybridVelocity:
    """I_h: средние по ячейкам и граням аналитического 2-векторного поля."""
    return HybridVelocity(
        mesh,
        cell_means(mesh, field, vector=True),
        face_means(mesh, field, vector=True),
        homogeneous,
    )


def project_cell(field: Callable[[np.ndarray, np.ndarray], Any], mesh: Mesh) -> CellField:
    """π_h: cell means of an analytic scalar field."""
    return CellField(mesh, cell_means(mesh, field))


def random_velocity(
    mesh: Mesh, rng: np.random.Generator, *, homogeneous: bool = True, scale: float = 1.0
) -> HybridVelocity:
    return HybridVelocity(
        mesh,
        scale * rng.standard_normal((mesh.n_cells, 2)),
        scale * rng.standard_normal((mesh.n_faces, 2)),
        homogeneous,
    )


# ----------------------------
# нормы и произведения
# ----------------------------

def _jumps(v: HybridVelocity) -> np.ndarray:
    m = v.mesh
    return v.face_values[m.cf_face] - v.cell_values[m.cf_cell]


def norm_1h(v: HybridVelocity) -> float:
    """(Σ_T h_T⁻¹ Σ_F |F| ‖v_F − v_T‖²)^{1/2}; a norm on the homogeneous space only."""
    m = v.mesh
    d = _jumps(v)
    w = m.face_measure[m.cf_face] / m.cell_diameter[m.cf_cell]
    return float(np.sqrt(w @ np.einsum("ik,ik->i", d, d)))


def _j_weights(mesh: Mesh) -> np.ndarray:
    def build() -> np.ndarray:
        w = mesh.cell_diameter[mesh.cf_cell] * mesh.face_measure[mesh.cf_face]
        return np.where(mesh.is_boundary_face[mesh.cf_face], 0.0, w)

    return mesh.cached("spaces.j_weights", build)


def jh(w: HybridVelocity, v: HybridVelocity) -> float:
    """Σ_T h_T Σ_{F interior} |F| (w_F − w_T)·(v_F − v_T)."""
    if w.mesh is not v.mesh:
        raise ValueError("fields live on different meshes")
    return float(_j_weights(v.mesh) @ np.einsum("ik,ik->i", _jumps(w), _jumps(v)))


def inner_0h(w: HybridVelocity, v: HybridVelocity) -> float:
    m = v.mesh
    cell = m.cell_measure @ np.einsum("ck,ck->c", w.cell_values, v.cell_values)
    return float(cell) + jh(w, v)


def norm_0h(v: HybridVelocity) -> float:
    return float(np.sqrt(max(inner_0h(v, v), 0.0)))


def sobolev_lhs(v: HybridVelocity, p: float) -> float:
    """p-th root of ‖v_h‖ᵖ + Σ_T h_T‖v_T‖ᵖ_{L^p(∂T)} + Σ_T Σ_F h_T‖v_F‖ᵖ_{L^p(F)}."""
    p = float(p)
    if not np.isfinite(p) or p < 1.0:
        raise ValueError(f"exponent must be a finite p >= 1, got {p!r}")
    m = v.mesh
    cell_abs = np.hypot(v.cell_values[:, 0], v.cell_values[:, 1]) ** p
    face_abs = np.hypot(v.face_values[:, 0], v.face_values[:, 1]) ** p
    hF = m.cell_diameter[m.cf_cell] * m.face_measure[m.cf_face]
    total = m.cell_measure @ cell_abs + hF @ cell_abs[m.cf_cell] + hF @ face_abs[m.cf_face]
    return float(total ** (1.0 / p))


_SOBOLEV_MODES = ((1, 1), (1, 2), (2, 1), (2, 2))


def _sine_mode(k: int, l: int, comp: int) -> Callable[[Any, Any], tuple[Any, Any]]:
    def fn(x: Any, y: Any) -> tuple[Any, Any]:
        s = np.sin(k * np.pi * x) * np.sin(l * np.pi * y)
        z = np.zeros_like(s)
        return (s, z) if comp == 0 else (z, s)

    return fn


def max_sobolev_ratio(mesh: Mesh, p: float, rng: np.random.Generator, samples: int = 200) -> float:
    """Максимум sobolev_lhs/norm_1h по случайным полям из U_h,0.

    Половина выборки: случайные смеси интерполянтов гладких синус-мод,
    половина: белый шум в ячейках и гранях. Одинаковое зерно даёт
    одинаковые коэффициенты смесей на разных уровнях сетки.
    """
    if samples < 2:
        raise ValueError(f"samples must be >= 2, got {samples!r}")
    basis = [
        interpolate_velocity(_sine_mode(k, l, comp), mesh, homogeneous=True)
        for k, l in _SOBOLEV_MODES
        for comp in (0, 1)
    ]
    cells = np.stack([b.cell_values for b in basis])
    faces = np.stack([b.face_values for b in basis])
    n_smooth = samples // 2
    coeffs = rng.standard_normal((n_smooth, len(basis)))
    best = 0.0
    for c in coeffs:
        v = HybridVelocity(mesh, np.tensordot(c, cells, axes=1), np.tensordot(c, faces, axes=1), True)
        best = max(best, sobolev_lhs(v, p) / norm_1h(v))
    for _ in range(samples - n_smooth):
        v = random_velocity(mesh, rng)
        best = max(best, sobolev_lhs(v, p) / norm_1h(v))
    return best


def difference_operator(mesh: Mesh, incidences: np.ndarray) -> sp.csr_matrix:
    """Rows (i, k): v_{F_i, k} − v_{T_i, k} for the given incidences."""
    n = incidences.size
    rows = np.arange(2 * n)
    fcols = face_dofs(mesh, mesh.cf_face[incidences])
    ccols = cell_dofs(mesh.cf_cell[incidences])
    data = np.concatenate([np.ones(2 * n), -np.ones(2 * n)])
    return sp.csr_matrix(
        (data, (np.concatenate([rows, rows]), np.concatenate([fcols, ccols]))),
        shape=(2 * n, n_velocity_dofs(mesh)),
    )


def jh_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Разреженная матрица j_h на полном векторе скорости."""
    def build() -> sp.csr_matrix:
        inc = np.flatnonzero(~mesh.is_boundary_face[mesh.cf_face])
        K = difference_operator(mesh, inc)
        w = np.repeat(_j_weights(mesh)[inc], 2)
        return (K.T @ sp.diags(w) @ K).tocsr()

    return mesh.cached("spaces.jh_matrix", build)


def cell_mass_matrix(mesh: Mesh, weights: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """diag(|T| w_T) на ячеечных DOF скорости, ноль на гранях."""
    w = mesh.cell_measure if weights is None else mesh.cell_measure * np.asarray(weights, dtype=float)
    diag = np.zeros(n_velocity_dofs(mesh))
    diag[: 2 * mesh.n_cells] = np.repeat(w, 2)
    return sp.diags(diag).tocsr()
