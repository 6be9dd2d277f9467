"""operators.py — реконструкции G_T, D_T, r_T и вязкая форма a_h со стабилизацией s_T.

Две независимые реализации одного и того же:
- локальные плотные блоки на ячейку (LocalOperators): по определениям, цикл по граням;
- глобальные разреженные матрицы (векторизованно по инцидентностям): для решателя.
Тесты сверяют одно с другим.

Локальная нумерация: [v_T (2), v_F1 (2), ..., v_Fn (2)], грани в порядке CCW-обхода.
Строка матрицы градиента 2a+b соответствует компоненте G_ab.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh

from .mesh import Mesh
from .spaces import (
    HybridVelocity,
    cell_dofs,
    difference_operator,
    face_dofs,
    free_velocity_dofs,
    n_velocity_dofs,
)

LocalDofs = Union[HybridVelocity, np.ndarray]


@dataclass(frozen=True)
class LocalOperators:
    cell: int
    dofs: np.ndarray        # глобальные индексы локальных DOF
    grad_map: np.ndarray    # (4, nloc)
    div_map: np.ndarray     # (nloc,)
    stab_matrix: np.ndarray
    a_matrix: np.ndarray
    j_matrix: np.ndarray


def _local_block(mesh: Mesh, c: int) -> LocalOperators:
    sl = mesh.cell_slice(c)
    faces = mesh.cf_face[sl]
    normals = mesh.normals_TF[sl]
    meas = mesh.face_measure[faces]
    n = faces.size
    nloc = 2 * (n + 1)
    area = mesh.cell_measure[c]
    hT = mesh.cell_diameter[c]

    G = np.zeros((4, nloc))
    D = np.zeros(nloc)
    for i in range(n):
        for a in range(2):
            col = 2 * (i + 1) + a
            D[col] += meas[i] * normals[i, a] / area
            for b in range(2):
                w = meas[i] * normals[i, b] / area
                G[2 * a + b, col] += w
                G[2 * a + b, a] -= w

    S = np.zeros((nloc, nloc))
    J = np.zeros((nloc, nloc))
    for i in range(n):
        d = mesh.face_midpoint[faces[i]] - mesh.cell_centroid[c]
        R = np.zeros((2, nloc))
        K = np.zeros((2, nloc))
        for a in range(2):
            R[a, a] += 1.0
            R[a, 2 * (i + 1) + a] -= 1.0
            R[a] += d[0] * G[2 * a] + d[1] * G[2 * a + 1]
            K[a, 2 * (i + 1) + a] = 1.0
            K[a, a] = -1.0
        S += (meas[i] / hT) * (R.T @ R)
        if not mesh.is_boundary_face[faces[i]]:
            J += hT * meas[i] * (K.T @ K)

    dofs = np.concatenate([cell_dofs(np.array([c])), face_dofs(mesh, faces)])
    return LocalOperators(c, dofs, G, D, S, area * G.T @ G + S, J)


def build_local_operators(mesh: Mesh) -> list[LocalOperators]:
    return mesh.cached("operators.local", lambda: [_local_block(mesh, c) for c in range(mesh.n_cells)])


def scatter_local(mesh: Mesh, blocks: Sequence[LocalOperators], attr: str = "a_matrix") -> sp.csr_matrix:
    """Σ_T локальных матриц, разнесённых по карте DOF (полный вектор скорости)."""
    rows, cols, vals = [], [], []
    for blk in blocks:
        M = getattr(blk, attr)
        r, cc = np.meshgrid(blk.dofs, blk.dofs, indexing="ij")
        rows.append(r.ravel())
        cols.append(cc.ravel())
        vals.append(M.ravel())
    ndof = n_velocity_dofs(mesh)
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(ndof, ndof)
    ).tocsr()


def local_vector(v: LocalDofs, mesh: Mesh, cell: int) -> np.ndarray:
    if isinstance(v, HybridVelocity):
        faces = mesh.cf_face[mesh.cell_slice(cell)]
        return np.concatenate([v.cell_values[cell], v.face_values[faces].reshape(-1)])
    vec = np.asarray(v, dtype=float).reshape(-1)
    n = mesh.cf_ptr[cell + 1] - mesh.cf_ptr[cell]
    if vec.size != 2 * (n + 1):
        raise ValueError(f"cell {cell} has {2 * (n + 1)} local DOFs, got {vec.size}")
    return vec


# ----------------------------
# поэлементные операции
# ----------------------------

def grad_T(mesh: Mesh, cell: int, v: LocalDofs) -> np.ndarray:
    blk = build_local_operators(mesh)[cell]
    return (blk.grad_map @ local_vector(v, mesh, cell)).reshape(2, 2)


def div_T(mesh: Mesh, cell: int, v: LocalDofs) -> float:
    blk = build_local_operators(mesh)[cell]
    return float(blk.div_map @ local_vector(v, mesh, cell))


def reconstruct_rT(mesh: Mesh, cell: int, v: LocalDofs) -> Callable[[np.ndarray], np.ndarray]:
    """Affine r_T v(x) = v_T + G_T v (x − x̄_T); x has shape (..., 2)."""
    loc = local_vector(v, mesh, cell)
    G = grad_T(mesh, cell, loc)
    vT = loc[:2].copy()
    xc = mesh.cell_centroid[cell].copy()

    def r(x: np.ndarray) -> np.ndarray:
        return vT + (np.asarray(x, dtype=float) - xc) @ G.T

    return r


def stab_sT(mesh: Mesh, cell: int, w: LocalDofs, v: LocalDofs) -> float:
    blk = build_local_operators(mesh)[cell]
    return float(local_vector(w, mesh, cell) @ blk.stab_matrix @ local_vector(v, mesh, cell))


# ----------------------------
# глобальные разреженные операторы
# ----------------------------

def gradient_matrix(mesh: Mesh) -> sp.csr_matrix:
    """(4·nc × ndof): rows 4T + 2a + b give (G_T v)_ab."""
    def build() -> sp.csr_matrix:
        T = mesh.cf_cell
        F = mesh.cf_face
        scale = mesh.face_measure[F] / mesh.cell_measure[T]
        nc2 = 2 * mesh.n_cells
        rows, cols, vals = [], [], []
        for a in range(2):
            for b in range(2):
                w = scale * mesh.normals_TF[:, b]
                r = 4 * T + 2 * a + b
                rows += [r, r]
                cols += [nc2 + 2 * F + a, 2 * T + a]
                vals += [w, -w]
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(4 * mesh.n_cells, n_velocity_dofs(mesh)),
        ).tocsr()

    return mesh.cached("operators.gradient", build)


def divergence_matrix(mesh: Mesh) -> sp.csr_matrix:
    """(nc × ndof): D_T v = |T|⁻¹ Σ_F |F| v_F·n_TF (face values only)."""
    def build() -> sp.csr_matrix:
        T = mesh.cf_cell
        F = mesh.cf_face
        scale = mesh.face_measure[F] / mesh.cell_measure[T]
        nc2 = 2 * mesh.n_cells
        rows = np.concatenate([T, T])
        cols = np.concatenate([nc2 + 2 * F, nc2 + 2 * F + 1])
        vals = np.concatenate([scale * mesh.normals_TF[:, 0], scale * mesh.normals_TF[:, 1]])
        return sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_cells, n_velocity_dofs(mesh))).tocsr()

    return mesh.cached("operators.divergence", build)


def stabilisation_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Σ_T s_T on the full velocity vector."""
    def build() -> sp.csr_matrix:
        inc = np.arange(mesh.cf_cell.size)
        T = mesh.cf_cell
        d = mesh.face_midpoint[mesh.cf_face] - mesh.cell_centroid[T]
        # (v_T − v_F) + G_T v · d
        P = -difference_operator(mesh, inc)
        rows, cols, vals = [], [], []
        for a in range(2):
            for b in range(2):
                rows.append(2 * inc + a)
                cols.append(4 * T + 2 * a + b)
                vals.append(d[:, b])
        Dmat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(2 * inc.size, 4 * mesh.n_cells),
        ).tocsr()
        R = P + Dmat @ gradient_matrix(mesh)
        w = np.repeat(mesh.face_measure[mesh.cf_face] / mesh.cell_diameter[T], 2)
        return (R.T @ sp.diags(w) @ R).tocsr()

    return mesh.cached("operators.stabilisation", build)


def ah_full(mesh: Mesh) -> sp.csr_matrix:
    """a_h on the full velocity vector (boundary face DOFs included)."""
    def build() -> sp.csr_matrix:
        G = gradient_matrix(mesh)
        M = sp.diags(np.repeat(mesh.cell_measure, 4))
        return (G.T @ M @ G + stabilisation_matrix(mesh)).tocsr()

    return mesh.cached("operators.ah_full", build)


def assemble_ah(mesh: Mesh) -> sp.csr_matrix:
    """a_h restricted to the free DOFs (cells + interior faces)."""
    def build() -> sp.csr_matrix:
        free = free_velocity_dofs(mesh)
        return ah_full(mesh)[free][:, free].tocsr()

    return mesh.cached("operators.ah_free", build)


def gradient(v: HybridVelocity) -> np.ndarray:
    """G_T v for every cell, shape (nc, 2, 2)."""
    return (gradient_matrix(v.mesh) @ v.to_vector()).reshape(-1, 2, 2)


def divergence(v: HybridVelocity) -> np.ndarray:
    return divergence_matrix(v.mesh) @ v.to_vector()


def divergence_l2(v: HybridVelocity) -> float:
    """‖D_h v‖_{L²}."""
    d = divergence(v)
    return float(np.sqrt(v.mesh.cell_measure @ (d * d)))


def ah(w: HybridVelocity, v: HybridVelocity) -> float:
    return float(w.to_vector() @ (ah_full(v.mesh) @ v.to_vector()))


def norm_ah(v: HybridVelocity) -> float:
    return float(np.sqrt(max(ah(v, v), 0.0)))


def spacetime_norm(v_series: Sequence[HybridVelocity], dt: float) -> float:
    """(Σ_n dt · ‖vⁿ‖²_{a,h})^{1/2}."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    return float(np.sqrt(sum(dt * norm_ah(v) ** 2 for v in v_series)))


def norm_equivalence_constants(mesh: Mesh) -> tuple[float, float]:
    """(c, C) with c‖v‖²_{1,h} ≤ ‖v‖²_{a,h} ≤ C‖v‖²_{1,h}, from the cellwise pencils.

    Both local forms depend on v_F − v_T only, so each cell gives a definite
    generalised eigenproblem in the differences.
    """
    lo, hi = np.inf, 0.0
    for blk in build_local_operators(mesh):
        faces = mesh.cf_face[mesh.cell_slice(blk.cell)]
        a_w = blk.a_matrix[2:, 2:]
        n_w = np.diag(np.repeat(mesh.face_measure[faces] / mesh.cell_diameter[blk.cell], 2))
        ev = eigh(a_w, n_w, eigvals_only=True)
        lo, hi = min(lo, float(ev[0])), max(hi, float(ev[-1]))
    return lo, hi
