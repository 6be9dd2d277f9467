"""convection.py — upwind-следы плотности, трилинейная форма c_h, форма переноса d_h.

Обозначения:
- q_F = |F| w_F·n_F (знаковый поток через грань, n_F внешняя для владельца)
- для инцидентности (T, F): q_TF = ±q_F (+ у владельца, − у соседа)
- скачок на внутренней грани: [ζ] = ζ_T − ζ_T′, T это владелец (n_TF = n_F); среднее {ζ}
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .operators import gradient
from .spaces import CellField, HybridVelocity, n_velocity_dofs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UpwindTrace:
    face_rho: np.ndarray   # ρ_F на каждой грани
    flux: np.ndarray       # q_F = |F| w_F·n_F
    from_owner: np.ndarray  # True, если ρ_F взята у владельца

    @property
    def mass_flux(self) -> np.ndarray:
        """ρ_F q_F per face."""
        return self.face_rho * self.flux


def upwind_trace(rho: CellField, w: HybridVelocity, inflow: Optional[np.ndarray] = None) -> UpwindTrace:
    """ρ_F from the cell with w_F·n_TF ≥ 0; ties go to the owner.

    On boundary inflow faces (q_F < 0) the value comes from ``inflow`` (indexed
    by face) when given, otherwise from the owner cell.
    """
    m = w.mesh
    if rho.mesh is not m:
        raise ValueError("density and velocity live on different meshes")
    q = w.normal_flux()
    owner = m.face_cells[:, 0]
    neigh = m.face_cells[:, 1]
    interior = neigh >= 0
    from_owner = q >= 0.0
    face_rho = rho.values[owner].copy()
    take_neigh = interior & ~from_owner
    face_rho[take_neigh] = rho.values[neigh[take_neigh]]
    if inflow is not None:
        inflow = np.asarray(inflow, dtype=float)
        bnd_in = ~interior & ~from_owner
        face_rho[bnd_in] = inflow[bnd_in]
    else:
        from_owner = from_owner | ~interior
    return UpwindTrace(face_rho, q, from_owner)


def mass_flux(trace: UpwindTrace, w: HybridVelocity) -> np.ndarray:
    """(ρw)_F = ρ_F w_F, shape (nf, 2)."""
    return trace.face_rho[:, None] * w.face_values


def _incidence_flux(mesh: Mesh, trace: UpwindTrace) -> np.ndarray:
    """|F| (ρw)_F·n_TF per incidence."""
    return mesh.cf_sign * trace.mass_flux[mesh.cf_face]


def c_h(
    rho: CellField,
    w: HybridVelocity,
    v: HybridVelocity,
    z: HybridVelocity,
    *,
    inflow: Optional[np.ndarray] = None,
) -> float:
    """½ Σ_T Σ_F |F| ((ρw)_F·n_TF)(v_F·z_T − v_T·z_F)."""
    m = w.mesh
    tr = upwind_trace(rho, w, inflow)
    qi = _incidence_flux(m, tr)
    T, F = m.cf_cell, m.cf_face
    term = np.einsum("ik,ik->i", v.face_values[F], z.cell_values[T]) - np.einsum(
        "ik,ik->i", v.cell_values[T], z.face_values[F]
    )
    return float(0.5 * qi @ term)


def convection_matrix(mesh: Mesh, trace: UpwindTrace) -> sp.csr_matrix:
    """Matrix C with zᵀ C v = c_h(·, ·, v, z) on full velocity vectors (C = −Cᵀ)."""
    qi = 0.5 * _incidence_flux(mesh, trace)
    T, F = mesh.cf_cell, mesh.cf_face
    nc2 = 2 * mesh.n_cells
    rows, cols, vals = [], [], []
    for k in range(2):
        rows += [2 * T + k, nc2 + 2 * F + k]
        cols += [nc2 + 2 * F + k, 2 * T + k]
        vals += [qi, -qi]
    ndof = n_velocity_dofs(mesh)
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(ndof, ndof)
    ).tocsr()


def d_h(
    w: HybridVelocity,
    eta: CellField,
    chi: CellField,
    *,
    inflow: Optional[np.ndarray] = None,
) -> float:
    """Σ_T Σ_F |F| η_F(w) (w_F·n_TF) χ_T."""
    m = w.mesh
    tr = upwind_trace(eta, w, inflow)
    return float(_incidence_flux(m, tr) @ chi.values[m.cf_cell])


def _jump_avg(mesh: Mesh, field: CellField) -> tuple[np.ndarray, np.ndarray]:
    f = mesh.interior_faces
    a = field.values[mesh.face_cells[f, 0]]
    b = field.values[mesh.face_cells[f, 1]]
    return a - b, 0.5 * (a + b)


def d_h_jump_form(w: HybridVelocity, eta: CellField, chi: CellField) -> float:
    """−Σ_F q_F [η]{χ} + Σ_F (|q_F|/2)[η][χ] over interior faces."""
    m = w.mesh
    q = w.normal_flux()[m.interior_faces]
    jeta, _ = _jump_avg(m, eta)
    jchi, achi = _jump_avg(m, chi)
    return float(-(q * jeta) @ achi + (0.5 * np.abs(q) * jeta) @ jchi)


def upwind_seminorm(w: HybridVelocity, eta: CellField) -> float:
    """(½ Σ_F |q_F| [η]²)^{1/2} over interior faces."""
    m = w.mesh
    q = w.normal_flux()[m.interior_faces]
    jeta, _ = _jump_avg(m, eta)
    return float(np.sqrt(0.5 * np.abs(q) @ (jeta * jeta)))


def ibp_sides(rho: CellField, u: HybridVelocity, v: HybridVelocity) -> tuple[float, float]:
    """Both sides of the discrete integration-by-parts identity for c_h."""
    m = u.mesh
    T, F = m.cf_cell, m.cf_face
    tr = upwind_trace(rho, u)
    chi = CellField(m, np.einsum("ck,ck->c", u.cell_values, v.cell_values))
    lhs = c_h(rho, u, u, v) + 0.5 * d_h(u, rho, chi)

    G = gradient(v)
    uT = u.cell_values
    bulk = -m.cell_measure @ (rho.values * np.einsum("ca,cab,cb->c", uT, G, uT))

    uTi = uT[T]
    uFi = u.face_values[F]
    dv = v.cell_values[T] - v.face_values[F]
    meas = m.face_measure[F]
    n = m.normals_TF
    qi = meas * np.einsum("ik,ik->i", uFi, n)
    rhoF = tr.face_rho[F]
    rhoT = rho.values[T]
    uT_dv = np.einsum("ik,ik->i", uTi, dv)

    face1 = 0.5 * (rhoF * qi) @ np.einsum("ik,ik->i", uFi - uTi, dv)
    face2 = (rhoT * meas * np.einsum("ik,ik->i", uFi - uTi, n)) @ uT_dv
    face3 = ((rhoF - rhoT) * qi) @ uT_dv
    return float(lhs), float(bulk + face1 + face2 + face3)


def discrete_ibp_check(rho: CellField, u: HybridVelocity, v: HybridVelocity) -> float:
    """|LHS − RHS| / (1 + |LHS|); zero up to round-off for u with zero boundary values."""
    lhs, rhs = ibp_sides(rho, u, v)
    return abs(lhs - rhs) / (1.0 + abs(lhs))
