from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hybrid_flow.convection import (
    c_h,
    convection_matrix,
    d_h,
    d_h_jump_form,
    discrete_ibp_check,
    mass_flux,
    upwind_seminorm,
    upwind_trace,
)
from hybrid_flow.mesh import build_cartesian, build_triangular
from hybrid_flow.mesh_io import load_bundled
from hybrid_flow.operators import divergence
from hybrid_flow.spaces import CellField, HybridVelocity, interpolate_velocity, random_velocity
from hybrid_flow.verify import divergence_free_sample

MESHES = {
    "tri": lambda: build_triangular(2),
    "quad": lambda: build_cartesian(3, 3),
    "patch": load_bundled,
}


@pytest.fixture(params=sorted(MESHES))
def mesh(request):
    return MESHES[request.param]()


def test_ch_is_skew_in_last_two_arguments(mesh):
    rng = np.random.default_rng(0)
    for _ in range(20):
        rho = CellField(mesh, rng.uniform(0.5, 3.0, mesh.n_cells))
        w = random_velocity(mesh, rng)
        v = random_velocity(mesh, rng)
        z = random_velocity(mesh, rng)
        assert abs(c_h(rho, w, v, v)) < 1e-12
        assert c_h(rho, w, v, z) == pytest.approx(-c_h(rho, w, z, v), abs=1e-12)


def test_convection_matrix_matches_form(mesh):
    rng = np.random.default_rng(1)
    rho = CellField(mesh, rng.uniform(1.0, 2.0, mesh.n_cells))
    w = random_velocity(mesh, rng)
    v = random_velocity(mesh, rng, homogeneous=False)
    z = random_velocity(mesh, rng, homogeneous=False)
    C = convection_matrix(mesh, upwind_trace(rho, w))
    assert abs((C + C.T).toarray()).max() < 1e-14
    assert z.to_vector() @ (C @ v.to_vector()) == pytest.approx(c_h(rho, w, v, z), rel=1e-12, abs=1e-14)


def test_divergence_free_samples_are_discretely_solenoidal(mesh):
    rng = np.random.default_rng(2)
    w = divergence_free_sample(mesh, rng)
    assert np.abs(divergence(w)).max() < 1e-12
    assert np.all(w.face_values[mesh.boundary_faces] == 0.0)


def test_dh_of_constant_density_vanishes_on_solenoidal_fields(mesh):
    rng = np.random.default_rng(3)
    w = divergence_free_sample(mesh, rng)
    chi = CellField(mesh, rng.standard_normal(mesh.n_cells))
    scale = float(np.abs(w.normal_flux()).sum())
    assert abs(d_h(w, CellField.constant(mesh, 1.7), chi)) < 1e-12 * scale


def test_dh_coercive_and_matches_jump_form(mesh):
    rng = np.random.default_rng(4)
    for _ in range(10):
        w = divergence_free_sample(mesh, rng)
        eta = CellField(mesh, rng.standard_normal(mesh.n_cells))
        chi = CellField(mesh, rng.standard_normal(mesh.n_cells))
        scale = float(np.abs(w.normal_flux()).sum()) * 10.0
        assert d_h(w, eta, eta) == pytest.approx(upwind_seminorm(w, eta) ** 2, abs=1e-12 * scale)
        assert d_h(w, eta, chi) == pytest.approx(d_h_jump_form(w, eta, chi), abs=1e-12 * scale)


def test_upwind_trace_picks_upstream_cell():
    m = build_cartesian(2, 1)
    # течение вправо: через общую вертикальную грань берётся левая ячейка
    w = interpolate_velocity(lambda x, y: (1.0, 0.0), m)
    rho = CellField(m, [1.0, 5.0])
    tr = upwind_trace(rho, w)
    f = int(m.interior_faces[0])
    assert tr.face_rho[f] == 1.0
    assert tr.flux[f] == pytest.approx(1.0)

    back = upwind_trace(rho, -1.0 * w)
    assert back.face_rho[f] == 5.0
    assert_allclose(mass_flux(tr, w)[f], [1.0, 0.0])


def test_upwind_trace_ties_go_to_owner():
    m = build_cartesian(2, 1)
    w = HybridVelocity.zeros(m)
    tr = upwind_trace(CellField(m, [3.0, 4.0]), w)
    f = int(m.interior_faces[0])
    assert tr.from_owner[f]
    assert tr.face_rho[f] == 3.0


def test_upwind_trace_uses_inflow_data_on_boundary():
    m = build_cartesian(2, 1)
    w = interpolate_velocity(lambda x, y: (1.0, 0.0), m)
    rho = CellField(m, [1.0, 5.0])
    inflow = np.full(m.n_faces, 9.0)
    tr = upwind_trace(rho, w, inflow)
    left = [f for f in m.boundary_faces if m.face_midpoint[f, 0] == 0.0][0]
    right = [f for f in m.boundary_faces if m.face_midpoint[f, 0] == 1.0][0]
    assert tr.face_rho[left] == 9.0
    assert tr.face_rho[right] == 5.0
    # без данных втока берётся своя ячейка
    assert upwind_trace(rho, w).face_rho[left] == 1.0


def test_discrete_integration_by_parts(mesh):
    rng = np.random.default_rng(5)
    for _ in range(10):
        rho = CellField(mesh, rng.uniform(0.5, 3.0, mesh.n_cells))
        assert discrete_ibp_check(rho, random_velocity(mesh, rng), random_velocity(mesh, rng)) < 1e-12


def test_mismatched_meshes_rejected():
    a = build_cartesian(2, 2)
    b = build_cartesian(2, 2)
    with pytest.raises(ValueError):
        upwind_trace(CellField.constant(a, 1.0), HybridVelocity.zeros(b))
