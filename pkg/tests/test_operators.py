from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hybrid_flow.mesh import build_cartesian, build_family, build_triangular
from hybrid_flow.mesh_io import load_bundled
from hybrid_flow.operators import (
    ah,
    ah_full,
    assemble_ah,
    build_local_operators,
    div_T,
    divergence,
    divergence_l2,
    grad_T,
    gradient,
    norm_ah,
    norm_equivalence_constants,
    reconstruct_rT,
    scatter_local,
    spacetime_norm,
    stab_sT,
    stabilisation_matrix,
)
from hybrid_flow.quadrature import cell_means
from hybrid_flow.spaces import interpolate_velocity, norm_1h, random_velocity

MESHES = {
    "tri": lambda: build_triangular(2),
    "quad": lambda: build_cartesian(3, 2),
    "patch": load_bundled,
}

A = np.array([[0.3, -1.2], [2.0, 0.7]])
B = np.array([0.5, -0.25])


def _affine(x, y):
    return (A[0, 0] * x + A[0, 1] * y + B[0], A[1, 0] * x + A[1, 1] * y + B[1])


@pytest.fixture(params=sorted(MESHES))
def mesh(request):
    return MESHES[request.param]()


def test_gradient_exact_on_affine_fields(mesh):
    v = interpolate_velocity(_affine, mesh)
    G = gradient(v)
    assert np.abs(G - A[None]).max() < 1e-12
    assert_allclose(grad_T(mesh, 0, v), A, atol=1e-12)


def test_stabilisation_vanishes_on_affine_fields(mesh):
    v = interpolate_velocity(_affine, mesh)
    vec = v.to_vector()
    assert abs(vec @ (stabilisation_matrix(mesh) @ vec)) < 1e-22
    assert abs(stab_sT(mesh, mesh.n_cells - 1, v, v)) < 1e-22


def test_reconstruction_reproduces_affine_field(mesh):
    v = interpolate_velocity(_affine, mesh)
    c = mesh.n_cells // 2
    r = reconstruct_rT(mesh, c, v)
    pts = mesh.vertices[list(mesh.cells[c])]
    expect = pts @ A.T + B
    assert_allclose(r(pts), expect, atol=1e-12)


def test_divergence_commutes_with_interpolation(mesh):
    def cubic(x, y):
        return (x**3 - x * y**2 + y, 0.5 * y**3 + x**2 * y - x)

    def div(x, y):
        return 3 * x**2 - y**2 + 1.5 * y**2 + x**2

    v = interpolate_velocity(cubic, mesh)
    assert np.abs(divergence(v) - cell_means(mesh, div)).max() < 1e-12
    assert div_T(mesh, 1, v) == pytest.approx(divergence(v)[1], abs=1e-13)


def test_local_blocks_match_global_matrix(mesh):
    blocks = build_local_operators(mesh)
    assert len(blocks) == mesh.n_cells
    diff = (scatter_local(mesh, blocks, "a_matrix") - ah_full(mesh)).toarray()
    assert np.abs(diff).max() < 1e-12


def test_ah_symmetric_with_constant_kernel(mesh):
    K = ah_full(mesh).toarray()
    assert_allclose(K, K.T, atol=1e-13)
    const = interpolate_velocity(lambda x, y: (1.0, 2.0), mesh)
    assert norm_ah(const) < 1e-12
    free = assemble_ah(mesh).toarray()
    assert np.linalg.eigvalsh(free).min() > 0.0


def test_ah_bilinear_form_matches_matrix():
    m = build_triangular(2)
    rng = np.random.default_rng(0)
    w = random_velocity(m, rng)
    v = random_velocity(m, rng)
    assert ah(w, v) == pytest.approx(ah(v, w), rel=1e-12)
    assert ah(v, v) == pytest.approx(norm_ah(v) ** 2, rel=1e-12)


def test_norm_equivalence_bounds_random_fields():
    m = build_family("hexagonal", 0)
    lo, hi = norm_equivalence_constants(m)
    assert 0.0 < lo <= hi
    rng = np.random.default_rng(1)
    for _ in range(10):
        v = random_velocity(m, rng)
        r = norm_ah(v) ** 2 / norm_1h(v) ** 2
        assert lo * (1 - 1e-10) <= r <= hi * (1 + 1e-10)


def test_norm_equivalence_constants_stable_under_refinement():
    c0 = norm_equivalence_constants(build_family("cartesian", 0))
    c1 = norm_equivalence_constants(build_family("cartesian", 1))
    assert_allclose(c0, c1, rtol=1e-8)


def test_divergence_l2_and_spacetime_norm():
    m = build_cartesian(2, 2)
    v = interpolate_velocity(lambda x, y: (x, 0.0), m)
    # ∇·v = 1 на всей области
    assert divergence_l2(v) == pytest.approx(1.0, rel=1e-12)
    w = random_velocity(m, np.random.default_rng(2))
    assert spacetime_norm([w, w], 0.5) == pytest.approx(norm_ah(w), rel=1e-12)
    with pytest.raises(ValueError):
        spacetime_norm([w], 0.0)


def test_local_vector_length_checked():
    m = build_cartesian(2, 2)
    with pytest.raises(ValueError):
        grad_T(m, 0, np.zeros(3))
