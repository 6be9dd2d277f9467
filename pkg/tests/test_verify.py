from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hybrid_flow.errors import ConfigError
from hybrid_flow.mesh import build_cartesian, build_family, build_triangular
from hybrid_flow.mesh_io import load_bundled
from hybrid_flow.operators import divergence
from hybrid_flow.spaces import CellField, HybridVelocity
from hybrid_flow.timestepper import TimeConfig
from hybrid_flow.verify import (
    CASES,
    ErrorSeries,
    ManufacturedCase,
    PolynomialStreamfunction,
    boundedness_ratio_ch,
    boundedness_ratio_dh,
    check_case,
    consistency_rate_ch,
    consistency_rate_dh,
    density_error,
    divergence_free_sample,
    eoc,
    get_case,
    guermond_case,
    run_case,
    velocity_error,
)


@pytest.mark.parametrize("name", sorted(n for n in CASES if get_case(n).exact))
def test_exact_cases_pass_the_residual_oracle(name):
    res = check_case(get_case(name), 200, np.random.default_rng(0))
    assert set(res) == {"divergence", "mass", "momentum"}
    assert max(res.values()) < 1e-5


def test_oracle_detects_a_wrong_force():
    good = guermond_case()
    bad = ManufacturedCase("bad", good.rho, good.u, good.p, lambda x, y, t: (0.0 * x, 0.0 * y))
    assert check_case(bad, 50)["momentum"] > 1e-2


def test_guermond_density_range_holds_until_horizon():
    case = guermond_case()
    lo, hi = case.density_range
    xs, ys = np.meshgrid(np.linspace(0, 1, 41), np.linspace(0, 1, 41))
    for t in np.linspace(0.0, case.range_horizon, 13):
        r = case.rho(xs, ys, t)
        assert r.min() >= lo - 1e-12 and r.max() <= hi + 1e-12
    assert case.range_horizon == pytest.approx(math.pi)


def test_case_lookup_and_validation():
    assert get_case("guermond", 0.5).mu == 0.5
    with pytest.raises(ConfigError, match="unknown case"):
        get_case("taylor-green")
    with pytest.raises(ValueError):
        guermond_case(mu=0.0)


def test_flow_data_follows_boundary_kind():
    d = guermond_case().to_flow_data()
    assert d.boundary_velocity is not None and d.inflow_density is not None
    assert not d.homogeneous
    walls = get_case("bump").to_flow_data()
    assert walls.homogeneous and walls.inflow_density is None


def test_eoc_rates_and_validation():
    hs = [0.25, 0.125, 0.0625]
    assert_allclose(eoc([1.0, 0.5, 0.25], hs), [1.0, 1.0])
    assert_allclose(eoc([1.0, 0.25], hs[:2]), [2.0])
    rates = eoc([1.0, 0.0, 0.1], hs)
    assert all(math.isnan(r) for r in rates)
    with pytest.raises(ValueError):
        eoc([1.0], [0.5])
    with pytest.raises(ValueError):
        eoc([1.0, 0.5], [0.5])
    with pytest.raises(ValueError):
        eoc([1.0, 0.5], [0.125, 0.25])


def test_error_norms_from_series():
    m = build_cartesian(2, 2)
    s = ErrorSeries(dt=0.5, rho_lower=2.0, mu=1.0)
    zero_u = HybridVelocity.zeros(m)
    s.record(0.0, CellField.constant(m, 1.0), zero_u, zero_u)
    s.record(0.5, CellField.constant(m, 2.0), zero_u, zero_u)
    # ‖e‖² = 1 и 4; у констант upwind-скачков нет
    assert density_error(s) == pytest.approx(2.0)
    assert velocity_error(s) == 0.0
    assert density_error(s.scaled(3.0)) == pytest.approx(6.0)
    assert density_error(ErrorSeries(dt=1.0, rho_lower=1.0, mu=1.0)) == 0.0


def test_time_sums_use_left_endpoints():
    s = ErrorSeries(
        dt=1.0, rho_lower=1.0, mu=1.0, times=[0.0, 1.0, 2.0],
        rho_l2_sq=[0.0, 1.0, 4.0], rho_upwind_sq=[2.0, 3.0, 100.0],
        vel_0h_sq=[0.0, 1.0, 1.0], vel_ah_sq=[4.0, 5.0, 1000.0],
    )
    # последний узел в сумму не входит: 4 + (2 + 3) и 1 + (4 + 5)
    assert density_error(s) == pytest.approx(3.0)
    assert velocity_error(s) == pytest.approx(10.0 ** 0.5)
    assert density_error(s, dt=0.5) == pytest.approx(6.5 ** 0.5)


def test_streamfunction_samples_lie_in_the_kernel():
    rng = np.random.default_rng(0)
    for m in (build_triangular(2), load_bundled(), build_family("hexagonal", 0)):
        w = divergence_free_sample(m, rng, degree=2)
        assert np.abs(divergence(w)).max() < 1e-12
        assert w.max_abs() > 0.0
    psi = PolynomialStreamfunction.random(rng, degree=0)
    assert psi.coeffs[1:] == (0.0,) * 5
    # ψ = 0 на границе квадрата
    t = np.linspace(0, 1, 7)
    assert_allclose(psi.psi(t, 0.0 * t), 0.0)
    assert_allclose(psi.psi(0.0 * t + 1.0, t), 0.0)


def test_run_case_tracks_errors_for_exact_cases():
    m = build_triangular(4)
    res = run_case(m, guermond_case(), TimeConfig(dt=0.05, t_final=0.1))
    s = res.errors
    assert isinstance(s, ErrorSeries)
    assert len(s.times) == res.n_steps + 1
    # в t = 0 состояние совпадает с интерполянтами
    assert s.rho_upwind_sq[0] < 1e-24 and s.vel_ah_sq[0] < 1e-24
    assert s.rho_lower == pytest.approx(res.rho_lower)
    assert 0.0 < density_error(s) < 0.1
    assert 0.0 < velocity_error(s) < 1.0


def test_run_case_skips_tracking_for_inexact_cases():
    res = run_case(build_cartesian(2, 2), get_case("bump"), TimeConfig(dt=0.1, t_final=0.1))
    assert res.errors is None


def test_consistency_residuals_decrease():
    meshes = [build_family("cartesian", lvl) for lvl in range(2)]
    rd = consistency_rate_dh(meshes)
    rc = consistency_rate_ch(meshes)
    assert rd.residuals[1] < rd.residuals[0]
    assert rc.residuals[1] < rc.residuals[0]
    assert rd.to_dict()["form"] == "d_h"
    with pytest.raises(ValueError):
        consistency_rate_dh(meshes[:1])


def test_dh_consistency_vanishes_at_zero_velocity():
    meshes = [build_cartesian(2, 2), build_cartesian(4, 4)]
    rep = consistency_rate_dh(meshes, zero_velocity=True)
    assert max(rep.residuals) == 0.0


def test_boundedness_ratios_are_finite_and_positive():
    m = build_triangular(2)
    rng = np.random.default_rng(1)
    rc = boundedness_ratio_ch(m, rng, samples=5)
    rd = boundedness_ratio_dh(m, rng, samples=5)
    assert 0.0 < rc < math.inf
    assert 0.0 < rd < math.inf


@pytest.mark.slow
@pytest.mark.parametrize("family", ["triangular", "cartesian"])
def test_guermond_study_converges(family):
    # короткий горизонт, как в CI; проверяем скорости, не абсолютные ошибки
    meshes = [build_family(family, lvl) for lvl in range(3)]
    errs_rho, errs_u = [], []
    for lvl, m in enumerate(meshes):
        res = run_case(m, guermond_case(), TimeConfig(dt=1e-3 / 2 ** lvl, t_final=0.2))
        errs_rho.append(density_error(res.errors))
        errs_u.append(velocity_error(res.errors))
    hs = [m.h for m in meshes]
    assert errs_rho[0] > errs_rho[1] > errs_rho[2]
    assert errs_u[0] > errs_u[1] > errs_u[2]
    assert eoc(errs_rho, hs)[-1] >= 0.4
    assert eoc(errs_u, hs)[-1] >= 0.8
