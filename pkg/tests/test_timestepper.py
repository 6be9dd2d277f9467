from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hybrid_flow.errors import InitialDataError
from hybrid_flow.mesh import build_cartesian, build_triangular
from hybrid_flow.mesh_io import load_bundled
from hybrid_flow.operators import divergence
from hybrid_flow.quadrature import face_means
from hybrid_flow.timestepper import (
    DIAGNOSTICS_FIELDS,
    EnergyLedger,
    FlowData,
    HasFlowData,
    TimeConfig,
    initialize,
    kinetic_proxy,
    run,
)
from hybrid_flow.verify import bump_case, guermond_case, rotation_case, zero_case


def test_time_config_validation_and_step_count():
    assert TimeConfig(dt=0.1, t_final=1.0).n_steps == 10
    assert TimeConfig(dt=0.3, t_final=0.1).n_steps == 1
    for bad in ({"dt": 0.0, "t_final": 1.0}, {"dt": math.inf, "t_final": 1.0}, {"dt": 0.1, "t_final": -1.0}):
        with pytest.raises(ValueError):
            TimeConfig(**bad)
    with pytest.raises(ValueError):
        TimeConfig(dt=0.1, t_final=1.0, picard_iterations=-1)
    with pytest.raises(ValueError):
        TimeConfig(dt=0.1, t_final=1.0, diagnostics_every=0)


def test_initialize_rejects_bad_initial_data():
    m = build_cartesian(3, 3)
    with pytest.raises(InitialDataError, match="positive"):
        initialize(m, lambda x, y: x - 0.5, lambda x, y: (0.0, 0.0))
    with pytest.raises(InitialDataError, match="divergence"):
        initialize(m, lambda x, y: 1.0, lambda x, y: (x, 0.0), homogeneous=False)


def test_initialize_projects_data():
    m = build_triangular(2)
    st = initialize(m, lambda x, y: 1.0 + x, lambda x, y: (0.0, 0.0))
    assert st.t == 0.0 and st.step == 0
    assert_allclose(st.sigma.values ** 2, st.rho.values)
    assert_allclose(st.rho.values, 1.0 + m.cell_centroid[:, 0], atol=1e-14)
    assert st.p.integral() == 0.0


def test_zero_case_stays_at_rest():
    m = build_cartesian(3, 3)
    res = run(m, zero_case(), TimeConfig(dt=0.1, t_final=0.5))
    assert res.n_steps == 5
    assert_allclose(res.state.rho.values, 1.0)
    assert res.state.u.max_abs() < 1e-14
    assert res.state.t == pytest.approx(0.5)


def test_closed_cavity_dissipates_kinetic_energy():
    m = load_bundled()
    res = run(m, bump_case(mu=0.1), TimeConfig(dt=0.05, t_final=0.5))
    kin = np.asarray(res.ledger.kinetic)
    assert kin[0] > 0.0
    assert np.all(np.diff(kin) <= 1e-12 * kin[0])
    assert kin[-1] < kin[0]
    assert_allclose(res.state.rho.values, 1.0, rtol=1e-12)
    assert np.abs(divergence(res.state.u)).max() < 1e-8
    assert math.isfinite(res.ledger.energy_ratio) and res.ledger.energy_ratio > 0.0
    # накопленная диссипация монотонна
    assert np.all(np.diff(res.ledger.dissipation) >= 0.0)


def test_guermond_run_keeps_density_in_range():
    m = build_triangular(4)
    case = guermond_case()
    res = run(m, case, TimeConfig(dt=0.05, t_final=0.25, diagnostics_every=2))
    lo, hi = case.density_range
    for row in res.diagnostics:
        assert lo - 1e-9 <= row["rho_min"] <= row["rho_max"] <= hi + 1e-9
    assert [r["step"] for r in res.diagnostics] == [0, 2, 4, 5]
    assert set(res.diagnostics[0]) == set(DIAGNOSTICS_FIELDS)
    assert res.rho_lower == pytest.approx(res.diagnostics[0]["rho_min"])
    # граничные значения скорости взяты из точного поля
    expect = face_means(m, case.u_at(0.25), vector=True)
    assert_allclose(res.state.u.face_values[m.boundary_faces], expect[m.boundary_faces], atol=1e-14)


def test_observers_and_system_hook_are_called_each_step():
    m = build_cartesian(2, 2)
    seen_t = []
    kinds = []
    run(
        m, bump_case(), TimeConfig(dt=0.1, t_final=0.3),
        observers=[lambda st: seen_t.append(st.t)],
        system_hook=lambda kind, system, step: kinds.append((kind, step, system.kind)),
    )
    assert_allclose(seen_t, [0.0, 0.1, 0.2, 0.3])
    assert kinds == [
        ("transport", 1, "transport"), ("saddle", 1, "saddle"),
        ("transport", 2, "transport"), ("saddle", 2, "saddle"),
        ("transport", 3, "transport"), ("saddle", 3, "saddle"),
    ]


def test_fixed_point_sweeps_run_and_stay_close():
    m = build_cartesian(3, 3)
    base = run(m, rotation_case(), TimeConfig(dt=0.1, t_final=0.2))
    swept = run(m, rotation_case(), TimeConfig(dt=0.1, t_final=0.2, picard_iterations=3))
    diff = (base.state.u - swept.state.u).max_abs()
    assert diff < 0.1 * base.state.u.max_abs()


def test_run_accepts_flow_data_and_rejects_other_objects():
    m = build_cartesian(2, 2)
    data = FlowData(rho0=lambda x, y: 1.0, u0=lambda x, y: (0.0, 0.0), name="still")
    res = run(m, data, TimeConfig(dt=0.5, t_final=1.0))
    assert res.n_steps == 2
    with pytest.raises(TypeError):
        run(m, object(), TimeConfig(dt=0.5, t_final=1.0))


def test_run_accepts_any_object_with_flow_data():
    class Still:
        def to_flow_data(self):
            return FlowData(rho0=lambda x, y: 1.0, u0=lambda x, y: (0.0, 0.0), name="still")

    assert isinstance(Still(), HasFlowData)
    assert isinstance(zero_case(), HasFlowData)
    assert not isinstance(object(), HasFlowData)
    res = run(build_cartesian(2, 2), Still(), TimeConfig(dt=0.5, t_final=0.5))
    assert res.n_steps == 1


def test_kinetic_proxy_and_ledger_accumulate():
    m = build_cartesian(2, 2)
    st = initialize(m, lambda x, y: 2.0, lambda x, y: (0.0, 0.0))
    st.u.cell_values[:] = 1.0
    # ρ |u|² по области + ρ̲ j_h (скачки на внутренних гранях)
    assert kinetic_proxy(st, 0.0) == pytest.approx(4.0)
    led = EnergyLedger()
    led.record(0, 0.0, 1.0, density_l2=1.0)
    led.record(1, 0.1, 0.9, dissipation=0.05, upwind=0.01, density_l2=1.0)
    led.record(2, 0.2, 0.8, dissipation=0.05, density_l2=1.0)
    assert led.dissipation == pytest.approx([0.0, 0.05, 0.1])
    assert led.upwind == pytest.approx([0.0, 0.01, 0.01])
    assert led.is_finite()
