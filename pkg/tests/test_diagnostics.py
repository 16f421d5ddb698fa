import math

import numpy as np
import pytest

from torflow.curvature import levi_civita_curvature, r_value, total_curvature
from torflow.diagnostics import (DiagnosticsRecord, curvature_evolution_error, curvature_potential,
                                 decay_fit, default_window, divv_identity_error,
                                 gauged_potential_history, max_principle_check,
                                 post_transient_window, potential_gauge_spread, potential_residual,
                                 trajectory_records)
from torflow.domain import ConformalState, FromDivergence, FromOneForm, integrate
from torflow.flow import FlowConfig, run
from torflow.operators import grad_norm_sq, hessian_norm_sq, lambda1, laplacian_g
from torflow.presets import exact_form, random_field
from torflow.torsion import div_torsion_conformal


@pytest.fixture(scope="module")
def dense_run(torsion_state32):
    return run(torsion_state32, FlowConfig(t_max=1.0, sample_interval=0.01, stop_tol=1e-12))


def _record(t, r, R_min):
    return DiagnosticsRecord(t=t, R_min=R_min, R_max=0, r=r, volume=1, gauss_bonnet_quadrature=0,
                             sup_abs_R_minus_r=0, sup_abs_f=0, sup_grad_f_sq=0, sup_grad_R_sq=0,
                             sup_div_V=0)


def test_potential_of_constant_curvature_is_zero(sphere4, grid32):
    assert np.max(np.abs(curvature_potential(ConformalState(grid32, np.zeros(grid32.shape))))) == 0
    omega, phi = exact_form(grid32, [(0.2, 1, 1, 0.3)])
    s = ConformalState(grid32, 2 * phi, FromOneForm(omega))
    assert np.max(np.abs(curvature_potential(s))) < 1e-12


def test_potential_of_cosine_torsion(grid32):
    X, _ = grid32.coords
    s = ConformalState(grid32, np.zeros(grid32.shape), FromDivergence(grid32, np.cos(X)))
    assert np.max(np.abs(curvature_potential(s) + 2 * np.cos(X))) <= 1e-10


def test_potential_residual(torsion_state32, sphere4):
    s = torsion_state32
    f = curvature_potential(s)
    dev = np.max(np.abs(total_curvature(s) - r_value(s)))
    assert potential_residual(s, f) <= 1e-8 * dev
    assert abs(integrate(f, s)) <= 1e-12 * integrate(np.abs(f), s)
    m = ConformalState(sphere4, 0.2 * sphere4.vertices[:, 2] ** 2)
    fm = curvature_potential(m)
    assert potential_residual(m, fm) <= 1e-8 * np.max(np.abs(total_curvature(m) - r_value(m)))


def test_gauge_spread_vanishes_on_stationary_trajectory(grid32):
    omega, phi = exact_form(grid32, [(0.2, 1, 1, 0.3)])
    s = ConformalState(grid32, 2 * phi, FromOneForm(omega))
    later = s.with_u(s.u, 0.1)
    assert potential_gauge_spread([s, later], 1) <= 1e-10
    assert divv_identity_error([s, later], 1) <= 1e-10


def test_gauge_spread_small_and_shrinks_with_spacing(torsion_state32):
    s = torsion_state32
    spreads = []
    for h in (2e-3, 1e-3):
        nxt = run(s, FlowConfig(t_max=h, sample_interval=h, dt_initial=1e-4, stop_tol=1e-14),
                  with_records=False).final
        f0, f1 = curvature_potential(s), curvature_potential(nxt)
        D = (f1 - f0) / h
        spreads.append(potential_gauge_spread([s, nxt], 1))
        assert spreads[-1] <= 1e-2 * np.max(np.abs(D))
    assert spreads[0] / spreads[1] >= 2


def test_divv_identity_on_dense_run(dense_run):
    errs = [r.divv_identity_error for r in dense_run.records]
    assert errs[0] == 0
    assert max(errs) <= 0.01


def test_sign_flipped_divv_identity_fails(dense_run):
    states = dense_run.states
    F, I, _ = gauged_potential_history(states)
    k = len(states) - 1
    s0, s = states[0], states[k]
    actual = div_torsion_conformal(s.torsion, s)
    flipped = div_torsion_conformal(s0.torsion, s0) * np.exp(-(F[k] - F[0]) + r_value(s) * I[k])
    err = np.max(np.abs(actual - flipped)) / np.max(np.abs(actual))
    assert err > 10 * divv_identity_error(states, k)
    assert err > 0.05


def test_divv_identity_zero_torsion(grid32):
    s = ConformalState(grid32, random_field(grid32, 0.2, 1))
    traj = run(s, FlowConfig(t_max=0.1, sample_interval=0.05))
    assert all(r.divv_identity_error == 0 for r in traj.records)


def test_max_principle_cases():
    assert max_principle_check(_record(10.0, 0.0, -0.05), _record(0, 0.0, -3.0)) == {"zero": True}
    assert max_principle_check(_record(0.5, 0.0, -3.0), _record(0, 0.0, -3.0)) == {"zero": False}
    init = _record(0, -1.0, -5.0)
    assert max_principle_check(_record(1.0, -1.0, -1.0), init) == {"negative": True}
    assert max_principle_check(_record(1.0, -1.0, -4.0), init) == {"negative": False}
    pos = _record(0, 2.0, 1.0)
    assert max_principle_check(_record(1.0, 2.0, 0.2), pos) == {"positive": True}
    assert max_principle_check(_record(1.0, 2.0, 0.1), pos) == {"positive": False}


def test_decay_fit_exact_exponential():
    t = np.linspace(0, 3, 10)
    fit = decay_fit(t, 3 * np.exp(-2 * t), (0.0, 3.0))
    assert fit.rate == pytest.approx(-2, abs=1e-12)
    assert fit.amplitude == pytest.approx(3, rel=1e-12)
    assert fit.residual <= 1e-12


def test_decay_fit_errors():
    t = np.linspace(0, 1, 7)
    with pytest.raises(ValueError):
        decay_fit(t, np.exp(-t), (0.0, 1.0))
    t = np.linspace(0, 1, 10)
    with pytest.raises(ValueError):
        decay_fit(t, np.zeros(10), (0.0, 1.0))


def test_windows():
    t = np.linspace(0, 10, 101)
    v = np.exp(-t) + 5 * np.exp(-8 * t)
    assert default_window(t, v)[0] == pytest.approx(t[np.argmax(v <= v[0] / 10)])
    start, end = post_transient_window(t, v)
    assert end == 10.0 and 0.2 < start < 2
    assert decay_fit(t, v, (start, end)).residual < 0.01


def test_records_are_pure(dense_run):
    again = trajectory_records(dense_run.states)
    assert [r.csv_row() for r in again] == [r.csv_row() for r in dense_run.records]


def test_records_on_torus_run(dense_run):
    recs = dense_run.records
    assert all(r.bound_pass for r in recs)
    assert max(abs(r.gauss_bonnet_quadrature) for r in recs) <= 1e-8
    assert all(r.r == 0.0 for r in recs)


def test_energy_dissipation(dense_run):
    states = dense_run.states
    E = [integrate(grad_norm_sq(f, s), s) for s, f in
         zip(states, (curvature_potential(s) for s in states))]
    for k in (1, len(states) // 2, len(states) - 2):
        dE = (E[k + 1] - E[k - 1]) / (states[k + 1].t - states[k - 1].t)
        R = total_curvature(states[k])
        pred = -2 * integrate(R * R, states[k])
        h = states[k + 1].t - states[k - 1].t
        assert abs(dE - pred) <= (10 * h + 1e-6) * abs(pred)


def test_spectral_inequality(dense_run):
    for s in dense_run.states[::25]:
        f = curvature_potential(s)
        lap = laplacian_g(f, s)
        lhs = integrate(lap * lap, s)
        rhs = lambda1(s) * (1 - 1e-6) * integrate(grad_norm_sq(f, s), s)
        assert lhs >= rhs


def test_bochner_identity(torsion_state32):
    s = torsion_state32
    R = total_curvature(s)
    lhs = integrate(hessian_norm_sq(R, s), s)
    lap = laplacian_g(R, s)
    rhs = integrate(lap * lap, s) - 0.5 * integrate(levi_civita_curvature(s) * grad_norm_sq(R, s), s)
    assert lhs == pytest.approx(rhs, rel=1e-6)


def test_potential_bound_negative_chi(genus2_small):
    s = ConformalState(genus2_small, np.zeros(genus2_small.shape))
    traj = run(s, FlowConfig(dt_initial=1e-2, t_max=1.0, sample_interval=0.1, integrator="imex"))
    f0 = np.max(np.abs(curvature_potential(traj.states[0])))
    for st in traj.states:
        r = r_value(st)
        assert np.max(np.abs(curvature_potential(st))) <= (f0 + 1e-6) * math.exp(r * st.t)


def test_curvature_evolution_first_order(torsion_state32):
    e1 = curvature_evolution_error(torsion_state32, 1e-4)
    e2 = curvature_evolution_error(torsion_state32, 5e-5)
    assert e1 / e2 >= 1.9
