"""Curvature potential, evolution identities as executable checks, decay fits.

The curvature potential ``f`` solves ``laplacian_g f = R - r`` and is
normalized to zero mean in ``dmu_g`` at every sample.  Along the flow it
satisfies ``df/dt = laplacian_g f + r f + gamma(t)`` for some spatially
constant ``gamma``; shifting by ``c(t)`` with ``c' = r c - gamma`` removes
the constant.  The shifted potential is what the div V identity uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .curvature import background_source, gauss_bonnet_quadrature, r_value, total_curvature
from .domain import integrate, integrate0, volume
from .errors import SolvabilityError
from .operators import grad_norm_sq, laplacian0, laplacian_g, poisson_solve0
from .torsion import div_torsion_conformal

CSV_COLUMNS = (
    "t", "r", "volume", "gauss_bonnet", "R_min", "R_max", "sup_abs_R_minus_r",
    "sup_abs_f", "sup_grad_f_sq", "sup_grad_R_sq", "sup_abs_div_v",
    "gauge_spread", "divv_identity_err", "bound_pass",
)


@dataclass
class DiagnosticsRecord:
    t: float
    R_min: float
    R_max: float
    r: float
    volume: float
    gauss_bonnet_quadrature: float
    sup_abs_R_minus_r: float
    sup_abs_f: float
    sup_grad_f_sq: float
    sup_grad_R_sq: float
    sup_div_V: float
    potential_gauge_spread: float = 0.0
    divv_identity_error: float = 0.0
    bound_flags: dict = field(default_factory=dict)

    @property
    def bound_pass(self):
        return all(self.bound_flags.values())

    def csv_row(self):
        return (self.t, self.r, self.volume, self.gauss_bonnet_quadrature, self.R_min,
                self.R_max, self.sup_abs_R_minus_r, self.sup_abs_f, self.sup_grad_f_sq,
                self.sup_grad_R_sq, self.sup_div_V, self.potential_gauge_spread,
                self.divv_identity_error, int(self.bound_pass))


@dataclass(frozen=True)
class DecayFit:
    rate: float
    amplitude: float
    residual: float
    window: tuple


def curvature_potential(state, solvability_tol=1e-6):
    """Solve ``laplacian_g f = R - r``; ``f`` has zero mean in ``dmu_g``.

    The mean of ``R - r`` (a Gauss-Bonnet defect) is judged relative to
    the size of the terms that make up ``R``, namely
    ``integral0 (|q0| + |laplacian0 u|) + |r| Vol``, so stationary states,
    where ``R - r`` is pure round-off, are still accepted.
    """
    R = total_curvature(state)
    r = r_value(state)
    defect = integrate(R - r, state)
    pieces = np.abs(background_source(state)) + np.abs(laplacian0(state.u, state.domain))
    scale = integrate0(pieces, state.domain) + abs(r) * volume(state)
    if abs(defect) > solvability_tol * max(scale, np.finfo(float).tiny):
        raise SolvabilityError(f"curvature potential: R - r has mean {defect:.3e} "
                               f"(relative {defect / scale:.3e}); Gauss-Bonnet broken upstream?")
    f = poisson_solve0(np.exp(state.u) * (R - r), state.domain, solvability_tol=np.inf).field
    return f - integrate(f, state) / volume(state)


def potential_residual(state, f):
    """``max |laplacian_g f - (R - r)|``."""
    return float(np.max(np.abs(laplacian_g(f, state) - (total_curvature(state) - r_value(state)))))


def _gauge_defect(s0, f0, s1, f1):
    """``df/dt - laplacian_g f - r f`` centred between two samples."""
    dt = s1.t - s0.t
    heat0 = laplacian_g(f0, s0) + r_value(s0) * f0
    heat1 = laplacian_g(f1, s1) + r_value(s1) * f1
    return (f1 - f0) / dt - 0.5 * (heat0 + heat1)


def _states(traj):
    return traj.states if hasattr(traj, "states") else list(traj)


def potential_gauge_spread(traj, index, potentials=None):
    """Spatial spread ``max D - min D`` of the gauge defect ending at sample ``index``.

    The defect is spatially constant for the exact flow, so the spread
    measures time-discretization error.  Defined as 0 at the first sample.
    """
    states = _states(traj)
    if index == 0:
        return 0.0
    s0, s1 = states[index - 1], states[index]
    if potentials is None:
        f0, f1 = curvature_potential(s0), curvature_potential(s1)
    else:
        f0, f1 = potentials[index - 1], potentials[index]
    D = _gauge_defect(s0, f0, s1, f1)
    return float(np.max(D) - np.min(D))


def gauged_potential_history(states, potentials=None):
    """Shifted potentials ``F_k`` and running integrals ``int_0^t F``.

    Returns ``(F, I, spreads)``.  The shift constant obeys
    ``c' = r c - gamma`` (trapezoidal in time) where ``gamma`` is the
    ``dmu_g``-mean of the gauge defect.
    """
    states = list(states)
    fs = potentials if potentials is not None else [curvature_potential(s) for s in states]
    F = [fs[0]]
    I = [np.zeros_like(fs[0])]
    spreads = [0.0]
    c = 0.0
    for k in range(1, len(states)):
        s0, s1 = states[k - 1], states[k]
        D = _gauge_defect(s0, fs[k - 1], s1, fs[k])
        spreads.append(float(np.max(D) - np.min(D)))
        gamma = integrate(D, s1) / volume(s1)
        dt = s1.t - s0.t
        r = 0.5 * (r_value(s0) + r_value(s1))
        c = (c * (1 + 0.5 * r * dt) - dt * gamma) / (1 - 0.5 * r * dt)
        F.append(fs[k] + c)
        I.append(I[-1] + 0.5 * dt * (F[-2] + F[-1]))
    return F, I, spreads


def divv_identity_prediction(states, index, history=None):
    """``div V(0) * exp(F(t) - F(0) - r int_0^t F)`` at sample ``index``."""
    states = _states(states)
    F, I, _ = history if history is not None else gauged_potential_history(states[: index + 1])
    s0, s = states[0], states[index]
    div0 = div_torsion_conformal(s0.torsion, s0)
    return div0 * np.exp(F[index] - F[0] - r_value(s) * I[index])


def divv_identity_error(traj, index, history=None):
    """Relative max-norm error of the div V identity at sample ``index``."""
    states = _states(traj)
    actual = div_torsion_conformal(states[index].torsion, states[index])
    scale = float(np.max(np.abs(actual)))
    if scale == 0.0:
        return 0.0
    pred = divv_identity_prediction(states, index, history)
    return float(np.max(np.abs(actual - pred))) / scale


def max_principle_check(record, initial):
    """Case-appropriate lower bound on ``R`` with slack ``1e-6 (1 + |R_min(0)|)``."""
    r, t = record.r, record.t
    rmin0 = initial.R_min
    eps = 1e-6 * (1 + abs(rmin0))
    if abs(r) < 1e-14:
        ok = t == 0 or record.R_min > -1.0 / t - eps
        return {"zero": bool(ok)}
    if r < 0:
        return {"negative": bool(record.R_min - r >= (rmin0 - r) * math.exp(r * t) - eps)}
    return {"positive": bool(record.R_min >= rmin0 * math.exp(-r * t) - eps)}


def sample_record(state, f=None):
    """Pointwise diagnostics of one state (history-dependent entries left at 0)."""
    R = total_curvature(state)
    r = r_value(state)
    if f is None:
        f = curvature_potential(state)
    return DiagnosticsRecord(
        t=float(state.t),
        R_min=float(np.min(R)),
        R_max=float(np.max(R)),
        r=float(r),
        volume=volume(state),
        gauss_bonnet_quadrature=gauss_bonnet_quadrature(state),
        sup_abs_R_minus_r=float(np.max(np.abs(R - r))),
        sup_abs_f=float(np.max(np.abs(f))),
        sup_grad_f_sq=float(np.max(grad_norm_sq(f, state))),
        sup_grad_R_sq=float(np.max(grad_norm_sq(R, state))),
        sup_div_V=float(np.max(np.abs(div_torsion_conformal(state.torsion, state)))),
    )


def trajectory_records(states):
    """Diagnostics for every sample; a pure function of the states."""
    states = list(states)
    fs = [curvature_potential(s) for s in states]
    history = gauged_potential_history(states, fs)
    records = []
    for k, (s, f) in enumerate(zip(states, fs)):
        rec = sample_record(s, f)
        rec.potential_gauge_spread = history[2][k]
        rec.divv_identity_error = divv_identity_error(states, k, history)
        records.append(rec)
    for rec in records:
        rec.bound_flags = max_principle_check(rec, records[0])
    return records


def default_window(times, values):
    """From the first sample where ``values`` has dropped 10x, to the end."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    below = np.nonzero(values <= values[0] / 10)[0]
    start = times[below[0]] if len(below) else times[0]
    return (float(start), float(times[-1]))


def post_transient_window(times, values, rel_tol=0.1, tail=0.25):
    """Window over which the local decay rate has settled.

    The late-time rate is the log-slope over the last ``tail`` fraction of
    the samples; the window starts at the first sample after which every
    local log-slope stays within ``rel_tol`` of it.
    """
    times = np.asarray(times, dtype=float)
    logv = np.log(np.asarray(values, dtype=float))
    slopes = np.diff(logv) / np.diff(times)
    k = max(2, int(len(times) * tail))
    late = (logv[-1] - logv[-k]) / (times[-1] - times[-k])
    bad = np.nonzero(np.abs(slopes - late) > rel_tol * abs(late))[0]
    start = bad[-1] + 1 if len(bad) else 0
    return (float(times[start]), float(times[-1]))


def decay_fit(times, values, window=None):
    """Least-squares fit ``log(value) = log(amplitude) + rate * t`` over ``window``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is None:
        window = default_window(times, values)
    t0, t1 = window
    if not t0 < t1:
        raise ValueError("decay window must have t_start < t_end")
    sel = (times >= t0) & (times <= t1)
    if np.count_nonzero(sel) < 8:
        raise ValueError(f"need at least 8 samples in window, got {np.count_nonzero(sel)}")
    t, v = times[sel], values[sel]
    if np.any(v <= 1e-14):
        raise ValueError("decay_fit needs values > 1e-14")
    y = np.log(v)
    A = np.column_stack([t, np.ones_like(t)])
    (rate, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ [rate, intercept] - y) ** 2)))
    return DecayFit(float(rate), float(np.exp(intercept)), resid, (float(t0), float(t1)))


def curvature_evolution_error(state, dt, method="explicit-rk4"):
    """``max |(R(t+dt) - R(t))/dt - (laplacian_g R + R (R - r))|`` (forward difference)."""
    from .flow import step

    R = total_curvature(state)
    pred = laplacian_g(R, state) + R * (R - r_value(state))
    nxt = step(state, dt, method)
    return float(np.max(np.abs((total_curvature(nxt) - R) / dt - pred)))


def laplacian_variation_error(state, w, dt, method="explicit-rk4"):
    """Forward-difference check of ``d/dt laplacian_g w = (R - r) laplacian_g w`` for fixed ``w``."""
    from .flow import step

    lap = laplacian_g(w, state)
    pred = (total_curvature(state) - r_value(state)) * lap
    nxt = step(state, dt, method)
    return float(np.max(np.abs((laplacian_g(w, nxt) - lap) / dt - pred)))


def divergence_variation_error(state, omega, dt, method="explicit-rk4"):
    """Same check for ``div_g omega = exp(-u) div_0 omega`` of a fixed one-form."""
    from .flow import step
    from .operators import divergence0

    d0 = divergence0(omega)
    div = np.exp(-state.u) * d0
    pred = (total_curvature(state) - r_value(state)) * div
    nxt = step(state, dt, method)
    return float(np.max(np.abs((np.exp(-nxt.u) * d0 - div) / dt - pred)))
