"""Property checks run by ``torflow check``.

Each check takes a :class:`CheckContext` and returns ``(passed, detail)``
or raises :class:`Skip` when it does not apply to the configured domain.
"""
from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import diagnostics as diag
from .curvature import levi_civita_curvature, r_value, rhs, total_curvature
from .domain import ConformalState, Grid, integrate, integrate0, volume
from .flow import FlowConfig, run, stable_dt
from .io import read_field, write_field
from .operators import grad_norm_sq, hessian_norm_sq, lambda1, laplacian0, laplacian_g, poisson_solve0
from .presets import Lcg, exact_form, random_field
from .stationary import aligned_difference, flat_oracle, hyperbolic_oracle, stability_classify
from .torsion import (div_torsion_conformal, torsion_endomorphism, torsion_tensor,
                      torsion_tensor_closed_form)


class Skip(Exception):
    pass


@dataclass
class CheckContext:
    state: ConformalState
    t_max: float = 0.05
    oracle_tol: float = 1e-10
    marginal_tol: float = 1e-3
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def domain(self):
        return self.state.domain

    @property
    def is_grid(self):
        return isinstance(self.domain, Grid)

    def smooth_field(self, seed, amplitude=1.0):
        """Random smooth test field (band-limited on grids, coordinate waves on meshes)."""
        if self.is_grid:
            return random_field(self.domain, amplitude, seed, max_mode=4)
        rng = Lcg(seed)
        p = self.domain.vertices
        out = np.zeros(self.domain.n_nodes)
        for _ in range(3):
            a = np.array([rng.uniform(-2, 2) for _ in range(3)])
            out += rng.uniform(-1, 1) * np.sin(p @ a + rng.uniform(0, 2 * np.pi))
        return amplitude * out / np.max(np.abs(out))

    @cached_property
    def trajectory(self):
        dt = min(1e-3, self.t_max / 10)
        cfg = FlowConfig(dt_initial=dt, t_max=self.t_max, stop_tol=1e-14,
                         sample_interval=self.t_max / 10)
        return run(self.state, cfg)

    @cached_property
    def potentials(self):
        return [diag.curvature_potential(s) for s in self.trajectory.states]


def _grid_only(ctx):
    if not ctx.is_grid:
        raise Skip("grid-only check")


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


# core fields

def check_integrate_linear(ctx):
    f, g = ctx.smooth_field(ctx.seed + 10), ctx.smooth_field(ctx.seed + 11)
    a, b = 1.7, -0.3
    lhs = integrate(a * f + b * g, ctx.state)
    rhs_ = a * integrate(f, ctx.state) + b * integrate(g, ctx.state)
    scale = integrate(np.abs(f) + np.abs(g), ctx.state)
    err = abs(lhs - rhs_) / scale
    return err <= 1e-12, f"relative error {err:.2e}"


def check_volume_scaling(ctx):
    c = 0.37
    v1 = volume(ctx.state.with_u(ctx.state.u + c))
    err = _rel(v1, math.exp(c) * volume(ctx.state))
    return err <= 1e-12, f"relative error {err:.2e}"


def check_euler_characteristic(ctx):
    d = ctx.domain
    chi = 0 if ctx.is_grid else d.n_nodes - d.n_edges + len(d.faces)
    return chi == ctx.state.chi, f"V - E + F = {chi}, state chi = {ctx.state.chi}"


# operators

def check_laplacian_constants(ctx):
    d = ctx.domain
    c = float(np.max(np.abs(laplacian0(np.ones(d.shape), d))))
    f = ctx.smooth_field(ctx.seed + 12)
    lf = laplacian0(f, d)
    mean = abs(integrate0(lf, d)) / integrate0(np.abs(lf), d)
    return c <= 1e-12 and mean <= 1e-12, f"max|lap 1| = {c:.2e}, relative mean {mean:.2e}"


def check_laplacian_self_adjoint(ctx):
    d = ctx.domain
    f, g = ctx.smooth_field(ctx.seed + 13), ctx.smooth_field(ctx.seed + 14)
    a = integrate0(f * laplacian0(g, d), d)
    b = integrate0(g * laplacian0(f, d), d)
    err = abs(a - b) / max(abs(a), abs(b))
    return err <= 1e-10, f"relative asymmetry {err:.2e}"


def check_poisson_roundtrip(ctx):
    d = ctx.domain
    f = ctx.smooth_field(ctx.seed + 15)
    f = f - integrate0(f, d) / integrate0(np.ones(d.shape), d)
    back = poisson_solve0(laplacian0(f, d), d).field
    err = float(np.max(np.abs(back - f)))
    return err <= 1e-9, f"max error {err:.2e}"


# torsion

def _torsion_samples(ctx, n=10_000):
    rng = np.random.default_rng(ctx.seed)
    X, Y, Z, V = (rng.normal(size=(n, 2)) for _ in range(4))
    u = rng.uniform(-1, 1, size=n)
    return X, Y, Z, V, u


def check_torsion_skew_adjoint(ctx):
    _grid_only(ctx)
    from .torsion import metric

    X, Y, Z, V, u = _torsion_samples(ctx)
    lhs = metric(torsion_endomorphism(X, Y, V, u), Z, u)
    rhs_ = -metric(Y, torsion_endomorphism(X, Z, V, u), u)
    err = float(np.max(np.abs(lhs - rhs_) / (1 + np.abs(lhs))))
    return err <= 1e-12, f"max error {err:.2e}"


def check_torsion_antisymmetric(ctx):
    _grid_only(ctx)
    X, Y, _, V, u = _torsion_samples(ctx)
    err = float(np.max(np.abs(torsion_tensor(X, Y, V, u) + torsion_tensor(Y, X, V, u))))
    return err <= 1e-15, f"max |T(X,Y) + T(Y,X)| = {err:.2e}"


def check_torsion_closed_forms(ctx):
    _grid_only(ctx)
    X, Y, _, V, u = _torsion_samples(ctx)
    a, b = torsion_tensor(X, Y, V, u), torsion_tensor_closed_form(X, Y, V, u)
    err = float(np.max(np.abs(a - b) / (1 + np.abs(b))))
    return err <= 1e-12, f"max error {err:.2e}"


def check_torsion_gauss_bonnet(ctx):
    dv = 2 * div_torsion_conformal(ctx.state.torsion, ctx.state)
    scale = integrate(np.abs(dv), ctx.state)
    if scale == 0:
        return True, "no torsion"
    err = abs(integrate(dv, ctx.state)) / scale
    return err <= 1e-9, f"relative integral {err:.2e}"


def check_torsion_scaling(ctx):
    c = 0.41
    a = div_torsion_conformal(ctx.state.torsion, ctx.state.with_u(ctx.state.u + c))
    b = math.exp(-c) * div_torsion_conformal(ctx.state.torsion, ctx.state)
    err = float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))
    return err <= 1e-14, f"relative error {err:.2e}"


# flow

def check_volume_preservation(ctx):
    vols = np.array([r.volume for r in ctx.trajectory.records])
    drift = float(np.max(np.abs(vols - vols[0])) / vols[0])
    return drift <= 1e-6, f"relative drift {drift:.2e}"


def check_gauss_bonnet(ctx):
    target = 4 * math.pi * ctx.state.chi
    errs = [abs(r.gauss_bonnet_quadrature - target) for r in ctx.trajectory.records]
    scale = max(1.0, float(integrate(np.abs(total_curvature(ctx.state)), ctx.state)))
    tol = 1e-8 * scale
    return max(errs) <= tol, f"max error {max(errs):.2e} (tolerance {tol:.1e})"


def _halving_ratio(ctx, fn):
    dt = min(1e-4, 0.05 * stable_dt(ctx.state))
    e1, e2 = fn(dt), fn(dt / 2)
    if e1 < 1e-10:
        return True, f"stationary state, error {e1:.2e}"
    return e1 / e2 >= 1.9, f"errors {e1:.3e}, {e2:.3e}, ratio {e1 / e2:.3f}"


def check_curvature_evolution(ctx):
    _grid_only(ctx)
    return _halving_ratio(ctx, lambda dt: diag.curvature_evolution_error(ctx.state, dt))


def check_variation_laplacian(ctx):
    w = ctx.smooth_field(ctx.seed + 16)
    return _halving_ratio(ctx, lambda dt: diag.laplacian_variation_error(ctx.state, w, dt))


def check_variation_divergence(ctx):
    _grid_only(ctx)
    omega, _ = exact_form(ctx.domain, [(0.3, 1, 1, 0.2), (0.1, 2, -1, 1.1)])
    return _halving_ratio(ctx, lambda dt: diag.divergence_variation_error(ctx.state, omega, dt))


def check_max_principle(ctx):
    recs = ctx.trajectory.records
    bad = [r.t for r in recs if not r.bound_pass]
    return not bad, f"{len(recs) - len(bad)}/{len(recs)} samples pass"


# diagnostics

def check_potential_residual(ctx):
    worst = 0.0
    for s, f in zip(ctx.trajectory.states, ctx.potentials):
        dev = float(np.max(np.abs(total_curvature(s) - r_value(s))))
        if dev == 0:
            continue
        worst = max(worst, diag.potential_residual(s, f) / dev)
    return worst <= 1e-8, f"max relative residual {worst:.2e}"


def check_potential_bound(ctx):
    if not r_value(ctx.state) < 0:
        raise Skip("needs r < 0")
    f0 = float(np.max(np.abs(ctx.potentials[0])))
    ok = all(float(np.max(np.abs(f))) <= (f0 + 1e-6) * math.exp(r_value(s) * s.t)
             for s, f in zip(ctx.trajectory.states, ctx.potentials))
    return ok, "sup|f(t)| <= (sup|f(0)| + 1e-6) exp(r t)"


def check_energy_dissipation(ctx):
    if ctx.state.chi != 0:
        raise Skip("needs chi = 0")
    states, fs = ctx.trajectory.states, ctx.potentials
    if len(states) < 3:
        return True, "trajectory converged immediately"
    E = [integrate(grad_norm_sq(f, s), s) for s, f in zip(states, fs)]
    worst = 0.0
    for k in range(1, len(states) - 1):
        dE = (E[k + 1] - E[k - 1]) / (states[k + 1].t - states[k - 1].t)
        R = total_curvature(states[k])
        pred = -2 * integrate(R * R, states[k])
        worst = max(worst, abs(dE - pred) / max(abs(pred), 1e-300))
    h = states[2].t - states[0].t
    tol = 10 * h + 1e-6
    return worst <= tol, f"max relative error {worst:.2e} (tolerance {tol:.1e})"


def check_spectral_inequality(ctx):
    worst = math.inf
    states, fs = ctx.trajectory.states, ctx.potentials
    for s, f in ((states[0], fs[0]), (states[-1], fs[-1])):
        grad = integrate(grad_norm_sq(f, s), s)
        if grad == 0:
            continue
        lap = laplacian_g(f, s)
        ratio = integrate(lap * lap, s) / (lambda1(s) * (1 - 1e-6) * grad)
        worst = min(worst, ratio)
    if worst == math.inf:
        return True, "potential vanishes"
    return worst >= 1, f"min ratio {worst:.6f}"


def check_hessian_identity(ctx):
    _grid_only(ctx)
    s = ctx.state
    R = total_curvature(s)
    lhs = integrate(hessian_norm_sq(R, s), s)
    lap = laplacian_g(R, s)
    rhs_ = integrate(lap * lap, s) - 0.5 * integrate(levi_civita_curvature(s) * grad_norm_sq(R, s), s)
    if max(abs(lhs), abs(rhs_)) < 1e-14:
        return True, "curvature is constant"
    err = _rel(lhs, rhs_)
    return err <= 1e-6, f"relative error {err:.2e}"


def check_diagnostics_pure(ctx):
    a = [r.csv_row() for r in diag.trajectory_records(ctx.trajectory.states)]
    b = [r.csv_row() for r in ctx.trajectory.records]
    return a == b, "recomputed records are bit-identical" if a == b else "records differ"


# stationary

def _oracle(ctx, u_init=None):
    d, tors = ctx.domain, ctx.state.torsion
    vol = volume(ctx.state)
    if ctx.state.chi == 0:
        return flat_oracle(d, tors, vol), 1e-9
    if ctx.state.chi < 0:
        return hyperbolic_oracle(d, tors, vol, ctx.oracle_tol, u_init), ctx.oracle_tol
    raise Skip("no oracle for positive Euler characteristic")


def check_oracle_fixed_point(ctx):
    sol, tol = _oracle(ctx)
    res = float(np.max(np.abs(rhs(ctx.state.with_u(sol.u_star)))))
    if ctx.is_grid or ctx.state.chi < 0:
        return res <= 2 * tol, f"max|rhs(u*)| = {res:.2e}"
    # flat mesh: the Poisson solve is exact up to round-off scaled by the curvature
    scale = float(np.max(np.abs(ctx.domain.background_curvature))) + 1
    return res <= 2 * tol * scale, f"max|rhs(u*)| = {res:.2e}"


def check_oracle_uniqueness(ctx):
    if ctx.state.chi >= 0:
        raise Skip("needs chi < 0")
    a, _ = _oracle(ctx)
    b, _ = _oracle(ctx, ctx.smooth_field(ctx.seed + 17))
    diff = aligned_difference(b.u_star, a.u_star, ctx.domain)
    return diff <= 1e-8, f"aligned difference {diff:.2e}"


def _sphere_report(ctx, shift=0.0):
    if ctx.state.chi != 2:
        raise Skip("needs chi = 2")
    s = ctx.state.with_u(ctx.state.u + shift)
    try:
        return stability_classify(s, ctx.marginal_tol)
    except ValueError as exc:
        raise Skip(str(exc)) from exc


def check_stability_scaling(ctx):
    a, b = _sphere_report(ctx), _sphere_report(ctx, 0.5)
    return a.label == b.label, f"labels {a.label}, {b.label}"


def check_hersch(ctx):
    rep = _sphere_report(ctx)
    return rep.hersch_ok, f"lambda1 = {rep.lambda1:.6f}, 8 pi / Vol = {rep.hersch_bound:.6f}"


# io

def check_snapshot_roundtrip(ctx):
    with tempfile.TemporaryDirectory() as tmp:
        p = os.path.join(tmp, "u.fld")
        write_field(p, ctx.state.u, ctx.domain, 0.125)
        back, _, t = read_field(p)
    same = back.tobytes() == np.ascontiguousarray(ctx.state.u).tobytes() and t == 0.125
    return same, "bit-exact" if same else "round-trip changed values"


CHECKS = {
    name[len("check_"):]: fn for name, fn in sorted(globals().items())
    if name.startswith("check_") and callable(fn)
}


def run_checks(ctx, names=None):
    """Run checks; returns ``{name: {"status": ..., "detail": ...}}`` sorted by name."""
    report = {}
    for name in sorted(names or CHECKS):
        try:
            ok, detail = CHECKS[name](ctx)
            status = "pass" if ok else "fail"
        except Skip as exc:
            status, detail = "skip", str(exc)
        except Exception as exc:  # a crashing check is a failed check
            status, detail = "fail", f"{type(exc).__name__}: {exc}"
        report[name] = {"status": status, "detail": detail}
    return report
