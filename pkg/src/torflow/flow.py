"""Time integration of the conformal-factor equation ``du/dt = r - R``."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import diags
from scipy.sparse.linalg import LinearOperator, cg, splu

from .curvature import background_source
from .diagnostics import trajectory_records
from .domain import ConformalState, Grid
from .errors import InvariantError, SolverFailure, StepFailure
from .operators import laplacian0

logger = logging.getLogger("torflow.flow")

INTEGRATORS = ("explicit-rk4", "imex")
RK4_STABILITY = 2.78  # extent of the RK4 region on the negative real axis


@dataclass(frozen=True)
class FlowConfig:
    dt_initial: float = 1e-3
    dt_safety: float = 0.9
    t_max: float = 10.0
    stop_tol: float = 1e-8
    sample_interval: float = 0.1
    integrator: str = "explicit-rk4"

    def __post_init__(self):
        if self.integrator == "rk4":
            object.__setattr__(self, "integrator", "explicit-rk4")
        if self.integrator not in INTEGRATORS:
            raise InvariantError(f"unknown integrator {self.integrator!r}")
        for name in ("dt_initial", "t_max", "stop_tol", "sample_interval"):
            if not getattr(self, name) > 0:
                raise InvariantError(f"{name} must be positive")
        if not 0 < self.dt_safety <= 1:
            raise InvariantError("dt_safety must lie in (0, 1]")


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    records: list = field(default_factory=list)
    termination: str = "t_max_reached"

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    @property
    def final(self):
        return self.states[-1]


class _Rhs:
    """``u -> r(u) - R(u)`` with the state-independent pieces cached."""

    def __init__(self, state):
        self.domain = state.domain
        self.q0 = background_source(state)
        self.weights = state.domain.weights
        self.gb = 4 * np.pi * state.chi
        self.mesh_solver = _MeshImexSolver()

    def r(self, u):
        return self.gb / np.sum((np.exp(u) * self.weights).ravel())

    def curvature(self, u):
        return np.exp(-u) * (self.q0 - laplacian0(u, self.domain))

    def __call__(self, u):
        return self.r(u) - self.curvature(u)


def stable_dt(state, safety=1.0):
    """Largest explicit RK4 step allowed by the diffusion stiffness."""
    return _stable_dt(state.domain, state.u, safety)


def _stable_dt(d, u, safety):
    if isinstance(d, Grid):
        lam = float(np.max(np.exp(-u))) * d.max_laplace_eigenvalue
    else:
        lam = float(np.max(np.exp(-u) * d.gershgorin_bound))
    return safety * RK4_STABILITY / lam


def _rk4(f, u, dt, k1=None):
    k1 = f(u) if k1 is None else k1
    k2 = f(u + 0.5 * dt * k1)
    k3 = f(u + 0.5 * dt * k2)
    k4 = f(u + dt * k3)
    return u + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _imex(f, u, dt):
    """Backward Euler on ``exp(-u_n) laplacian0``, forward Euler on the rest.

    The result is shifted by a constant so that the volume is exactly that
    of ``u`` (the continuous flow preserves it; first-order splitting does not).
    """
    x = _imex_solve(f, u, dt)
    w = f.weights
    return x + np.log(np.sum((np.exp(u) * w).ravel()) / np.sum((np.exp(x) * w).ravel()))


def _imex_solve(f, u, dt):
    d = f.domain
    eu = np.exp(u)
    r = f.r(u)
    if isinstance(d, Grid):
        # (exp(u_n)/dt - lap0) x = exp(u_n) u_n / dt + exp(u_n) r - q0
        b = eu * u / dt + eu * r - f.q0
        c = float(np.mean(eu)) / dt
        sym = c - d.laplace_symbol
        shape = d.shape

        def apply(x):
            x = x.reshape(shape)
            return (eu * x / dt - laplacian0(x, d)).ravel()

        def precond(x):
            return d.ifft(d.fft(x.reshape(shape)) / sym).ravel()

        n = d.n_nodes
        A = LinearOperator((n, n), matvec=apply, dtype=np.float64)
        M = LinearOperator((n, n), matvec=precond, dtype=np.float64)
        x, info = cg(A, b.ravel(), x0=u.ravel(), rtol=1e-13, atol=0.0, M=M, maxiter=10 * n)
        if info != 0:
            raise SolverFailure("implicit diffusion solve did not converge")
        return x.reshape(shape)
    w = d.weights
    A = (diags(w * eu / dt) + d.stiffness).tocsr()
    b = w * (eu * u / dt + eu * r - f.q0)
    return f.mesh_solver.solve(A, b, u, dt)


class _MeshImexSolver:
    """PCG for ``(W exp(u)/dt + L) x = b`` preconditioned by a cached LU factor.

    The factor is rebuilt when ``dt`` changes or when CG needs more than
    ``max_iter`` iterations, i.e. once ``u`` has drifted from the reference.
    """

    def __init__(self, max_iter=12):
        self.max_iter = max_iter
        self.lu = None
        self.dt = None

    def _refactor(self, A, dt):
        self.lu = splu(A.tocsc())
        self.dt = dt

    def solve(self, A, b, x0, dt):
        if self.lu is None or dt != self.dt:
            self._refactor(A, dt)
        n = A.shape[0]
        M = LinearOperator((n, n), matvec=self.lu.solve, dtype=np.float64)
        x, info = cg(A, b, x0=x0, rtol=1e-13, atol=0.0, M=M, maxiter=self.max_iter)
        if info != 0:
            self._refactor(A, dt)
            x = self.lu.solve(b)
        return x


def step(state, dt, method="explicit-rk4"):
    """Advance ``state`` by one step of size ``dt``."""
    if not dt > 0:
        raise InvariantError("dt must be positive")
    f = _Rhs(state)
    with np.errstate(over="ignore", invalid="ignore"):
        u = _advance(f, state.u, dt, method)
    t = state.t + dt
    if not np.all(np.isfinite(u)):
        raise StepFailure("non-finite conformal factor", t)
    return state.with_u(u, t)


def _advance(f, u, dt, method, k1=None):
    if method in ("explicit-rk4", "rk4"):
        return _rk4(f, u, dt, k1)
    if method == "imex":
        return _imex(f, u, dt)
    raise InvariantError(f"unknown integrator {method!r}")


def run(initial, config, with_records=True):
    """Integrate from ``initial`` until ``max|R - r| < stop_tol`` or flow time ``t_max``.

    States are sampled every ``sample_interval`` of flow time (steps are
    shortened to land on sample times) and at termination.  A step that
    produces non-finite values is retried with half the step size up to
    20 times; after that the trajectory ends with ``step_failure``.
    """
    f = _Rhs(initial)
    traj = Trajectory(states=[initial])
    u = np.array(initial.u)
    t = float(initial.t)
    k = f(u)
    dev = float(np.max(np.abs(k)))
    t0 = t
    n_sampled = 1
    next_sample = t0 + config.sample_interval
    t_end = config.t_max
    if dev < config.stop_tol:
        traj.termination = "converged"
    elif t >= t_end:
        traj.termination = "t_max_reached"
    else:
        while True:
            explicit = config.integrator == "explicit-rk4"
            dt = config.dt_initial
            if explicit:
                dt = min(dt, _stable_dt(initial.domain, u, config.dt_safety))
            target = min(next_sample, t_end)
            land = t + dt >= target - 1e-12 * max(1.0, target)
            if land:
                dt = target - t
            for attempt in range(21):
                try:
                    with np.errstate(over="ignore", invalid="ignore"):
                        new = _advance(f, u, dt, config.integrator, k if explicit else None)
                except SolverFailure:
                    new = None
                if new is not None and np.all(np.isfinite(new)):
                    break
                logger.warning("step failure at t=%.6g, dt=%.3g (attempt %d)", t, dt, attempt + 1)
                dt *= 0.5
                land = False
            else:
                traj.termination = "step_failure"
                logger.error("aborting after repeated step failures at t=%.6g", t)
                break
            u = new
            t = target if land else t + dt
            k = f(u)
            dev = float(np.max(np.abs(k)))
            converged = dev < config.stop_tol
            done = converged or (land and target >= t_end)
            if land or done:
                traj.states.append(ConformalState(initial.domain, u, initial.torsion, t, initial.chi))
                if land and target == next_sample:
                    n_sampled += 1
                    next_sample = t0 + n_sampled * config.sample_interval
            if converged:
                traj.termination = "converged"
                break
            if done:
                traj.termination = "t_max_reached"
                break
    if with_records:
        traj.records = trajectory_records(traj.states)
    return traj
