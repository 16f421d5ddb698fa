"""Elliptic oracles for limit metrics, sphere stability and soliton residuals.

The flow's fixed points satisfy ``exp(-u) (q0 - laplacian0 u) = r`` with
``q0 = R_0 + 2 div_0 V``.  For ``chi = 0`` this is a Poisson problem; for
``chi < 0`` it is semilinear and solved by damped Newton iteration.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import diags
from scipy.sparse.linalg import splu

from .curvature import r_value, total_curvature
from .domain import ConformalState, FromOneForm, Grid, OneForm, integrate0, volume
from .errors import InvariantError, SolverFailure, TopologyError, UnsupportedBackendError
from .operators import gradient0, laplacian0, lambda1, poisson_solve0

logger = logging.getLogger("torflow.stationary")


@dataclass(frozen=True)
class OracleSolution:
    u_star: np.ndarray
    achieved_R_deviation: float
    iterations: int


@dataclass(frozen=True)
class StabilityReport:
    label: str  # "stable" | "unstable" | "marginal"
    lambda1: float
    r: float
    hersch_bound: float
    hersch_ok: bool

    @property
    def gap(self):
        """``lambda1 - r``."""
        return self.lambda1 - self.r


def _source(domain, torsion):
    return domain.background_curvature + 2 * torsion.d0


def volume_shift(u, domain, target_volume):
    """Constant ``c`` with ``int exp(u + c) dmu_0 = target_volume``."""
    if not target_volume > 0:
        raise InvariantError("target volume must be positive")
    return math.log(target_volume / integrate0(np.exp(u), domain))


def aligned_difference(u, u_ref, domain):
    """``max |u + c - u_ref|`` where ``c`` matches the volume of ``u_ref``."""
    c = volume_shift(u, domain, integrate0(np.exp(u_ref), domain))
    return float(np.max(np.abs(u + c - u_ref)))


def _deviation(domain, torsion, u):
    s = ConformalState(domain, u, torsion)
    return float(np.max(np.abs(total_curvature(s) - r_value(s))))


def flat_oracle(domain, torsion, target_volume):
    """Flat limit metric for ``chi = 0``: ``laplacian0 u = q0`` plus a volume constant."""
    if domain.chi != 0:
        raise TopologyError(f"flat oracle needs chi = 0, domain has chi = {domain.chi}")
    q0 = _source(domain, torsion)
    u = poisson_solve0(q0, domain).field
    u = u + volume_shift(u, domain, target_volume)
    return OracleSolution(u, _deviation(domain, torsion, u), 1)


def hyperbolic_oracle(domain, torsion, target_volume, tol=1e-10, u_init=None, max_iter=100):
    """Constant-curvature metric for ``chi < 0`` on a mesh.

    Damped Newton on ``F(u) = laplacian0 u - q0 + r exp(u)`` with
    ``r = 4 pi chi / target_volume``.  Multiplying by the lumped mass gives
    the symmetric positive definite system ``(L - r W exp(u)) du = W F``.
    Discrete Gauss-Bonnet then fixes the volume; a final constant shift
    removes the remaining round-off.
    """
    if domain.chi >= 0:
        raise TopologyError(f"hyperbolic oracle needs chi < 0, domain has chi = {domain.chi}")
    if isinstance(domain, Grid):
        raise UnsupportedBackendError("hyperbolic oracle needs a mesh")
    r = 4 * math.pi * domain.chi / target_volume
    q0 = _source(domain, torsion)
    W = domain.weights
    L = domain.stiffness

    def residual(u):
        return laplacian0(u, domain) - q0 + r * np.exp(u)

    u = np.zeros(domain.n_nodes) if u_init is None else np.array(u_init, dtype=np.float64)
    F = residual(u)
    norm = float(np.max(np.abs(F)))
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise SolverFailure(f"Newton did not converge in {max_iter} iterations (|F| = {norm:.3e})")
        it += 1
        J = (L - diags(r * W * np.exp(u))).tocsc()
        du = splu(J).solve(W * F)
        step = 1.0
        for _ in range(40):
            cand = u + step * du
            Fc = residual(cand)
            nc = float(np.max(np.abs(Fc)))
            if np.isfinite(nc) and nc < norm:
                break
            step *= 0.5
        else:
            raise SolverFailure(f"Newton line search stalled at |F| = {norm:.3e}")
        u, F, norm = cand, Fc, nc
        logger.info("newton iteration %d: |F| = %.3e, step = %g", it, norm, step)
    u = u + volume_shift(u, domain, target_volume)
    return OracleSolution(u, _deviation(domain, torsion, u), it)


def stability_classify(state, marginal_tol=1e-3, stationarity_tol=0.05, hersch_tol=0.02):
    """Linear stability of a near-stationary metric on the sphere.

    Unstable if ``lambda1 < r`` beyond the relative band ``marginal_tol``,
    marginal inside it and stable above it.  Also reports the Hersch
    bound ``lambda1 <= 8 pi / Vol`` (with relative slack ``hersch_tol``).
    """
    if state.chi != 2:
        raise TopologyError(f"stability classification needs chi = 2, state has chi = {state.chi}")
    r = r_value(state)
    dev = float(np.max(np.abs(total_curvature(state) - r)))
    if dev > stationarity_tol * abs(r):
        raise InvariantError(
            f"state is not near-stationary: max|R - r| = {dev:.3e} > {stationarity_tol} |r|"
        )
    lam = lambda1(state)
    if abs(lam - r) <= marginal_tol * r:
        label = "marginal"
    elif lam < r:
        label = "unstable"
    else:
        label = "stable"
    bound = 8 * math.pi / volume(state)
    return StabilityReport(label, lam, r, bound, bool(lam <= bound * (1 + hersch_tol)))


def _torsion_oneform(torsion, grid):
    if isinstance(torsion, FromOneForm):
        return torsion.vflat.wx, torsion.vflat.wy
    # gradient one-form dv with laplacian0 v = d0
    v = poisson_solve0(torsion.d0, grid).field
    return gradient0(v, grid)


def soliton_residual(state, X: OneForm, normalize=False):
    """Residual of the soliton equations for a candidate vector field ``X``.

    ``X`` carries coordinate components ``(X^x, X^y)``.  Returns the
    nodewise max of ``max(|L_X g - (r - R) g|, |L_X V_flat|)``, with tensor
    norms taken componentwise.  With ``normalize`` the result is divided by
    ``1 + max|X| + max|grad X|``.
    """
    d = state.domain
    if not isinstance(d, Grid):
        raise UnsupportedBackendError("soliton residual needs the grid backend")
    if X.domain is not d:
        raise InvariantError("vector field lives on a different domain")
    X1, X2 = X.wx, X.wy
    eu = np.exp(state.u)
    ux, uy = gradient0(state.u, d)
    X1x, X1y = gradient0(X1, d)
    X2x, X2y = gradient0(X2, d)
    # L_X (e^u delta)_ij = e^u (X.grad u delta_ij + d_i X^j + d_j X^i)
    lie_scalar = X1 * ux + X2 * uy
    coef = r_value(state) - total_curvature(state)
    t11 = eu * (lie_scalar + 2 * X1x - coef)
    t22 = eu * (lie_scalar + 2 * X2y - coef)
    t12 = eu * (X2x + X1y)
    wx, wy = _torsion_oneform(state.torsion, d)
    wxx, wxy = gradient0(wx, d)
    wyx, wyy = gradient0(wy, d)
    # (L_X w)_i = X^k d_k w_i + w_k d_i X^k
    lw1 = X1 * wxx + X2 * wxy + wx * X1x + wy * X2x
    lw2 = X1 * wyx + X2 * wyy + wx * X1y + wy * X2y
    res = max(float(np.max(np.abs(a))) for a in (t11, t22, t12, lw1, lw2))
    if normalize:
        gx = max(float(np.max(np.abs(a))) for a in (X1x, X1y, X2x, X2y))
        res /= 1.0 + float(np.max(np.hypot(X1, X2))) + gx
    return res
