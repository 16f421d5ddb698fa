"""Background and conformal differential operators.

Sign convention: the Laplacian is negative semi-definite, so
``laplacian0(sin(k x)) == -k**2 sin(k x)``.  In two dimensions the
conformal Laplacian is exactly ``exp(-u) * laplacian0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.sparse.linalg import LinearOperator, ArpackNoConvergence, eigsh, splu

from .domain import ConformalState, Grid, Mesh, OneForm, integrate0
from .errors import DomainMismatchError, SolvabilityError, SolverFailure, UnsupportedBackendError


def _domain_of(obj):
    return obj.domain if isinstance(obj, ConformalState) else obj


def _same_domain(values, state):
    values = np.asarray(values, dtype=np.float64)
    if values.shape != state.domain.shape:
        raise DomainMismatchError(
            f"field shape {values.shape} does not match domain {state.domain.shape}"
        )
    return values


def laplacian0(values, domain):
    """Background Laplace-Beltrami operator."""
    domain = _domain_of(domain)
    values = np.asarray(values, dtype=np.float64)
    if isinstance(domain, Grid):
        return domain.ifft(domain.laplace_symbol * domain.fft(values))
    return -domain.apply_stiffness(values) / domain.weights


def laplacian_g(values, state):
    """Laplacian of ``g = exp(u) g0``."""
    values = _same_domain(values, state)
    return np.exp(-state.u) * laplacian0(values, state.domain)


def gradient0(values, domain):
    """Spectral background gradient ``(df/dx, df/dy)`` on a grid."""
    domain = _domain_of(domain)
    if not isinstance(domain, Grid):
        raise UnsupportedBackendError("coordinate gradients need the grid backend")
    fh = domain.fft(np.asarray(values, dtype=np.float64))
    ikx, iky = domain.derivative_symbols
    return domain.ifft(ikx * fh), domain.ifft(iky * fh)


def divergence0(omega: OneForm):
    """Background divergence of a one-form (grid only)."""
    if not isinstance(omega, OneForm) or not isinstance(omega.domain, Grid):
        raise UnsupportedBackendError("divergence of one-forms needs the grid backend")
    d = omega.domain
    ikx, iky = d.derivative_symbols
    return d.ifft(ikx * d.fft(omega.wx) + iky * d.fft(omega.wy))


def face_gradients(values, mesh: Mesh):
    """Gradient of the piecewise-linear interpolant on each face, shape (m, 3)."""
    return np.einsum("fi,fix->fx", np.asarray(values)[mesh.faces], mesh.gradient_basis)


def grad_norm_sq0(values, domain):
    """``|grad f|^2`` in the background metric."""
    domain = _domain_of(domain)
    if isinstance(domain, Grid):
        fx, fy = gradient0(values, domain)
        return fx * fx + fy * fy
    g = face_gradients(values, domain)
    per_face = np.einsum("fx,fx->f", g, g)
    acc = np.bincount(domain.faces.ravel(),
                      weights=(domain.corner_areas * per_face[:, None]).ravel(),
                      minlength=domain.n_nodes)
    return acc / domain.weights


def grad_norm_sq(values, state):
    """``|grad f|_g^2 = exp(-u) |grad_0 f|^2``.

    On a mesh the per-face values are averaged to vertices with the same
    corner areas that make up the lumped mass, so that the integral of
    the result equals the Dirichlet energy ``f^T L f`` exactly.
    """
    values = _same_domain(values, state)
    return np.exp(-state.u) * grad_norm_sq0(values, state.domain)


def hessian_norm_sq(values, state):
    """``|Hess_g f|_g^2`` for the Levi-Civita connection of ``exp(u) dx^2`` (grid only)."""
    d = state.domain
    if not isinstance(d, Grid):
        raise UnsupportedBackendError("second derivatives are grid-only")
    values = _same_domain(values, state)
    fh = d.fft(values)
    kx, ky = d.wavenumbers
    ikx, iky = d.derivative_symbols
    fxx = d.ifft(-(kx**2) * fh)
    fyy = d.ifft(-(ky**2) * fh)
    fxy = d.ifft(ikx * iky * fh)
    fx, fy = d.ifft(ikx * fh), d.ifft(iky * fh)
    ux, uy = gradient0(state.u, d)
    h11 = fxx - 0.5 * ux * fx + 0.5 * uy * fy
    h22 = fyy + 0.5 * ux * fx - 0.5 * uy * fy
    h12 = fxy - 0.5 * uy * fx - 0.5 * ux * fy
    return np.exp(-2 * state.u) * (h11**2 + 2 * h12**2 + h22**2)


@dataclass(frozen=True)
class PoissonSolution:
    field: np.ndarray
    residual_norm: float


@lru_cache(maxsize=8)
def _grounded_factor(mesh: Mesh):
    L = mesh.stiffness.tocsc()
    return splu(L[1:, 1:].tocsc())


def _solve_mesh(mesh, b):
    """Solve ``L x = b`` for zero-sum ``b`` with vertex 0 grounded."""
    x = np.zeros(mesh.n_nodes)
    x[1:] = _grounded_factor(mesh).solve(b[1:])
    return x


def poisson_solve0(rhs, domain, tol=1e-10, solvability_tol=1e-8):
    """Solve ``laplacian0(phi) = rhs`` with ``phi`` of zero background mean.

    Raises SolvabilityError if ``rhs`` has a background mean beyond
    ``solvability_tol`` relative to ``integral |rhs|``; the admissible mean
    is removed before solving.
    """
    domain = _domain_of(domain)
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape != domain.shape:
        raise DomainMismatchError("rhs does not live on this domain")
    total = integrate0(rhs, domain)
    scale = integrate0(np.abs(rhs), domain)
    if abs(total) > solvability_tol * max(scale, np.finfo(float).tiny):
        raise SolvabilityError(
            f"Poisson right-hand side has mean {total:.3e} (relative {total / scale:.3e})"
        )
    rhs = rhs - total / np.sum(domain.weights)
    ref = float(np.max(np.abs(rhs)))
    if isinstance(domain, Grid):
        sym = domain.laplace_symbol.copy()
        sym[0, 0] = 1.0
        ph = domain.fft(rhs) / sym
        ph[0, 0] = 0.0
        phi = domain.ifft(ph)
        res = float(np.max(np.abs(laplacian0(phi, domain) - rhs)))
    else:
        phi = np.zeros(domain.n_nodes)
        r = rhs
        for _ in range(4):
            b = -(domain.weights * r)
            phi = phi + _solve_mesh(domain, b - b.mean())
            r = rhs - laplacian0(phi, domain)
            res = float(np.max(np.abs(r)))
            if res <= tol * ref:
                break
        phi -= integrate0(phi, domain) / np.sum(domain.weights)
    if res > tol * ref:
        raise SolverFailure(f"Poisson residual {res:.3e} exceeds {tol:g} x {ref:.3e}")
    return PoissonSolution(phi, res)


def first_eigenpair(state, tol=1e-12):
    """Smallest nonzero eigenpair of ``-laplacian_g``.

    Solves ``-laplacian0(phi) = lam * exp(u) * phi`` by Lanczos iteration on
    the inverse operator restricted to the complement of the constants
    (orthogonal in the conformal mass).  Returns ``(lam, phi)`` with
    ``phi`` normalized in the conformal L2 norm.
    """
    d = state.domain
    m = state.conformal_weights.ravel()
    sq = np.sqrt(m)
    ones = sq / np.linalg.norm(sq)
    eu = np.exp(state.u).ravel()
    shape = d.shape

    def deflate(y):
        return y - ones * (ones @ y)

    def apply(y):
        y = deflate(np.asarray(y).ravel())
        phi = y / sq
        # -laplacian0(psi) = exp(u) phi; zero background mean because phi is M-orthogonal to 1
        psi = -poisson_solve0((eu * phi).reshape(shape), d, solvability_tol=1e-6).field.ravel()
        return deflate(sq * psi)

    n = d.n_nodes
    op = LinearOperator((n, n), matvec=apply, dtype=np.float64)
    v0 = deflate(np.cos(np.arange(n) * 0.7) + 0.1)
    try:
        vals, vecs = eigsh(op, k=1, which="LA", tol=tol, v0=v0, maxiter=50 * n)
    except ArpackNoConvergence as exc:
        raise SolverFailure("eigensolver did not converge") from exc
    lam = 1.0 / vals[0]
    phi = (vecs[:, 0] / sq).reshape(shape)
    return float(lam), phi


def lambda1(state, tol=1e-12):
    """Smallest nonzero eigenvalue of ``-laplacian_g``."""
    return first_eigenpair(state, tol)[0]


def rayleigh_quotient(phi, state):
    """``int |grad phi|^2 dmu_g / int phi^2 dmu_g`` using the discrete stiffness."""
    d = state.domain
    num = -integrate0(phi * laplacian0(phi, d), d)
    den = float(np.sum((phi * phi * state.conformal_weights).ravel()))
    return num / den
