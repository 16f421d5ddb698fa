"""Total scalar curvature of the torsion connection and the flow right-hand side."""
from __future__ import annotations

import numpy as np

from .domain import integrate, volume
from .operators import laplacian0


def background_source(state):
    """``q0 = R_{g0} + 2 div_{g0} V``, the state-independent curvature source."""
    return state.domain.background_curvature + 2 * state.d0


def total_curvature(state):
    """``R = exp(-u) (R_{g0} + 2 div_{g0} V - laplacian0(u))``."""
    return np.exp(-state.u) * (background_source(state) - laplacian0(state.u, state.domain))


def levi_civita_curvature(state):
    """``R_g = exp(-u) (R_{g0} - laplacian0(u))``."""
    return np.exp(-state.u) * (state.domain.background_curvature
                               - laplacian0(state.u, state.domain))


def r_value(state):
    """Average curvature from topology: ``4 pi chi / Vol``."""
    return 4 * np.pi * state.chi / volume(state)


def gauss_bonnet_quadrature(state):
    """Quadrature estimate of ``int R dmu``; equals ``4 pi chi`` up to round-off."""
    return integrate(total_curvature(state), state)


def rhs(state):
    """``du/dt = r - R``."""
    return r_value(state) - total_curvature(state)
