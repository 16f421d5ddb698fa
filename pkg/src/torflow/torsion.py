"""Vectorial torsion: pointwise algebra and divergence of the torsion field.

Tangent vectors are arrays whose last axis has length 2 (grid coordinates);
the metric at a node is ``exp(u)`` times the Euclidean inner product.
Everything broadcasts, so a batch of samples is just a leading axis.
"""
from __future__ import annotations

import numpy as np

from .domain import FromDivergence, FromOneForm, Grid
from .errors import UnsupportedBackendError


def metric(a, b, u):
    """``g(a, b) = exp(u) a.b`` for the conformally flat metric."""
    return np.exp(u) * np.einsum("...i,...i->...", a, b)


def torsion_endomorphism(X, Y, V, u=0.0):
    """``A(X, Y) = g(X, Y) V - g(V, Y) X``."""
    X, Y, V = (np.asarray(a, dtype=np.float64) for a in (X, Y, V))
    gxy = metric(X, Y, u)[..., None]
    gvy = metric(V, Y, u)[..., None]
    return gxy * V - gvy * X


def torsion_tensor(X, Y, V, u=0.0):
    """``T(X, Y) = A(X, Y) - A(Y, X)``."""
    return torsion_endomorphism(X, Y, V, u) - torsion_endomorphism(Y, X, V, u)


def torsion_tensor_closed_form(X, Y, V, u=0.0):
    """``T(X, Y) = g(V, X) Y - g(V, Y) X``; antisymmetric bit for bit."""
    X, Y, V = (np.asarray(a, dtype=np.float64) for a in (X, Y, V))
    return metric(V, X, u)[..., None] * Y - metric(V, Y, u)[..., None] * X


def div_torsion_background(torsion, domain=None):
    """``div_{g0} V`` as a scalar field."""
    if isinstance(torsion, FromOneForm):
        if domain is not None and not isinstance(domain, Grid):
            raise UnsupportedBackendError("one-form torsion needs the grid backend")
        return torsion.d0
    if isinstance(torsion, FromDivergence):
        return torsion.d0
    raise TypeError(f"not torsion data: {torsion!r}")


def div_torsion_conformal(torsion, state):
    """``div_g V = exp(-u) div_{g0} V`` for the fixed dual one-form."""
    return np.exp(-state.u) * div_torsion_background(torsion, state.domain)
