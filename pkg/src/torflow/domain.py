"""Discretized closed surfaces, field containers and the conformal state.

Scalar fields are plain float64 ndarrays shaped like the domain
(``(nx, ny)`` on a grid, ``(n_vertices,)`` on a mesh).  The conformal
metric is ``g = exp(u) g0`` where ``g0`` is the flat metric on a grid and
the embedding-induced metric on a mesh.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy import sparse

from .errors import DomainMismatchError, InvariantError, TopologyError, UnsupportedBackendError


def fft_workers():
    """Worker count for FFTs, capped by TORFLOW_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("TORFLOW_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True, eq=False)
class Grid:
    """Periodic uniform grid on the flat torus [0, lx) x [0, ly).

    Node ``(i, j)`` sits at ``(i*lx/nx, j*ly/ny)``; arrays are indexed
    ``[i, j]`` so axis 0 is x.
    """

    nx: int
    ny: int
    lx: float = 2 * np.pi
    ly: float = 2 * np.pi

    def __post_init__(self):
        for name in ("nx", "ny"):
            n = getattr(self, name)
            if int(n) != n or n < 16 or n % 2:
                raise InvariantError(f"{name}={n} must be an even integer >= 16")
        if not (self.lx > 0 and self.ly > 0):
            raise InvariantError("period lengths must be positive")

    backend = "grid"
    chi = 0

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def n_nodes(self):
        return self.nx * self.ny

    @property
    def cell_area(self):
        return self.lx * self.ly / (self.nx * self.ny)

    @cached_property
    def weights(self):
        w = np.full(self.shape, self.cell_area)
        w.flags.writeable = False
        return w

    @property
    def area(self):
        return self.lx * self.ly

    @cached_property
    def coords(self):
        x = np.arange(self.nx) * (self.lx / self.nx)
        y = np.arange(self.ny) * (self.ly / self.ny)
        return np.meshgrid(x, y, indexing="ij")

    @cached_property
    def wavenumbers(self):
        """Angular wavenumbers ``(kx, ky)`` broadcastable to the rfft2 layout."""
        kx = 2 * np.pi * sfft.fftfreq(self.nx, d=self.lx / self.nx)
        ky = 2 * np.pi * sfft.rfftfreq(self.ny, d=self.ly / self.ny)
        return kx[:, None], ky[None, :]

    @cached_property
    def derivative_symbols(self):
        """``i*k`` symbols with the Nyquist modes zeroed (odd derivatives)."""
        kx, ky = self.wavenumbers
        kx = kx.copy()
        ky = ky.copy()
        kx[self.nx // 2, 0] = 0.0
        ky[0, self.ny // 2] = 0.0
        return 1j * kx, 1j * ky

    @cached_property
    def laplace_symbol(self):
        kx, ky = self.wavenumbers
        return -(kx**2 + ky**2)

    @cached_property
    def max_laplace_eigenvalue(self):
        """Spectral radius of the background Laplacian."""
        return (np.pi * self.nx / self.lx) ** 2 + (np.pi * self.ny / self.ly) ** 2

    def fft(self, f):
        return sfft.rfft2(f, workers=fft_workers())

    def ifft(self, fh):
        return sfft.irfft2(fh, s=self.shape, workers=fft_workers())

    @cached_property
    def background_curvature(self):
        r0 = np.zeros(self.shape)
        r0.flags.writeable = False
        return r0

    def check_field(self, values, name="field"):
        return _check_field(self, values, name)


class Mesh:
    """Closed, oriented triangle mesh with the embedding-induced metric.

    Parameters
    ----------
    vertices : (n, 3) array_like
    faces : (m, 3) array_like of int
        Consistently oriented vertex triples.
    genus : int, optional
        If given, ``V - E + F`` must equal ``2 - 2*genus``.
    """

    backend = "mesh"

    def __init__(self, vertices, faces, genus=None):
        v = np.array(vertices, dtype=np.float64)
        f = np.array(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise InvariantError("vertices must have shape (n, 3)")
        if f.ndim != 2 or f.shape[1] != 3:
            raise InvariantError("faces must be triangles")
        if not np.all(np.isfinite(v)):
            raise InvariantError("vertex coordinates must be finite")
        if f.min() < 0 or f.max() >= len(v):
            raise InvariantError("face index out of range")
        v.flags.writeable = False
        f.flags.writeable = False
        self.vertices = v
        self.faces = f
        self._check_closed_oriented()
        areas = self.face_areas
        if np.any(areas <= 1e-12 * areas.mean()):
            raise InvariantError("mesh has degenerate triangles")
        if np.any(np.bincount(f.ravel(), minlength=len(v)) == 0):
            raise InvariantError("mesh has unreferenced vertices")
        if genus is not None and self.chi != 2 - 2 * genus:
            raise TopologyError(
                f"Euler characteristic {self.chi} does not match genus {genus}"
            )

    def _check_closed_oriented(self):
        f = self.faces
        n = len(self.vertices)
        a = f.ravel()
        b = np.roll(f, -1, axis=1).ravel()
        if np.any(a == b):
            raise InvariantError("face with repeated vertex")
        fwd = a * n + b
        uniq, counts = np.unique(fwd, return_counts=True)
        if np.any(counts != 1):
            raise InvariantError("mesh is not consistently oriented (duplicate half-edge)")
        rev = b * n + a
        if not np.all(np.isin(rev, uniq)):
            raise InvariantError("mesh is not closed (unpaired half-edge)")

    @property
    def shape(self):
        return (len(self.vertices),)

    @property
    def n_nodes(self):
        return len(self.vertices)

    @cached_property
    def n_edges(self):
        f = self.faces
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        return len(np.unique(e[:, 0] * self.n_nodes + e[:, 1]))

    @cached_property
    def chi(self):
        return self.n_nodes - self.n_edges + len(self.faces)

    @cached_property
    def _face_geometry(self):
        p = self.vertices[self.faces]
        e0 = p[:, 2] - p[:, 1]  # opposite vertex 0
        e1 = p[:, 0] - p[:, 2]
        e2 = p[:, 1] - p[:, 0]
        n = np.cross(e2, -e1)
        dbl = np.linalg.norm(n, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):  # degenerate faces are rejected later
            unit = n / dbl[:, None]
        return p, (e0, e1, e2), unit, 0.5 * dbl

    @property
    def face_areas(self):
        return self._face_geometry[3]

    @property
    def area(self):
        return float(np.sum(self.face_areas))

    @cached_property
    def corner_angles(self):
        """Interior angle at each face corner, shape (m, 3)."""
        p = self.vertices[self.faces]
        out = np.empty(self.faces.shape)
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            out[:, k] = np.arctan2(np.linalg.norm(np.cross(a, b), axis=1),
                                   np.einsum("ij,ij->i", a, b))
        return out

    @cached_property
    def corner_areas(self):
        """Mixed Voronoi area of each face corner, shape (m, 3); rows sum to face area."""
        p = self.vertices[self.faces]
        ang = self.corner_angles
        cot = 1.0 / np.tan(ang)
        out = np.empty(self.faces.shape)
        for k in range(3):
            i, j = (k + 1) % 3, (k + 2) % 3
            lki = np.einsum("ij,ij->i", p[:, i] - p[:, k], p[:, i] - p[:, k])
            lkj = np.einsum("ij,ij->i", p[:, j] - p[:, k], p[:, j] - p[:, k])
            out[:, k] = (lki * cot[:, j] + lkj * cot[:, i]) / 8
        obtuse = np.any(ang > np.pi / 2, axis=1)
        area = self.face_areas[obtuse, None]
        out[obtuse] = np.where(ang[obtuse] > np.pi / 2, area / 2, area / 4)
        return out

    @cached_property
    def weights(self):
        """Lumped vertex areas (mixed Voronoi cells); they sum to the mesh area."""
        w = np.bincount(self.faces.ravel(), weights=self.corner_areas.ravel(),
                        minlength=self.n_nodes)
        w.flags.writeable = False
        return w

    @cached_property
    def edge_weights(self):
        """Unique edges ``(i, j)`` with ``i < j`` and their cotangent weights."""
        f = self.faces
        cot = 1.0 / np.tan(self.corner_angles)
        i = np.concatenate([f[:, (k + 1) % 3] for k in range(3)])
        j = np.concatenate([f[:, (k + 2) % 3] for k in range(3)])
        w = 0.5 * np.concatenate([cot[:, k] for k in range(3)])
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        key = lo.astype(np.int64) * self.n_nodes + hi
        uniq, inv = np.unique(key, return_inverse=True)
        return uniq // self.n_nodes, uniq % self.n_nodes, np.bincount(inv, weights=w)

    def apply_stiffness(self, values):
        """``L f`` as ``sum_j w_ij (f_i - f_j)``; exactly zero on constants."""
        i, j, w = self.edge_weights
        flux = w * (values[i] - values[j])
        n = self.n_nodes
        return np.bincount(i, weights=flux, minlength=n) - np.bincount(j, weights=flux, minlength=n)

    @cached_property
    def stiffness(self):
        """Cotangent stiffness matrix (symmetric positive semi-definite, CSR)."""
        i, j, w = self.edge_weights
        n = self.n_nodes
        diag = np.bincount(i, weights=w, minlength=n) + np.bincount(j, weights=w, minlength=n)
        L = sparse.coo_matrix(
            (np.concatenate([-w, -w, diag]),
             (np.concatenate([i, j, np.arange(n)]), np.concatenate([j, i, np.arange(n)]))),
            shape=(n, n),
        ).tocsr()
        L.sum_duplicates()
        return L

    @cached_property
    def gershgorin_bound(self):
        """Per-vertex bound on the spectrum of ``W^{-1} L``."""
        absrow = np.asarray(abs(self.stiffness).sum(axis=1)).ravel()
        return absrow / self.weights

    @cached_property
    def angle_defect(self):
        sums = np.bincount(self.faces.ravel(), weights=self.corner_angles.ravel(),
                           minlength=self.n_nodes)
        return 2 * np.pi - sums

    @cached_property
    def background_curvature(self):
        """Scalar curvature ``2K`` from angle defects over lumped areas."""
        r0 = 2 * self.angle_defect / self.weights
        r0.flags.writeable = False
        return r0

    @cached_property
    def gradient_basis(self):
        """Per-face gradients of the three hat functions, shape (m, 3, 3)."""
        _, edges, normals, areas = self._face_geometry
        return np.stack([np.cross(normals, e) / (2 * areas[:, None]) for e in edges], axis=1)

    def check_field(self, values, name="field"):
        return _check_field(self, values, name)


def _check_field(domain, values, name):
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != domain.shape:
        raise DomainMismatchError(
            f"{name} has shape {arr.shape}, domain expects {domain.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise InvariantError(f"{name} has non-finite values")
    return arr


def frozen(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class OneForm:
    """Covector field ``wx dx + wy dy`` on a grid."""

    domain: Grid
    wx: np.ndarray
    wy: np.ndarray

    def __post_init__(self):
        if not isinstance(self.domain, Grid):
            raise UnsupportedBackendError("one-forms are only supported on grids")
        object.__setattr__(self, "wx", frozen(self.domain.check_field(self.wx, "wx")))
        object.__setattr__(self, "wy", frozen(self.domain.check_field(self.wy, "wy")))


@dataclass(frozen=True, eq=False)
class FromOneForm:
    """Torsion vector field given through its (time-independent) dual one-form."""

    vflat: OneForm

    @property
    def domain(self):
        return self.vflat.domain

    @cached_property
    def d0(self):
        from .operators import divergence0

        return frozen(divergence0(self.vflat))


@dataclass(frozen=True, eq=False)
class FromDivergence:
    """Torsion given only through its background divergence ``div_{g0} V``."""

    domain: Grid | Mesh
    d0: np.ndarray
    mean_tol: float = 1e-10

    def __post_init__(self):
        d0 = frozen(self.domain.check_field(self.d0, "d0"))
        object.__setattr__(self, "d0", d0)
        scale = np.max(np.abs(d0))
        if scale > 0:
            w = self.domain.weights
            mean = np.sum((w * d0).ravel()) / np.sum(w.ravel())
            if abs(mean) > self.mean_tol * scale:
                raise InvariantError(
                    f"divergence data has background mean {mean:.3e}; must integrate to zero"
                )


TorsionData = FromOneForm | FromDivergence


def no_torsion(domain):
    return FromDivergence(domain, np.zeros(domain.shape))


def remove_mean(domain, values):
    """Subtract the background-weighted mean."""
    w = domain.weights
    values = np.asarray(values, dtype=np.float64)
    return values - np.sum((w * values).ravel()) / np.sum(w.ravel())


@dataclass(frozen=True, eq=False)
class ConformalState:
    """Conformal metric ``exp(u) g0`` with fixed torsion at flow time ``t``."""

    domain: Grid | Mesh
    u: np.ndarray
    torsion: TorsionData | None = None
    t: float = 0.0
    chi: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "u", frozen(self.domain.check_field(self.u, "u")))
        torsion = self.torsion if self.torsion is not None else no_torsion(self.domain)
        if torsion.domain is not self.domain:
            raise DomainMismatchError("torsion lives on a different domain")
        object.__setattr__(self, "torsion", torsion)
        if self.chi is None:
            object.__setattr__(self, "chi", int(self.domain.chi))
        elif self.chi != self.domain.chi:
            raise InvariantError(
                f"chi={self.chi} inconsistent with domain topology ({self.domain.chi})"
            )
        if not np.isfinite(self.t) or self.t < 0:
            raise InvariantError("flow time must be finite and non-negative")

    @property
    def d0(self):
        return self.torsion.d0

    @cached_property
    def conformal_weights(self):
        """Quadrature weights of ``dmu_g = exp(u) dmu_0``."""
        return np.exp(self.u) * self.domain.weights

    def with_u(self, u, t=None):
        return ConformalState(self.domain, u, self.torsion,
                              self.t if t is None else t, self.chi)


def integrate(values, state):
    """Quadrature of ``values`` against ``dmu_g`` (pairwise summation)."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != state.domain.shape:
        raise DomainMismatchError(
            f"field shape {values.shape} does not match domain {state.domain.shape}"
        )
    return float(np.sum((values * state.conformal_weights).ravel()))


def volume(state):
    return integrate(np.ones(state.domain.shape), state)


def integrate0(values, domain):
    """Quadrature against the background measure."""
    return float(np.sum((np.asarray(values) * domain.weights).ravel()))
