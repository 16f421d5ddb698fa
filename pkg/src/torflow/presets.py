"""Initial-data and torsion presets.

Randomized presets draw from :class:`Lcg`, a 64-bit linear congruential
generator (Knuth's MMIX constants), so a seed reproduces the same bits on
every platform and numpy version.
"""
from __future__ import annotations

import numpy as np

from .domain import FromDivergence, FromOneForm, Grid, Mesh, OneForm, remove_mean
from .errors import ConfigError

_MASK = (1 << 64) - 1


class Lcg:
    """``x <- 6364136223846793005 x + 1442695040888963407 (mod 2**64)``.

    ``uniform()`` returns the top 53 bits scaled to [0, 1).
    """

    A = 6364136223846793005
    C = 1442695040888963407

    def __init__(self, seed):
        self.state = (int(seed) ^ 0x9E3779B97F4A7C15) & _MASK
        self.next()

    def next(self):
        self.state = (self.A * self.state + self.C) & _MASK
        return self.state

    def uniform(self, lo=0.0, hi=1.0):
        return lo + (hi - lo) * ((self.next() >> 11) / float(1 << 53))

    def integer(self, lo, hi):
        """Uniform integer in ``[lo, hi]``."""
        return lo + (self.next() >> 33) % (hi - lo + 1)


def random_field(grid: Grid, amplitude, seed, max_mode=None, decay=2.0):
    """Band-limited random field with ``max |u| = amplitude`` and zero mean.

    Fourier modes ``|kx| <= nx/4``, ``|ky| <= ny/4`` (integer wave indices)
    get uniform random cosine/sine coefficients damped by
    ``(1 + kx^2 + ky^2)^-decay``.
    """
    kmx = grid.nx // 4 if max_mode is None else max_mode
    kmy = grid.ny // 4 if max_mode is None else max_mode
    rng = Lcg(seed)
    coeffs = np.zeros(grid.shape, dtype=complex)
    for kx in range(-kmx, kmx + 1):
        for ky in range(0, kmy + 1):
            if ky == 0 and kx <= 0:
                continue
            a = rng.uniform(-1.0, 1.0)
            b = rng.uniform(-1.0, 1.0)
            w = (1.0 + kx * kx + ky * ky) ** (-decay)
            c = 0.5 * w * complex(a, -b)
            coeffs[kx % grid.nx, ky % grid.ny] += c
            coeffs[-kx % grid.nx, -ky % grid.ny] += c.conjugate()
    u = np.fft.ifft2(coeffs).real * grid.n_nodes
    u -= u.mean()
    peak = np.max(np.abs(u))
    return u * (amplitude / peak) if peak > 0 else u


def sine_field(grid: Grid, amplitude, kx=1, ky=0):
    X, Y = grid.coords
    return amplitude * np.sin(2 * np.pi * (kx * X / grid.lx + ky * Y / grid.ly))


def quadrupole_field(mesh: Mesh, amplitude, axis=2):
    """``amplitude * (3 n_axis^2 - 1)`` with ``n`` the unit direction from the centroid."""
    p = mesh.vertices - np.average(mesh.vertices, axis=0, weights=mesh.weights)
    n = p / np.linalg.norm(p, axis=1)[:, None]
    return amplitude * (3 * n[:, axis] ** 2 - 1)


def exact_form(grid: Grid, terms):
    """One-form ``d phi`` for ``phi = sum a sin(2 pi (kx x/lx + ky y/ly) + b)``.

    ``terms`` is a sequence of ``(a, kx, ky, b)``.  Returns ``(oneform, phi)``.
    """
    X, Y = grid.coords
    phi = np.zeros(grid.shape)
    wx = np.zeros(grid.shape)
    wy = np.zeros(grid.shape)
    for a, kx, ky, b in terms:
        px, py = 2 * np.pi * kx / grid.lx, 2 * np.pi * ky / grid.ly
        arg = px * X + py * Y + b
        phi += a * np.sin(arg)
        wx += a * px * np.cos(arg)
        wy += a * py * np.cos(arg)
    return OneForm(grid, wx, wy), phi


def random_exact_terms(seed, n_terms=4, amplitude=0.2, max_mode=3):
    """Random ``(a, kx, ky, b)`` terms for :func:`exact_form`."""
    rng = Lcg(seed)
    terms = []
    while len(terms) < n_terms:
        a = rng.uniform(-amplitude, amplitude)
        kx = rng.integer(-max_mode, max_mode)
        ky = rng.integer(-max_mode, max_mode)
        b = rng.uniform(0.0, 2 * np.pi)
        if kx == 0 and ky == 0:
            continue
        terms.append((a, kx, ky, b))
    return terms


def constant_form(grid: Grid, cx, cy):
    """Constant one-form; divergence-free, so invisible to the flow."""
    return OneForm(grid, np.full(grid.shape, float(cx)), np.full(grid.shape, float(cy)))


def mesh_wave_divergence(mesh: Mesh, amplitude, wave=(1.0, 0.0, 0.0)):
    """``d0 = amplitude * sin(wave . p)`` with its area-weighted mean removed."""
    d0 = amplitude * np.sin(mesh.vertices @ np.asarray(wave, dtype=float))
    return FromDivergence(mesh, remove_mean(mesh, d0))


def parse_terms(text):
    """Parse ``"a,kx,ky,b; a,kx,ky,b"`` into exact-form terms."""
    terms = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = [p.strip() for p in chunk.split(",")]
        if len(parts) != 4:
            raise ConfigError(f"exact-form term needs 'a,kx,ky,b', got {chunk!r}")
        try:
            terms.append((float(parts[0]), int(parts[1]), int(parts[2]), float(parts[3])))
        except ValueError as exc:
            raise ConfigError(f"bad exact-form term {chunk!r}") from exc
    return terms


def oneform_torsion(oneform):
    return FromOneForm(oneform)
