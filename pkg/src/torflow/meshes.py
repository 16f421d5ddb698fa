"""Bundled closed surfaces and OFF file input/output."""
from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import sparse

from .domain import Mesh
from .errors import InvariantError


def icosphere(level=4, radius=1.0):
    """Unit icosahedron refined ``level`` times, vertices projected to the sphere."""
    t = (1 + 5**0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
         (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
         (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
         (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
         (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
         (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(level):
        cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return Mesh(radius * np.array(verts), np.array(faces), genus=0)


def torus_mesh(n_major=48, n_minor=24, major_radius=1.0, minor_radius=0.4):
    """Embedded torus of revolution, triangulated from a parameter grid."""
    th = 2 * np.pi * np.arange(n_major) / n_major
    ph = 2 * np.pi * np.arange(n_minor) / n_minor
    T, P = np.meshgrid(th, ph, indexing="ij")
    rho = major_radius + minor_radius * np.cos(P)
    verts = np.stack([rho * np.cos(T), rho * np.sin(T), minor_radius * np.sin(P)], -1)
    idx = np.arange(n_major * n_minor).reshape(n_major, n_minor)
    a = idx
    b = np.roll(idx, -1, axis=0)
    c = np.roll(np.roll(idx, -1, axis=0), -1, axis=1)
    d = np.roll(idx, -1, axis=1)
    faces = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3),
                            np.stack([a, c, d], -1).reshape(-1, 3)])
    return Mesh(verts.reshape(-1, 3), faces, genus=1)


def _double_torus_sdf(p, major=1.0, minor=0.42, offset=1.0, blend=0.25):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    d1 = np.sqrt((np.sqrt((x + offset) ** 2 + y**2) - major) ** 2 + z**2) - minor
    d2 = np.sqrt((np.sqrt((x - offset) ** 2 + y**2) - major) ** 2 + z**2) - minor
    # polynomial smooth minimum
    h = np.clip(0.5 + 0.5 * (d2 - d1) / blend, 0.0, 1.0)
    return d2 * (1 - h) + d1 * h - blend * h * (1 - h)


def _sdf_gradient(p, eps=1e-6):
    g = np.empty_like(p)
    for i in range(3):
        e = np.zeros(3)
        e[i] = eps
        g[:, i] = (_double_torus_sdf(p + e) - _double_torus_sdf(p - e)) / (2 * eps)
    return g


@lru_cache(maxsize=4)
def genus2_mesh(resolution=84, area=None, relax_iterations=30):
    """Genus-2 surface: smooth union of two overlapping tori.

    Marching cubes on a ``resolution``-cell grid along the long axis, followed
    by tangential relaxation with projection back onto the level set.
    ``resolution=84`` gives a little over 10k vertices.  If ``area`` is given
    the surface is scaled to that total area.
    """
    from skimage.measure import marching_cubes

    lo = np.array([-2.6, -1.6, -0.7])
    h = 2 * np.abs(lo).max() / resolution
    axes = [np.arange(lo[i], -lo[i] + h, h) for i in range(3)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    # small level offset keeps the surface off grid nodes
    v, f, _, _ = marching_cubes(_double_torus_sdf(X), level=1e-7, spacing=(h, h, h))
    v = v + lo
    n = len(v)
    i = f.ravel()
    j = np.roll(f, -1, axis=1).ravel()
    adj = sparse.coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n)).tocsr()
    adj = ((adj + adj.T) > 0).astype(float)
    deg = np.asarray(adj.sum(axis=1)).ravel()
    for _ in range(relax_iterations):
        d = adj @ v / deg[:, None] - v
        g = _sdf_gradient(v)
        nrm = g / np.linalg.norm(g, axis=1)[:, None]
        d -= np.einsum("ij,ij->i", d, nrm)[:, None] * nrm
        v = v + 0.5 * d
        for _ in range(3):
            g = _sdf_gradient(v)
            v = v - (_double_torus_sdf(v) / np.einsum("ij,ij->i", g, g))[:, None] * g
    mesh = Mesh(v, f, genus=2)
    if area is not None:
        mesh = Mesh(v * np.sqrt(area / mesh.area), f, genus=2)
    return mesh


def scaled(mesh, area):
    """Copy of ``mesh`` uniformly scaled to the given total area."""
    return Mesh(mesh.vertices * np.sqrt(area / mesh.area), mesh.faces)


def read_off(path, genus=None):
    """Read an ASCII OFF triangle mesh."""
    path = Path(path)
    tokens = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise InvariantError(f"{path}: missing OFF header")
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4
        verts = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
        pos += 3 * nv
        faces = []
        for _ in range(nf):
            k = int(tokens[pos])
            if k != 3:
                raise InvariantError(f"{path}: only triangular faces are supported")
            faces.append([int(x) for x in tokens[pos + 1:pos + 4]])
            pos += 4
    except (IndexError, ValueError) as exc:
        if isinstance(exc, InvariantError):
            raise
        raise InvariantError(f"{path}: malformed OFF file ({exc})") from exc
    return Mesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3), genus=genus)


def write_off(mesh, path):
    with open(path, "w") as fh:
        fh.write(f"OFF\n{mesh.n_nodes} {len(mesh.faces)} 0\n")
        for p in mesh.vertices:
            fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
        for a, b, c in mesh.faces:
            fh.write(f"3 {a} {b} {c}\n")
