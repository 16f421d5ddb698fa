import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torflow.domain import (ConformalState, FromDivergence, Grid, Mesh, OneForm,
                            integrate, no_torsion, volume)
from torflow.errors import InvariantError, TopologyError, UnsupportedBackendError
from torflow.meshes import genus2_mesh, icosphere, read_off, write_off
from torflow.presets import random_field


@pytest.mark.parametrize("nx,ny", [(15, 16), (16, 17), (14, 16), (8, 8)])
def test_grid_rejects_bad_sizes(nx, ny):
    with pytest.raises(InvariantError):
        Grid(nx, ny)


def test_grid_rejects_nonpositive_period():
    with pytest.raises(InvariantError):
        Grid(16, 16, lx=0.0)


def test_grid_node_positions():
    g = Grid(16, 32, lx=2.0, ly=3.0)
    X, Y = g.coords
    assert X[1, 0] == pytest.approx(2.0 / 16)
    assert Y[0, 1] == pytest.approx(3.0 / 32)
    assert g.weights.sum() == pytest.approx(6.0)


def test_flat_volume(grid64):
    s = ConformalState(grid64, np.zeros(grid64.shape))
    assert volume(s) == pytest.approx(4 * math.pi**2, rel=1e-14)


def test_sphere_volume():
    s = ConformalState(icosphere(5), np.zeros(10242))
    assert abs(volume(s) / (4 * math.pi) - 1) < 1e-3


def test_euler_characteristics(sphere4, torus):
    assert sphere4.chi == 2
    assert torus.chi == 0
    g2 = genus2_mesh(resolution=48)
    assert g2.chi == -2
    for m in (sphere4, torus, g2):
        assert m.n_nodes - m.n_edges + len(m.faces) == m.chi


def test_mesh_weights_sum_to_area(sphere4, torus):
    for m in (sphere4, torus):
        assert m.weights.sum() == pytest.approx(m.area, rel=1e-12)
        assert np.all(m.weights > 0)


def test_mesh_rejects_open_surface(sphere4):
    with pytest.raises(InvariantError):
        Mesh(sphere4.vertices, sphere4.faces[1:])


def test_mesh_rejects_flipped_face(sphere4):
    faces = sphere4.faces.copy()
    faces[0] = faces[0, ::-1]
    with pytest.raises(InvariantError):
        Mesh(sphere4.vertices, faces)


def test_mesh_rejects_degenerate_triangle():
    # tetrahedron with one vertex collapsed onto an edge midpoint
    v = np.array([[0, 0, 0], [1, 0, 0], [0.5, 0, 0], [0, 0, 1.0]])
    f = np.array([[0, 2, 1], [0, 1, 3], [1, 2, 3], [2, 0, 3]])
    with pytest.raises(InvariantError):
        Mesh(v, f)


def test_mesh_rejects_wrong_genus(sphere4):
    with pytest.raises(TopologyError):
        Mesh(sphere4.vertices, sphere4.faces, genus=1)


def test_off_roundtrip(tmp_path, torus):
    p = tmp_path / "t.off"
    write_off(torus, p)
    back = read_off(p, genus=1)
    assert np.array_equal(back.vertices, torus.vertices)
    assert np.array_equal(back.faces, torus.faces)


def test_divergence_data_must_be_mean_free(grid32):
    X, _ = grid32.coords
    with pytest.raises(InvariantError):
        FromDivergence(grid32, 1.0 + np.cos(X))
    FromDivergence(grid32, np.cos(X))


def test_oneform_is_grid_only(sphere4):
    with pytest.raises(UnsupportedBackendError):
        OneForm(sphere4, np.zeros(sphere4.shape), np.zeros(sphere4.shape))


def test_state_validation(grid32, sphere4):
    with pytest.raises(InvariantError):
        ConformalState(grid32, np.zeros((16, 16)))
    u = np.zeros(grid32.shape)
    u[3, 4] = np.nan
    with pytest.raises(InvariantError):
        ConformalState(grid32, u)
    with pytest.raises(InvariantError):
        ConformalState(sphere4, np.zeros(sphere4.shape), chi=0)
    with pytest.raises(InvariantError):
        ConformalState(grid32, np.zeros(grid32.shape), no_torsion(sphere4))


def test_state_is_immutable(grid32):
    s = ConformalState(grid32, np.zeros(grid32.shape))
    with pytest.raises(ValueError):
        s.u[0, 0] = 1.0


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10), seed=st.integers(0, 1000))
def test_integrate_is_linear(grid32, a, b, seed):
    s = ConformalState(grid32, random_field(grid32, 0.5, seed))
    f, g = random_field(grid32, 1.0, seed + 1), random_field(grid32, 1.0, seed + 2)
    lhs = integrate(a * f + b * g, s)
    rhs = a * integrate(f, s) + b * integrate(g, s)
    scale = (abs(a) + abs(b) + 1) * integrate(np.ones(grid32.shape), s)
    assert abs(lhs - rhs) <= 1e-13 * scale


@settings(max_examples=25, deadline=None)
@given(c=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_volume_scales_exponentially(grid32, c, seed):
    u = random_field(grid32, 0.5, seed)
    v0 = volume(ConformalState(grid32, u))
    v1 = volume(ConformalState(grid32, u + c))
    assert v1 == pytest.approx(math.exp(c) * v0, rel=1e-12)


def test_mesh_volume_scaling(sphere4):
    u = sphere4.vertices[:, 0]
    v0 = volume(ConformalState(sphere4, u))
    assert volume(ConformalState(sphere4, u + 0.7)) == pytest.approx(math.exp(0.7) * v0, rel=1e-12)
