import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torflow.config import RunConfig, build_state, parse_text
from torflow.diagnostics import CSV_COLUMNS, DiagnosticsRecord
from torflow.domain import FromOneForm, Grid, integrate0
from torflow.errors import ConfigError
from torflow.io import read_diagnostics_csv, read_field, write_diagnostics_csv, write_field
from torflow.operators import divergence0
from torflow.presets import (Lcg, exact_form, mesh_wave_divergence, parse_terms, quadrupole_field,
                             random_exact_terms, random_field)


def test_lcg_matches_recurrence():
    x = (7 ^ 0x9E3779B97F4A7C15) % 2 ** 64
    expected = []
    for _ in range(4):
        x = (6364136223846793005 * x + 1442695040888963407) % 2 ** 64
        expected.append(x)
    g = Lcg(7)
    assert g.state == expected[0]
    assert [g.next() for _ in range(3)] == expected[1:]
    assert Lcg(7).uniform() == (expected[1] >> 11) / 2 ** 53


@given(st.integers(0, 2 ** 40))
@settings(max_examples=30, deadline=None)
def test_lcg_ranges(seed):
    g = Lcg(seed)
    for _ in range(20):
        assert 0.0 <= g.uniform() < 1.0
        assert -3 <= g.integer(-3, 5) <= 5


@given(st.integers(0, 10 ** 6), st.floats(0.01, 2.0))
@settings(max_examples=20, deadline=None)
def test_random_field_properties(seed, amp):
    g = Grid(16, 16)
    u = random_field(g, amp, seed)
    assert np.max(np.abs(u)) == pytest.approx(amp, rel=1e-12)
    assert abs(u.mean()) <= 1e-14 * amp
    power = np.abs(np.fft.fft2(u))
    k = np.fft.fftfreq(16, 1 / 16)
    high = (np.abs(k)[:, None] > 4) | (np.abs(k)[None, :] > 4)
    assert np.max(power[high]) <= 1e-12 * np.max(power)
    assert np.array_equal(u, random_field(g, amp, seed))


def test_random_field_seeds_differ():
    g = Grid(16, 16)
    assert not np.allclose(random_field(g, 1.0, 1), random_field(g, 1.0, 2))


def test_exact_form_divergence(grid32):
    omega, phi = exact_form(grid32, [(0.3, 1, 2, 0.5)])
    X, Y = grid32.coords
    arg = X + 2 * Y + 0.5
    assert np.max(np.abs(phi - 0.3 * np.sin(arg))) <= 1e-14
    assert np.max(np.abs(divergence0(omega) + 0.3 * 5 * np.sin(arg))) <= 1e-11


def test_random_exact_terms_deterministic():
    assert random_exact_terms(5) == random_exact_terms(5)
    assert all(abs(a) <= 0.2 and abs(kx) <= 3 and abs(ky) <= 3 for a, kx, ky, _ in random_exact_terms(5))


def test_mesh_presets(sphere4):
    q = quadrupole_field(sphere4, 0.1)
    assert np.max(q) == pytest.approx(0.2, rel=1e-2)
    w = mesh_wave_divergence(sphere4, 0.5)
    assert abs(integrate0(w.d0, sphere4)) <= 1e-14


def test_parse_terms():
    assert parse_terms("0.1,1,2,0.5; 0.2,0,1,0") == [(0.1, 1, 2, 0.5), (0.2, 0, 1, 0.0)]
    with pytest.raises(ConfigError):
        parse_terms("0.1,1,2")
    with pytest.raises(ConfigError):
        parse_terms("0.1,x,2,0")


def test_field_roundtrip(tmp_path, grid32, sphere4):
    u = random_field(grid32, 0.3, 1)
    p = tmp_path / "u.fld"
    write_field(p, u, grid32, 1.2345678901234567)
    v, backend, t = read_field(p)
    assert backend == "grid" and t == 1.2345678901234567
    assert np.array_equal(u, v)
    m = np.cos(sphere4.vertices[:, 0])
    write_field(p, m, sphere4, 0.0)
    v, backend, _ = read_field(p)
    assert backend == "mesh" and np.array_equal(v, m)
    with pytest.raises(ValueError):
        write_field(p, m[:-1], sphere4)


def test_field_read_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        read_field(tmp_path / "missing.fld")
    bad = tmp_path / "bad.fld"
    bad.write_bytes(b"XXXX grid 2 2 0.0\n" + bytes(32))
    with pytest.raises(ConfigError):
        read_field(bad)
    bad.write_bytes(b"FLD1 grid 2 2 0.0\n" + bytes(24))
    with pytest.raises(ConfigError, match="expected 4"):
        read_field(bad)


def test_diagnostics_csv(tmp_path):
    rec = DiagnosticsRecord(t=0.1, R_min=-1 / 3, R_max=2.0, r=0.0, volume=math.pi,
                            gauss_bonnet_quadrature=1e-17, sup_abs_R_minus_r=0.5, sup_abs_f=0.25,
                            sup_grad_f_sq=1.0, sup_grad_R_sq=2.0, sup_div_V=0.3,
                            bound_flags={"zero": True})
    p = tmp_path / "d.csv"
    write_diagnostics_csv(p, [rec, rec])
    lines = p.read_text().splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert lines[0] == ("t,r,volume,gauss_bonnet,R_min,R_max,sup_abs_R_minus_r,sup_abs_f,sup_grad_f_sq,"
                        "sup_grad_R_sq,sup_abs_div_v,gauge_spread,divv_identity_err,bound_pass")
    assert "3.1415926535897931" in lines[1]
    assert "-0.33333333333333331" in lines[1]
    assert lines[1].endswith(",1")
    back = read_diagnostics_csv(p)
    assert back["volume"][0] == math.pi
    assert back["R_min"][1] == -1 / 3


def test_config_parse_errors():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_text("grid.nz = 4")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_text("seed = 1\nseed = 2")
    with pytest.raises(ConfigError, match="key = value"):
        parse_text("seed 1")
    with pytest.raises(ConfigError, match="int"):
        RunConfig.from_text("seed = abc")
    assert parse_text("# comment\n\nseed = 3  # trailing\n") == {"seed": "3"}


@pytest.mark.parametrize("text", [
    "grid.nx = 33",
    "grid.nx = 8",
    "grid.lx = -1",
    "backend = cube",
    "initial_u = blob",
    "torsion = twisted",
    "outputs.snapshots = some",
    "backend = mesh",
    "backend = mesh\nmesh.preset = klein",
    "backend = mesh\nmesh.path = nowhere.off",
    "backend = mesh\nmesh.preset = torus\ninitial_u = sine",
    "backend = mesh\nmesh.preset = torus\ntorsion = exact",
    "initial_u = quadrupole",
    "torsion = exact\ntorsion.terms = 1,2",
    "initial_u = snapshot\ninitial_u.path = nothing.fld",
    "flow.integrator = euler",
    "flow.t_max = -1",
])
def test_config_validation_errors(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_missing_mesh_path_reported(tmp_path):
    with pytest.raises(ConfigError, match="nowhere.off"):
        RunConfig.from_text("backend = mesh\nmesh.path = nowhere.off", base_dir=str(tmp_path))


def test_build_state_defaults_and_random():
    s = build_state(RunConfig.from_text(""))
    assert s.domain.shape == (64, 64) and np.all(s.u == 0) and np.all(s.d0 == 0)
    cfg = RunConfig.from_text("grid.nx = 32\ngrid.ny = 32\ninitial_u = random\ntorsion = random\nseed = 9")
    a, b = build_state(cfg), build_state(cfg)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.d0, b.d0)
    assert isinstance(a.torsion, FromOneForm)
    assert np.max(np.abs(a.u)) == pytest.approx(0.1)


def test_snapshot_shape_mismatch(tmp_path):
    g = Grid(16, 16)
    write_field(tmp_path / "u.fld", np.zeros(g.shape), g)
    cfg = RunConfig.from_text("initial_u = snapshot\ninitial_u.path = u.fld", base_dir=str(tmp_path))
    with pytest.raises(ConfigError, match="shape"):
        build_state(cfg)
