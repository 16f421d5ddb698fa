"""Run configuration: flat ``key = value`` text with dotted keys.

Lines starting with ``#`` are comments.  Input file paths (meshes,
snapshots) are resolved relative to the config file; ``outputs.dir`` is
resolved relative to the working directory.

Presets
-------
``initial_u``: ``zero``, ``sine`` (grid; ``amplitude``, ``kx``, ``ky``),
``random`` (grid; ``amplitude``, ``max_mode``), ``quadrupole`` (mesh;
``amplitude``), ``snapshot`` (``path``).

``torsion``: ``none``, ``exact`` (grid; ``terms = a,kx,ky,b; ...``),
``random`` (grid; ``n_terms``, ``amplitude``, ``max_mode``), ``constant``
(grid; ``cx``, ``cy``), ``wave`` (mesh; ``amplitude``, ``wave = wx,wy,wz``),
``snapshot`` (a ``d0`` field; ``path``).

Random presets use ``seed`` for ``initial_u`` and ``seed + 1`` for torsion.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import meshes, presets
from .domain import ConformalState, FromDivergence, Grid, no_torsion
from .errors import ConfigError, TorflowError
from .flow import FlowConfig

INITIAL_PRESETS = ("zero", "sine", "random", "quadrupole", "snapshot")
TORSION_PRESETS = ("none", "exact", "random", "constant", "wave", "snapshot")
MESH_PRESETS = ("icosphere", "torus", "genus2")

# key -> (type, default)
SCHEMA = {
    "backend": (str, "grid"),
    "seed": (int, 0),
    "grid.nx": (int, 64),
    "grid.ny": (int, 64),
    "grid.lx": (float, 2 * math.pi),
    "grid.ly": (float, 2 * math.pi),
    "mesh.path": (str, None),
    "mesh.preset": (str, None),
    "mesh.genus": (int, None),
    "mesh.level": (int, 4),
    "mesh.resolution": (int, 84),
    "mesh.area": (float, None),
    "initial_u": (str, "zero"),
    "initial_u.amplitude": (float, 0.1),
    "initial_u.kx": (int, 1),
    "initial_u.ky": (int, 0),
    "initial_u.max_mode": (int, None),
    "initial_u.path": (str, None),
    "torsion": (str, "none"),
    "torsion.terms": (str, ""),
    "torsion.n_terms": (int, 4),
    "torsion.amplitude": (float, 0.2),
    "torsion.max_mode": (int, 3),
    "torsion.cx": (float, 0.0),
    "torsion.cy": (float, 0.0),
    "torsion.wave": (str, "1,0,0"),
    "torsion.path": (str, None),
    "flow.dt_initial": (float, 1e-3),
    "flow.dt_safety": (float, 0.9),
    "flow.t_max": (float, 10.0),
    "flow.stop_tol": (float, 1e-8),
    "flow.sample_interval": (float, 0.1),
    "flow.integrator": (str, "explicit-rk4"),
    "outputs.dir": (str, "out"),
    "outputs.snapshots": (str, "all"),
    "oracle.tol": (float, 1e-10),
    "stability.marginal_tol": (float, 1e-3),
    "check.t_max": (float, 0.05),
}


def parse_text(text, source="<config>"):
    """Parse ``key = value`` lines into a dict of raw strings."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def _convert(key, value):
    typ = SCHEMA[key][0]
    try:
        return typ(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ.__name__}") from exc


@dataclass
class RunConfig:
    values: dict
    base_dir: str = "."

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_text(cls, text, base_dir=".", source="<config>"):
        raw = parse_text(text, source)
        values = {k: d for k, (_, d) in SCHEMA.items()}
        values.update({k: _convert(k, v) for k, v in raw.items()})
        cfg = cls(values, base_dir)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            text = fh.read()
        return cls.from_text(text, os.path.dirname(os.path.abspath(path)), path)

    def path(self, key):
        p = self.values[key]
        if p is None:
            raise ConfigError(f"{key} is required")
        p = p if os.path.isabs(p) else os.path.join(self.base_dir, p)
        if not os.path.isfile(p):
            raise ConfigError(f"{key}: file not found: {p}")
        return p

    def validate(self):
        v = self.values
        if v["backend"] not in ("grid", "mesh"):
            raise ConfigError(f"backend must be 'grid' or 'mesh', got {v['backend']!r}")
        if v["initial_u"] not in INITIAL_PRESETS:
            raise ConfigError(f"initial_u must be one of {INITIAL_PRESETS}")
        if v["torsion"] not in TORSION_PRESETS:
            raise ConfigError(f"torsion must be one of {TORSION_PRESETS}")
        if v["outputs.snapshots"] not in ("all", "final"):
            raise ConfigError("outputs.snapshots must be 'all' or 'final'")
        if v["backend"] == "grid":
            for k in ("grid.nx", "grid.ny"):
                if v[k] < 16 or v[k] % 2:
                    raise ConfigError(f"{k} must be even and at least 16, got {v[k]}")
            for k in ("grid.lx", "grid.ly"):
                if not v[k] > 0:
                    raise ConfigError(f"{k} must be positive")
            if v["initial_u"] == "quadrupole" or v["torsion"] == "wave":
                raise ConfigError("quadrupole/wave presets need the mesh backend")
        else:
            if (v["mesh.path"] is None) == (v["mesh.preset"] is None):
                raise ConfigError("mesh backend needs exactly one of mesh.path, mesh.preset")
            if v["mesh.preset"] is not None and v["mesh.preset"] not in MESH_PRESETS:
                raise ConfigError(f"mesh.preset must be one of {MESH_PRESETS}")
            if v["mesh.path"] is not None:
                self.path("mesh.path")
            if v["initial_u"] in ("sine", "random"):
                raise ConfigError(f"initial_u={v['initial_u']} needs the grid backend")
            if v["torsion"] in ("exact", "random", "constant"):
                raise ConfigError(f"torsion={v['torsion']} needs the grid backend")
        if v["initial_u"] == "snapshot":
            self.path("initial_u.path")
        if v["torsion"] == "snapshot":
            self.path("torsion.path")
        if v["torsion"] == "exact":
            presets.parse_terms(v["torsion.terms"])
        try:
            self.flow_config()
        except TorflowError as exc:
            raise ConfigError(f"flow settings: {exc}") from exc

    def flow_config(self):
        v = self.values
        return FlowConfig(
            dt_initial=v["flow.dt_initial"], dt_safety=v["flow.dt_safety"],
            t_max=v["flow.t_max"], stop_tol=v["flow.stop_tol"],
            sample_interval=v["flow.sample_interval"], integrator=v["flow.integrator"],
        )


def build_domain(cfg: RunConfig):
    v = cfg.values
    if v["backend"] == "grid":
        return Grid(v["grid.nx"], v["grid.ny"], v["grid.lx"], v["grid.ly"])
    try:
        if v["mesh.path"] is not None:
            mesh = meshes.read_off(cfg.path("mesh.path"), genus=v["mesh.genus"])
        elif v["mesh.preset"] == "icosphere":
            mesh = meshes.icosphere(v["mesh.level"])
        elif v["mesh.preset"] == "torus":
            mesh = meshes.torus_mesh()
        else:
            mesh = meshes.genus2_mesh(v["mesh.resolution"])
    except (ValueError, OSError) as exc:
        raise ConfigError(f"cannot load mesh: {exc}") from exc
    if v["mesh.area"] is not None:
        mesh = meshes.scaled(mesh, v["mesh.area"])
    return mesh


def _snapshot_values(cfg, key, domain):
    from .io import read_field

    values, backend, _ = read_field(cfg.path(key))
    if values.shape != domain.shape:
        raise ConfigError(f"{key}: snapshot shape {values.shape} does not match domain {domain.shape}")
    return values


def build_initial_u(cfg: RunConfig, domain):
    v = cfg.values
    kind, amp = v["initial_u"], v["initial_u.amplitude"]
    if kind == "zero":
        return np.zeros(domain.shape)
    if kind == "sine":
        return presets.sine_field(domain, amp, v["initial_u.kx"], v["initial_u.ky"])
    if kind == "random":
        return presets.random_field(domain, amp, v["seed"], v["initial_u.max_mode"])
    if kind == "quadrupole":
        return presets.quadrupole_field(domain, amp)
    return _snapshot_values(cfg, "initial_u.path", domain)


def build_torsion(cfg: RunConfig, domain):
    v = cfg.values
    kind = v["torsion"]
    if kind == "none":
        return no_torsion(domain)
    if kind == "exact":
        return presets.oneform_torsion(presets.exact_form(domain, presets.parse_terms(v["torsion.terms"]))[0])
    if kind == "random":
        terms = presets.random_exact_terms(v["seed"] + 1, v["torsion.n_terms"],
                                           v["torsion.amplitude"], v["torsion.max_mode"])
        return presets.oneform_torsion(presets.exact_form(domain, terms)[0])
    if kind == "constant":
        return presets.oneform_torsion(presets.constant_form(domain, v["torsion.cx"], v["torsion.cy"]))
    if kind == "wave":
        try:
            wave = [float(s) for s in v["torsion.wave"].split(",")]
        except ValueError as exc:
            raise ConfigError("torsion.wave must be three comma-separated numbers") from exc
        if len(wave) != 3:
            raise ConfigError("torsion.wave must be three comma-separated numbers")
        return presets.mesh_wave_divergence(domain, v["torsion.amplitude"], wave)
    try:
        return FromDivergence(domain, _snapshot_values(cfg, "torsion.path", domain), mean_tol=1e-8)
    except ValueError as exc:
        raise ConfigError(f"torsion.path: {exc}") from exc


def build_state(cfg: RunConfig):
    domain = build_domain(cfg)
    try:
        return ConformalState(domain, build_initial_u(cfg, domain), build_torsion(cfg, domain))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
