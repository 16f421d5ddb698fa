"""Snapshot (``.fld``) and diagnostics CSV serialization.

A snapshot is one ASCII header line ``FLD1 <backend> <n1> <n2> <t>``
followed by ``n1 * n2`` little-endian float64 values (row-major on grids,
vertex order on meshes, where ``n2 = 1``).
"""
from __future__ import annotations

import csv
import os

import numpy as np

from .diagnostics import CSV_COLUMNS
from .domain import Grid
from .errors import ConfigError

MAGIC = "FLD1"


def write_field(path, values, domain, t=0.0):
    values = np.ascontiguousarray(values, dtype="<f8")
    if isinstance(domain, Grid):
        backend, n1, n2 = "grid", domain.nx, domain.ny
    else:
        backend, n1, n2 = "mesh", domain.n_nodes, 1
    if values.size != n1 * n2:
        raise ValueError(f"field has {values.size} values, domain needs {n1 * n2}")
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {backend} {n1} {n2} {float(t)!r}\n".encode("ascii"))
        fh.write(values.tobytes(order="C"))


def read_field(path):
    """Return ``(values, backend, t)``; grid values come back with shape ``(n1, n2)``."""
    if not os.path.isfile(path):
        raise ConfigError(f"snapshot file not found: {path}")
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").split()
        data = fh.read()
    if len(header) != 5 or header[0] != MAGIC or header[1] not in ("grid", "mesh"):
        raise ConfigError(f"{path}: not a {MAGIC} snapshot")
    try:
        n1, n2, t = int(header[2]), int(header[3]), float(header[4])
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed snapshot header") from exc
    values = np.frombuffer(data, dtype="<f8")
    if values.size != n1 * n2:
        raise ConfigError(f"{path}: expected {n1 * n2} values, found {values.size}")
    values = values.astype(np.float64)
    shape = (n1, n2) if header[1] == "grid" else (n1,)
    return values.reshape(shape), header[1], t


def format_number(x):
    return format(float(x), ".17g")


def write_diagnostics_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in records:
            row = rec.csv_row()
            w.writerow([format_number(v) for v in row[:-1]] + [str(row[-1])])


def read_diagnostics_csv(path):
    """Return a dict of column name to float array."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(header)}
