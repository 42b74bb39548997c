"""Field serialization: CSV (``i,j,value``) and legacy ASCII VTK structured points.

A staggered velocity is written as two files, one per component, since each
component lives on its own lattice. ``export_field`` takes a single 2-D
array; use :func:`export_velocity` for a :class:`StaggeredField`.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .grid import Grid, StaggeredField, cell_velocity

__all__ = ["export_field", "import_csv", "export_velocity", "import_velocity",
           "write_vtk_cells"]


def _fmt(x: float) -> str:
    return "%.17g" % x


def export_field(values, fmt: str, path, *, spacing: float = 1.0, origin=(0.0, 0.0),
                 name: str = "value") -> None:
    """Write a 2-D scalar array ``values[i, j]`` as CSV or VTK.

    CSV rows are row-major with 17 significant digits, so
    :func:`import_csv` restores the array bit for bit.
    """
    a = np.asarray(values, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {a.shape}")
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", "value"])
            for i in range(a.shape[0]):
                for j in range(a.shape[1]):
                    w.writerow([i, j, _fmt(a[i, j])])
    elif fmt == "vtk":
        _write_vtk(path, a[..., None], spacing, origin, name)
    else:
        raise ValueError(f"unknown format {fmt!r}; use 'csv' or 'vtk'")


def import_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["i", "j", "value"]:
            raise ValueError(f"{path}: expected header i,j,value, got {header}")
        rows = [(int(i), int(j), float(v)) for i, j, v in reader]
    if not rows:
        raise ValueError(f"{path}: empty field")
    ni = max(r[0] for r in rows) + 1
    nj = max(r[1] for r in rows) + 1
    out = np.full((ni, nj), np.nan)
    for i, j, v in rows:
        out[i, j] = v
    if len(rows) != ni * nj or np.isnan(out).any():
        raise ValueError(f"{path}: incomplete lattice")
    return out


def _write_vtk(path: Path, data: np.ndarray, spacing: float, origin, name: str) -> None:
    """``data`` has shape ``(nx, ny, ncomp)`` with ``ncomp`` 1 (scalars) or 2 (vectors)."""
    nx, ny, nc = data.shape
    lines = ["# vtk DataFile Version 3.0", name, "ASCII", "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {nx} {ny} 1",
             f"ORIGIN {_fmt(origin[0])} {_fmt(origin[1])} 0",
             f"SPACING {_fmt(spacing)} {_fmt(spacing)} 1",
             f"POINT_DATA {nx * ny}"]
    if nc == 1:
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
    else:
        lines += [f"VECTORS {name} double"]
    # VTK orders points with x fastest
    for j in range(ny):
        for i in range(nx):
            vals = list(data[i, j]) + ([0.0] if nc == 2 else [])
            lines.append(" ".join(_fmt(v) for v in vals))
    path.write_text("\n".join(lines) + "\n")


def write_vtk_cells(path, values, g: Grid, name: str = "value") -> None:
    """Cell-centred scalars ``(nx, ny)`` or vectors ``(nx, ny, 2)`` as VTK points."""
    a = np.asarray(values, float)
    if a.ndim == 2:
        a = a[..., None]
    _write_vtk(Path(path), a, g.h, (0.5 * g.h, 0.5 * g.h), name)


def export_velocity(y: StaggeredField, g: Grid, fmt: str, stem) -> list:
    """Write a staggered field; returns the written paths.

    CSV gives ``<stem>_u.csv`` and ``<stem>_v.csv`` on the face lattices; VTK
    gives one vector dataset of the cell-averaged velocity.
    """
    stem = Path(stem)
    if fmt == "csv":
        paths = [stem.with_name(stem.name + "_u.csv"), stem.with_name(stem.name + "_v.csv")]
        export_field(y.u, "csv", paths[0])
        export_field(y.v, "csv", paths[1])
        return paths
    if fmt == "vtk":
        path = stem.with_name(stem.name + ".vtk")
        write_vtk_cells(path, cell_velocity(y), g, name=stem.name)
        return [path]
    raise ValueError(f"unknown format {fmt!r}; use 'csv' or 'vtk'")


def import_velocity(stem, g: Grid | None = None) -> StaggeredField:
    stem = Path(stem)
    u = import_csv(stem.with_name(stem.name + "_u.csv"))
    v = import_csv(stem.with_name(stem.name + "_v.csv"))
    f = StaggeredField(u, v)
    if g is not None and f.shape != (g.u_shape, g.v_shape):
        raise ValueError(f"field shapes {f.shape} do not match the grid")
    return f
