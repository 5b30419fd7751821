"""Output writers: legacy ASCII VTK snapshots and CSV time series."""
from __future__ import annotations

import csv
from dataclasses import fields
from pathlib import Path

import numpy as np

from .gating import open_probability
from .stepper import Discretization, FieldState, TimeSeriesRow

_VTK_TRIANGLE = 5


def _write_vtk(path: Path, title: str, vertices: np.ndarray, triangles: np.ndarray, scalars: dict) -> None:
    n, m = len(vertices), len(triangles)
    with open(path, "w", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title.replace("\n", " ")[:255] + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n} double\n")
        for x, y in vertices:
            fh.write(f"{x:.17g} {y:.17g} 0\n")
        fh.write(f"CELLS {m} {4 * m}\n")
        for a, b, c in triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {m}\n")
        fh.write(f"{_VTK_TRIANGLE}\n" * m)
        fh.write(f"POINT_DATA {n}\n")
        for name, values in scalars.items():
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            fh.writelines(f"{v:.17g}\n" for v in values)


def write_snapshot_vtk(state: FieldState, disc: Discretization, path) -> tuple[Path, Path]:
    """Write ``<path>_cytosol.vtk`` (u, b, P) and ``<path>_er.vtk`` (ue).

    P is the RyR open probability on interface points and zero elsewhere.
    """
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    p = np.zeros(disc.cyto.n_vertices)
    p[disc.interface.cyto_nodes] = open_probability(state.gating)
    title = f"calcwave t={state.t!r} step={state.n}"
    pc = base.with_name(base.name + "_cytosol.vtk")
    pe = base.with_name(base.name + "_er.vtk")
    _write_vtk(pc, title, disc.cyto.vertices, disc.cyto.triangles, {"u": state.U, "b": state.B, "P": p})
    _write_vtk(pe, title, disc.er.vertices, disc.er.triangles, {"ue": state.Ue})
    return pc, pe


SERIES_COLUMNS = tuple(f.name for f in fields(TimeSeriesRow))


def write_timeseries_csv(rows, path) -> None:
    rows = list(rows)
    if not rows:
        raise ValueError("no time-series rows to write")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for r in rows:
            w.writerow([repr(getattr(r, c)) for c in SERIES_COLUMNS])


def read_timeseries_csv(path) -> list[TimeSeriesRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SERIES_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        out = []
        for rec in reader:
            out.append(TimeSeriesRow(**{c: (int(rec[c]) if c == "iterations" else float(rec[c]))
                                        for c in SERIES_COLUMNS}))
    return out
