"""Legacy ASCII VTK and CSV writers plus a small VTK reader for layouts."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

CELL_TYPES = {3: 5, 4: 10}  # triangle, tetrahedron


def _num(v) -> str:
    return repr(float(v))


def _pad3(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape[1] > 3:
        raise ValueError("vector fields may have at most 3 components")
    return np.hstack([a, np.zeros((len(a), 3 - a.shape[1]))])


def phase_fields(phi: np.ndarray) -> dict:
    """Point data ``phi_1 .. phi_N`` of a nodal phase field."""
    phi = np.asarray(phi, dtype=float)
    return {f"phi_{i + 1}": phi[:, i] for i in range(phi.shape[1])}


def write_vtk(path, mesh, point_data: dict | None = None, title: str = "amtopo") -> Path:
    """Write the mesh and nodal fields as a legacy ASCII unstructured grid.

    1-D arrays become SCALARS, ``(n, d)`` arrays become VECTORS padded to
    three components.  Numbers use ``repr`` so the output is bit-stable and
    reads back exactly.
    """
    path = Path(path)
    n = mesh.n_nodes
    cells = np.asarray(mesh.cells)
    nv = cells.shape[1]
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [" ".join(map(_num, p)) for p in _pad3(mesh.points)]
    lines.append(f"CELLS {len(cells)} {len(cells) * (nv + 1)}")
    lines += [f"{nv} " + " ".join(map(str, c)) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(CELL_TYPES[nv])] * len(cells)
    if point_data:
        lines.append(f"POINT_DATA {n}")
        for name, values in point_data.items():
            a = np.asarray(values, dtype=float)
            if a.ndim == 1 and a.size == n * mesh.dim and name == "u":
                a = a.reshape(n, mesh.dim)
            if a.shape[0] != n:
                raise ValueError(f"field {name!r} has {a.shape[0]} values for {n} nodes")
            if a.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [_num(v) for v in a]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [" ".join(map(_num, row)) for row in _pad3(a)]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_vtk(path) -> dict:
    """Read files written by :func:`write_vtk`; returns points, cells and point data."""
    tokens = Path(path).read_text().split("\n")
    out = {"points": None, "cells": None, "point_data": {}}
    i = 0
    n = 0

    def numbers(start, count):
        vals, j = [], start
        while len(vals) < count:
            vals += tokens[j].split()
            j += 1
        return np.array(vals, dtype=float), j

    while i < len(tokens):
        head = tokens[i].split()
        if not head:
            i += 1
            continue
        key = head[0]
        if key == "POINTS":
            n = int(head[1])
            vals, i = numbers(i + 1, 3 * n)
            out["points"] = vals.reshape(n, 3)
        elif key == "CELLS":
            count, size = int(head[1]), int(head[2])
            vals, i = numbers(i + 1, size)
            rows = vals.astype(int).reshape(count, -1)
            out["cells"] = rows[:, 1:]
        elif key == "SCALARS":
            vals, i = numbers(i + 2, n)
            out["point_data"][head[1]] = vals
        elif key == "VECTORS":
            vals, i = numbers(i + 1, 3 * n)
            out["point_data"][head[1]] = vals.reshape(n, 3)
        else:
            i += 1
    return out


def read_phases(path, n_phases: int | None = None) -> np.ndarray:
    """Nodal phase field from the ``phi_i`` arrays of a VTK file."""
    data = read_vtk(path)["point_data"]
    names = sorted((k for k in data if k.startswith("phi_")), key=lambda k: int(k.split("_")[1]))
    if not names:
        raise ValueError(f"{path} contains no phi_i fields")
    if n_phases is not None and len(names) != n_phases:
        raise ValueError(f"{path} has {len(names)} phases, expected {n_phases}")
    return np.stack([data[k] for k in names], axis=1)


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_csv(path, rows, fields) -> Path:
    """CSV with a fixed header; floats are written with ``repr`` for exact reproducibility."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_cell(row[f]) for f in fields])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def write_keyvalue(path, data: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{k} = {_cell(v) if not isinstance(v, str) else v}\n" for k, v in data.items()))
    return path
