"""CSV and JSON writers for traces, snapshots and raw coefficients."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .mesh import DGField, Mesh1D


def fmt(x: float) -> str:
    """17 significant digits, enough to round-trip a double."""
    return format(float(x), ".17g")


def write_trace_csv(trace, path: Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace.columns)
        for row in trace.rows:
            w.writerow([fmt(v) for v in row[:-1]] + [str(row[-1])])
    return path


def read_trace_csv(path: Path) -> dict[str, np.ndarray]:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(header)}


def sample_points(samples_per_cell: int) -> np.ndarray:
    """Equispaced reference points including both cell ends."""
    if samples_per_cell < 1:
        raise ValueError("need at least one sample per cell")
    if samples_per_cell == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, samples_per_cell)


def write_snapshot_csv(field: DGField, path: Path, samples_per_cell: int = 5) -> Path:
    xi = sample_points(samples_per_cell)
    values = field.at_nodes(xi)
    x = field.mesh.physical_points(xi)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_index", "x_sample", "value"])
        for j in range(field.mesh.N):
            for s in range(len(xi)):
                w.writerow([j, fmt(x[j, s]), fmt(values[j, s])])
    return path


def write_coefficients_json(fields: Mapping[str, DGField], path: Path, t: float) -> Path:
    first = next(iter(fields.values()))
    doc = {
        "t": t,
        "mesh": first.mesh.to_dict(),
        "degree": first.k,
        "layout": "row-major (cell, mode)",
        "fields": {name: f.coeffs.ravel().tolist() for name, f in fields.items()},
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1))
    return path


def read_coefficients_json(path: Path) -> tuple[float, dict[str, DGField]]:
    doc = json.loads(Path(path).read_text())
    mesh = Mesh1D(np.array(doc["mesh"]["edges"]))
    n = doc["degree"] + 1
    fields = {name: DGField(mesh, np.array(vals).reshape(mesh.N, n)) for name, vals in doc["fields"].items()}
    return doc["t"], fields
