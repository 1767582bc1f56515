"""Artifact serialization: manifests, summaries, boundary-trace CSVs, plot CSVs."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .forward import BoundaryTrace


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        if np.iscomplexobj(o):
            return {"re": o.real.tolist(), "im": o.imag.tolist()}
        return o.tolist()
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    raise TypeError(f"not JSON serializable: {type(o)}")


def write_json(data: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def read_json(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_boundary_trace_csv(trace: BoundaryTrace, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "x3", "n1", "n2", "n3",
                    "re_t1", "im_t1", "re_t2", "im_t2", "re_t3", "im_t3"])
        for p, nv, val in zip(trace.points, trace.normals, trace.values):
            w.writerow([f"{p[0]:.17g}", f"{p[1]:.17g}", f"{p[2]:.17g}",
                        f"{nv[0]:.17g}", f"{nv[1]:.17g}", f"{nv[2]:.17g}",
                        f"{val[0].real:.17g}", f"{val[0].imag:.17g}",
                        f"{val[1].real:.17g}", f"{val[1].imag:.17g}",
                        f"{val[2].real:.17g}", f"{val[2].imag:.17g}"])
    return path


def write_rows_csv(path: str | Path, header: list[str], rows: list,
                   footer_comment: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
        if footer_comment:
            fh.write(f"# {footer_comment}\n")
    return path


def write_slice_csv(values: np.ndarray, grid_axis: np.ndarray, plane: str,
                    index: int, path: str | Path, name: str) -> Path:
    """One coordinate-plane extract of a (n,n,n) array as long-form CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if plane == "x3":
        sl = values[:, :, index]
        rows_ax, cols_ax = "x1", "x2"
    elif plane == "x2":
        sl = values[:, index, :]
        rows_ax, cols_ax = "x1", "x3"
    else:
        sl = values[index, :, :]
        rows_ax, cols_ax = "x2", "x3"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([rows_ax, cols_ax, f"re_{name}", f"im_{name}"])
        for i, a in enumerate(grid_axis):
            for j, b in enumerate(grid_axis):
                v = sl[i, j]
                w.writerow([f"{a:.17g}", f"{b:.17g}",
                            f"{np.real(v):.17g}", f"{np.imag(v):.17g}"])
    return path
