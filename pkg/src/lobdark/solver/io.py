"""Binary container for solved grids and CSV slice export.

Container layout (all integers little-endian)::

    bytes 0..7    magic  b"LOBDGRID"
    bytes 8..11   uint32 header length H
    next H bytes  UTF-8 JSON header
    remainder     arrays, row-major little-endian float64, in header order

The header holds ``schema_version``, the grid spec, every axis coordinate
and, for each array, its ``name`` and ``shape``. Extra metadata (for example
solver diagnostics) goes under ``meta``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .grid import Axes, GridSpec, PolicyGrid, ValueGrid

__all__ = [
    "MAGIC",
    "SCHEMA_VERSION",
    "ContainerError",
    "write_container",
    "read_container",
    "save_solution",
    "load_solution",
    "AXIS_NAMES",
    "export_slice",
]

MAGIC = b"LOBDGRID"
SCHEMA_VERSION = 1
AXIS_NAMES = ("t", "x", "s_b", "delta")


class ContainerError(ValueError):
    pass


def write_container(path, grid: GridSpec, axes: Axes, arrays: dict, meta: Optional[dict] = None) -> None:
    names = list(arrays)
    header = {
        "schema_version": SCHEMA_VERSION,
        "grid": dataclasses.asdict(grid),
        "axes": {"t": axes.t.tolist(), "x": axes.x.tolist(), "s_b": axes.s.tolist(), "delta": axes.d.tolist()},
        "arrays": [{"name": n, "dtype": "<f8", "shape": list(np.shape(arrays[n]))} for n in names],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes(order="C"))


def read_container(path) -> tuple[dict, dict]:
    """Return ``(header, arrays)``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ContainerError(f"{path}: not a grid container")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ContainerError(f"{path}: unsupported schema version {header.get('schema_version')!r}")
    offset = 12 + hlen
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise ContainerError(f"{path}: truncated array {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(data):
        raise ContainerError(f"{path}: {len(data) - offset} trailing bytes")
    return header, arrays


def save_solution(path, value: ValueGrid, policy: PolicyGrid, meta: Optional[dict] = None) -> None:
    meta = dict(meta or {})
    meta.setdefault("control_cap", policy.control_cap)
    write_container(path, value.grid, value.axes, {"u": value.u, "nu": policy.nu, "eta": policy.eta}, meta)


def load_solution(path) -> tuple[ValueGrid, PolicyGrid, dict]:
    header, arrays = read_container(path)
    grid = GridSpec(**header["grid"])
    ax = header["axes"]
    axes = Axes(np.array(ax["t"]), np.array(ax["x"]), np.array(ax["s_b"]), np.array(ax["delta"]))
    meta = header.get("meta", {})
    value = ValueGrid(grid, axes, arrays["u"])
    policy = PolicyGrid(grid, axes, arrays["nu"], arrays["eta"], control_cap=float(meta.get("control_cap", 1.0)), meta=meta)
    return value, policy, meta


def _axis_values(axes: Axes) -> dict:
    return {"t": axes.t, "x": axes.x, "s_b": axes.s, "delta": axes.d}


def export_slice(fh, axes: Axes, fields: dict, fixed: dict) -> tuple[str, str]:
    """Write the 2-D surface left after fixing two axes.

    ``fixed`` maps two of ``t, x, s_b, delta`` to coordinates; each is
    snapped to the nearest node. ``fields`` maps column names to 4-D arrays.
    Returns the names of the two free axes, which form the first columns.
    """
    unknown = set(fixed) - set(AXIS_NAMES)
    if unknown or len(fixed) != 2:
        raise ValueError(f"fix exactly two of {AXIS_NAMES}, got {sorted(fixed)}")
    coords = _axis_values(axes)
    index = []
    for name in AXIS_NAMES:
        if name in fixed:
            index.append(int(np.argmin(np.abs(coords[name] - float(fixed[name])))))
        else:
            index.append(slice(None))
    free = [n for n in AXIS_NAMES if n not in fixed]
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(free + list(fields))
    surfaces = {k: np.asarray(v)[tuple(index)] for k, v in fields.items()}
    a, b = coords[free[0]], coords[free[1]]
    for i in range(len(a)):
        for j in range(len(b)):
            writer.writerow([repr(float(a[i])), repr(float(b[j]))] + [repr(float(s[i, j])) for s in surfaces.values()])
    return free[0], free[1]
