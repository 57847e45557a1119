"""Field dumps and probe-trace CSV.

Dump layout: an ASCII header of ``key value`` lines ending with ``data``,
then little-endian float64 arrays in order x edges, y edges, z edges and
the voxel values (C order, x slowest).  No timestamps, so identical fields
give identical bytes.
"""

from __future__ import annotations

import csv
import io

import numpy as np

from .field_solver import UNITS, ScalarField
from .geometry import VoxelModel

MAGIC = "xbartherm-field 1"


def dumps_field(model: VoxelModel, field: ScalarField) -> bytes:
    nx, ny, nz = model.shape
    head = [MAGIC, f"quantity {field.quantity}", f"units {field.units}",
            f"shape {nx} {ny} {nz}", "order C", "dtype <f8", "data"]
    body = [np.ascontiguousarray(a, dtype="<f8").tobytes()
            for a in (model.x, model.y, model.z, field.values)]
    return ("\n".join(head) + "\n").encode("ascii") + b"".join(body)


def loads_field(blob: bytes):
    """Return (x, y, z, ScalarField) from :func:`dumps_field` output."""
    meta = {}
    pos = 0
    for k in range(16):
        end = blob.index(b"\n", pos)
        line = blob[pos:end].decode("ascii")
        pos = end + 1
        if k == 0:
            if line != MAGIC:
                raise ValueError(f"not a field dump (header {line!r})")
            continue
        if line == "data":
            break
        key, _, val = line.partition(" ")
        meta[key] = val
    else:
        raise ValueError("field dump header has no data marker")
    if meta.get("quantity") not in UNITS:
        raise ValueError(f"unknown quantity {meta.get('quantity')!r}")
    nx, ny, nz = (int(v) for v in meta["shape"].split())
    arr = np.frombuffer(blob, dtype="<f8", offset=pos)
    sizes = [nx + 1, ny + 1, nz + 1, nx * ny * nz]
    if arr.size != sum(sizes):
        raise ValueError(f"field dump holds {arr.size} values, header implies {sum(sizes)}")
    parts = np.split(arr, np.cumsum(sizes)[:-1])
    return (*parts[:3], ScalarField(parts[3].reshape(nx, ny, nz).copy(), meta["quantity"]))


def write_field(path, model: VoxelModel, field: ScalarField):
    with open(path, "wb") as fh:
        fh.write(dumps_field(model, field))


def read_field(path):
    with open(path, "rb") as fh:
        return loads_field(fh.read())


def probes_to_csv(times, traces: dict) -> str:
    """Columns time_s, probe_name, T_K; one row per (time, probe)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s", "probe_name", "T_K"])
    for k, t in enumerate(times):
        for name, tr in traces.items():
            w.writerow([repr(float(t)), name, repr(float(tr[k]))])
    return buf.getvalue()
