"""Thermal-resistance and thermal-coupling extraction from field solves.

One cell at a time is put in LRS (all others HRS), driven through its row
line with every other line grounded, and the steady temperature rise is
probed at every filament centre.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .field_solver import (BiasAssignment, ElectricalResult, heat_operator, solve_coupled,
                           solve_electrical)
from .geometry import CrossbarSpec, MeshPolicy, VoxelModel, build_model, cell_rc

DEFAULT_SWEEP = (0.5e-6, 1.0e-6, 1.5e-6, 2.0e-6, 2.45e-6)
V_PROBE = 0.3


class ConsistencyError(RuntimeError):
    """A solve produced a non-physical temperature rise."""


class MatrixFormatError(ValueError):
    def __init__(self, msg: str, line: int):
        super().__init__(f"line {line}: {msg}")
        self.line = line


def _num(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


@dataclass(frozen=True)
class RthResult:
    cell: int
    rth: float  # [K/W]
    residual: float  # max relative deviation of ΔT/P from the fitted slope
    powers: tuple
    rises: tuple
    label: str = ""


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    c: np.ndarray  # (i, i), c[n, m] = rise at n per unit self-rise of source m
    rth: np.ndarray  # (i,) self thermal resistance [K/W]
    labels: tuple = ()
    asymmetry: float = 0.0  # max |c_ab - c_ba| before symmetrization
    t_amb: float = 300.0
    raw: np.ndarray | None = field(default=None, repr=False)  # pre-symmetrization c
    rises: np.ndarray | None = field(default=None, repr=False)  # extraction ΔT data [K]

    def __post_init__(self):
        c = np.asarray(self.c, float)
        n = c.shape[0]
        if c.shape != (n, n) or np.shape(self.rth) != (n,):
            raise ValueError("coupling matrix must be square and match the R_th vector")
        if not np.all(np.diag(c) == 1.0):
            raise ValueError("coupling matrix diagonal must be exactly 1")
        off = c[~np.eye(n, dtype=bool)]
        if np.any(off < 0) or np.any(off > 1):
            raise ValueError("off-diagonal couplings must lie in [0, 1]")
        if np.any(np.asarray(self.rth) <= 0):
            raise ValueError("R_th must be positive")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"#{k}" for k in range(n)))

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    @classmethod
    def from_raw(cls, raw: np.ndarray, rth, labels=(), t_amb: float = 300.0, rises=None):
        raw = np.array(raw, float)
        np.fill_diagonal(raw, 1.0)
        asym = float(np.max(np.abs(raw - raw.T))) if raw.size else 0.0
        sym = 0.5 * (raw + raw.T)
        np.fill_diagonal(sym, 1.0)
        return cls(c=sym, rth=np.asarray(rth, float), labels=tuple(labels), asymmetry=asym,
                   t_amb=t_amb, raw=raw, rises=rises)

    # -- serialization ----------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell", *self.labels])
        for lab, row in zip(self.labels, self.c):
            w.writerow([lab, *(_num(v) for v in row)])
        return buf.getvalue()

    def dumps(self) -> str:
        """Compact text form read by :func:`loads`; floats round-trip exactly."""
        out = ["# xbartherm thermal coupling matrix", "format xbartherm-coupling 1",
               f"dim {self.dim}", f"t_amb {self.t_amb!r}", f"asymmetry {self.asymmetry!r}",
               "labels " + " ".join(self.labels),
               "rth " + " ".join(repr(float(v)) for v in self.rth)]
        for lab, row in zip(self.labels, self.c):
            out.append(f"c {lab} " + " ".join(repr(float(v)) for v in row))
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str) -> "CouplingMatrix":
        dim = None
        t_amb, asym, labels, rth, rows = 300.0, 0.0, None, None, []
        last = 0
        for ln, line in enumerate(text.splitlines(), start=1):
            last = ln
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, rest = line.partition(" ")
            parts = rest.split()
            try:
                if key == "format":
                    if parts != ["xbartherm-coupling", "1"]:
                        raise MatrixFormatError(f"unsupported format {rest!r}", ln)
                elif key == "dim":
                    dim = int(parts[0])
                    if dim < 1:
                        raise MatrixFormatError("dim must be positive", ln)
                elif key == "t_amb":
                    t_amb = float(parts[0])
                elif key == "asymmetry":
                    asym = float(parts[0])
                elif key == "labels":
                    labels = tuple(parts)
                elif key == "rth":
                    rth = [float(v) for v in parts]
                elif key == "c":
                    rows.append((ln, [float(v) for v in parts[1:]]))
                else:
                    raise MatrixFormatError(f"unknown key {key!r}", ln)
            except (ValueError, IndexError) as exc:
                if isinstance(exc, MatrixFormatError):
                    raise
                raise MatrixFormatError(f"cannot parse {key!r} entry: {exc}", ln) from None
        if dim is None:
            raise MatrixFormatError("missing 'dim'", last)
        if rth is None or len(rth) != dim:
            raise MatrixFormatError(f"'rth' must list {dim} values", last)
        if len(rows) != dim:
            raise MatrixFormatError(f"expected {dim} 'c' rows, found {len(rows)}", last)
        for ln, r in rows:
            if len(r) != dim:
                raise MatrixFormatError(f"row has {len(r)} values, expected {dim}", ln)
        try:
            return cls(c=np.array([r for _, r in rows]), rth=np.array(rth),
                       labels=labels or (), asymmetry=asym, t_amb=t_amb)
        except ValueError as exc:
            raise MatrixFormatError(str(exc), last) from None


def rth_to_csv(results) -> str:
    """One row per cell."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", "label", "R_th_K_per_W", "fit_residual", "points"])
    for r in results:
        w.writerow([r.cell, r.label, repr(r.rth), repr(r.residual), len(r.powers)])
    return buf.getvalue()


def rth_sweep_to_csv(results) -> str:
    """Sweep points, one row per (cell, power)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", "label", "P_diss_W", "dT_K"])
    for r in results:
        for p, t in zip(r.powers, r.rises):
            w.writerow([r.cell, r.label, repr(p), repr(t)])
    return buf.getvalue()


# ---------------------------------------------------------------------------


def _probe_rises(model: VoxelModel, dT: np.ndarray) -> np.ndarray:
    return np.array([dT[model.probes[rc]].mean() for rc in model.cell_order()])


def _excite(model: VoxelModel, n: int, tol: float) -> tuple[ElectricalResult, float]:
    """Electrical solve with only cell ``n`` in LRS at V_PROBE; returns (result, P_cell)."""
    r, c = cell_rc(model.spec, n)
    lrs = np.zeros(model.n_cells, bool)
    lrs[n] = True
    elec = solve_electrical(model, BiasAssignment.single_cell(model, r, c, V_PROBE), tol,
                            lrs=lrs)
    p = float(elec.cell_power(model)[n])
    if not p > 0:
        raise ConsistencyError(f"cell {n} dissipates no power under bias")
    return elec, p


def _bias_for_power(p_target: float, p_probe: float, v_cap: float) -> float:
    # Power is quadratic in bias for linear devices, so one secant step is exact.
    v = V_PROBE * math.sqrt(p_target / p_probe)
    if v > v_cap:
        raise ValueError(f"target power {p_target:g} W needs {v:.3g} V, above cap {v_cap} V")
    return v


def extract_rth(model: VoxelModel, n: int, power_sweep=DEFAULT_SWEEP, tol: float = 1e-8,
                v_cap: float = 5.0) -> RthResult:
    sweep = [float(p) for p in power_sweep]
    if len(sweep) < 3 or any(p <= 0 for p in sweep):
        raise ValueError("power sweep needs at least 3 strictly positive points")
    elec, p0 = _excite(model, n, tol)
    base = elec.voxel_power.ravel()
    op = heat_operator(model)
    probe = model.probes[model.cell_order()[n]]
    rises = []
    for p in sweep:
        v = _bias_for_power(p, p0, v_cap)
        dT, _ = op.solve(base * (v / V_PROBE) ** 2, tol)
        rises.append(float(dT[probe].mean()))
    P, T = np.array(sweep), np.array(rises)
    slope = float(P @ T / (P @ P))
    if not slope > 0:
        raise ConsistencyError(f"non-positive thermal resistance for cell {n}")
    resid = float(np.max(np.abs(T / P - slope)) / slope)
    r, c = cell_rc(model.spec, n)
    return RthResult(cell=n, rth=slope, residual=resid, powers=tuple(sweep), rises=tuple(rises),
                     label=f"({r},{c})")


def single_source_rises(model: VoxelModel, m: int, p0: float, tol: float = 1e-8) -> np.ndarray:
    """Probe ΔT at every cell with only cell ``m`` dissipating ``p0``."""
    elec, pm = _excite(model, m, tol)
    dT, _ = heat_operator(model).solve(elec.voxel_power.ravel() * (p0 / pm), tol)
    return _probe_rises(model, dT)


def extract_coupling_matrix(model: VoxelModel, p0: float = 2.45e-6, tol: float = 1e-8,
                            jobs: int = 1) -> CouplingMatrix:
    if not p0 > 0:
        raise ValueError("P0 must be positive")
    heat_operator(model).M  # build the shared preconditioner before fanning out
    n = model.n_cells

    def task(m):
        return single_source_rises(model, m, p0, tol)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            cols = list(ex.map(task, range(n)))
    else:
        cols = [task(m) for m in range(n)]
    rises = np.column_stack(cols)  # rises[k, m]: ΔT at k with source m
    self_rise = np.diag(rises).copy()
    if np.any(self_rise <= 0):
        raise ConsistencyError("a source cell shows no temperature rise")
    raw = rises / self_rise[None, :]
    labels = [f"({r},{c})" for r, c in model.cell_order()]
    return CouplingMatrix.from_raw(raw, self_rise / p0, labels, model.spec.t_amb, rises)


def all_lrs_rise(model: VoxelModel, p_cell: float = 2.45e-6, tol: float = 1e-8) -> np.ndarray:
    """Probe ΔT with every cell in LRS, read-biased so the mean cell power is ``p_cell``."""
    res = solve_coupled(model, BiasAssignment.read_all(model, V_PROBE), tol)
    scale = p_cell / float(np.mean(res.cell_power))
    dT, _ = heat_operator(model).solve(res.electrical.voxel_power.ravel() * scale, tol)
    return _probe_rises(model, dT)


@dataclass(frozen=True)
class SpacingPoint:
    sp: float
    tc_nearest: float  # coupling of (1,2) to source (1,1)
    max_dT: float  # self rise of the centre cell with it alone dissipating P0
    all_lrs_max_dT: float | None = None


def centre_cell(spec: CrossbarSpec) -> int:
    return ((spec.rows - 1) // 2) * spec.cols + (spec.cols - 1) // 2


def sweep_spacing(spec: CrossbarSpec, spacings, p0: float = 2.45e-6,
                  mesh: MeshPolicy | None = None, tol: float = 1e-8, jobs: int = 1,
                  all_lrs: bool = False) -> list[SpacingPoint]:
    sps = [float(s) for s in spacings]
    if len(set(sps)) != len(sps) or any(s <= 0 for s in sps):
        raise ValueError("spacings must be distinct and positive")
    if spec.cols < 2:
        raise ValueError("nearest-neighbour coupling needs at least two columns")
    k = centre_cell(spec)
    sources = sorted({0, 1, k})
    out = []
    for s in sps:
        model = build_model(spec.with_spacing(s), mesh)
        heat_operator(model).M

        def task(m):
            return single_source_rises(model, m, p0, tol)

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as ex:
                rises = dict(zip(sources, ex.map(task, sources)))
        else:
            rises = {m: task(m) for m in sources}
        # symmetrized entry, as in the full matrix
        tc = 0.5 * (rises[0][1] / rises[0][0] + rises[1][0] / rises[1][1])
        allr = float(all_lrs_rise(model, p0, tol).max()) if all_lrs else None
        out.append(SpacingPoint(sp=s, tc_nearest=float(tc), max_dT=float(rises[k][k]),
                                all_lrs_max_dT=allr))
    return out


def spacing_to_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sp_m", "tc_nearest", "max_dT_K", "all_lrs_max_dT_K"])
    for p in points:
        w.writerow([repr(p.sp), repr(p.tc_nearest), repr(p.max_dT),
                    "" if p.all_lrs_max_dT is None else repr(p.all_lrs_max_dT)])
    return buf.getvalue()
