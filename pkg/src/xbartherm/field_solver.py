"""Finite-volume electrical and thermal solves on a VoxelModel.

Cell-centred scheme, harmonic-mean face conductances.  Joule power is
accumulated face by face as g·(ΔV)², half to each side, which is the
discrete counterpart of σ|∇V|² and makes the summed volumetric power equal
the terminal power Σ V_line·I_line.
"""

from __future__ import annotations

import time
import weakref
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .geometry import Region, VoxelModel
from .linalg import PRECONDITIONERS, SolverError, pcg

UNITS = {"temperature": "K", "potential": "V", "power_density": "W/m^3"}


@dataclass(frozen=True, eq=False)
class ScalarField:
    values: np.ndarray  # (nx, ny, nz)
    quantity: str

    def __post_init__(self):
        if self.quantity not in UNITS:
            raise ValueError(f"unknown quantity {self.quantity!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.quantity} field has non-finite entries")
        if self.quantity == "temperature" and self.values.min() < 0:
            raise ValueError("negative absolute temperature")

    @property
    def units(self) -> str:
        return UNITS[self.quantity]

    def at(self, flat_index) -> float:
        """Value at one voxel, or the mean over an index array (a probe)."""
        return float(np.mean(self.values.ravel()[flat_index]))


@dataclass(frozen=True)
class BiasAssignment:
    """Dirichlet potentials per electrode line; lines not listed float."""

    potentials: Mapping[str, float]

    @classmethod
    def single_cell(cls, model: VoxelModel, row: int, col: int, volts: float):
        """Drive row line ``row`` at ``volts``; every other line grounded."""
        pots = {name: 0.0 for name in model.terminals}
        pots[f"T{row}"] = volts
        return cls(pots)

    @classmethod
    def read_all(cls, model: VoxelModel, volts: float):
        """All rows at ``volts``, all columns grounded."""
        return cls({name: (volts if name.startswith("T") else 0.0) for name in model.terminals})


@dataclass
class SolveReport:
    iterations: int = 0
    residual: float = 0.0
    wall_time: float = 0.0
    history: list = field(default_factory=list)
    time_steps: int = 0
    t_s: float | None = None


# ---------------------------------------------------------------------------
# assembly


def _face_conductances(model: VoxelModel, k: np.ndarray):
    dx, dy, dz = model.widths()
    ax = dy[None, :, None] * dz[None, None, :]
    ay = dx[:, None, None] * dz[None, None, :]
    az = dx[:, None, None] * dy[None, :, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        hx = (dx / 2)[:, None, None] / k
        hy = (dy / 2)[None, :, None] / k
        hz = (dz / 2)[None, None, :] / k
        gx = ax / (hx[1:] + hx[:-1])
        gy = ay / (hy[:, 1:] + hy[:, :-1])
        gz = az / (hz[:, :, 1:] + hz[:, :, :-1])
    for g in (gx, gy, gz):
        g[~np.isfinite(g)] = 0.0
    return gx, gy, gz


def _boundary_conductance(model: VoxelModel, k: np.ndarray, idx: np.ndarray, axis: int):
    """Conductance from voxel centres to their own face normal to ``axis``."""
    dx, dy, dz = model.widths()
    i, j, l = np.unravel_index(idx, model.shape)
    kk = k.ravel()[idx]
    if axis == 0:
        return dy[j] * dz[l] * kk / (dx[i] / 2)
    if axis == 1:
        return dx[i] * dz[l] * kk / (dy[j] / 2)
    return dx[i] * dy[j] * kk / (dz[l] / 2)


def _laplacian(model: VoxelModel, k: np.ndarray):
    """Sparse ∇·(k∇) operator (positive definite sign) without boundary terms."""
    shape = model.shape
    n = model.n_voxels
    idx = np.arange(n).reshape(shape)
    rows, cols, vals = [], [], []
    for g, a, b in zip(
        _face_conductances(model, k),
        (idx[:-1], idx[:, :-1], idx[:, :, :-1]),
        (idx[1:], idx[:, 1:], idx[:, :, 1:]),
    ):
        g, a, b = g.ravel(), a.ravel(), b.ravel()
        keep = g > 0
        g, a, b = g[keep], a[keep], b[keep]
        rows += [a, b]
        cols += [b, a]
        vals += [-g, -g]
    off = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n))
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return off, diag


def _solve(A, b, tol, precond, x0=None, maxiter=None, M=None):
    t0 = time.perf_counter()
    if M is None:
        M = PRECONDITIONERS[precond](A)
    x, it, hist = pcg(A, b, M=M, x0=x0, tol=tol, maxiter=maxiter)
    return x, SolveReport(iterations=it, residual=hist[-1], wall_time=time.perf_counter() - t0,
                          history=hist)


# ---------------------------------------------------------------------------
# electrical


@dataclass(frozen=True, eq=False)
class ElectricalResult:
    V: ScalarField
    q: ScalarField
    currents: dict  # line -> current flowing into the array through that line [A]
    voxel_power: np.ndarray  # (nx, ny, nz) Joule power per voxel [W]
    report: SolveReport
    potentials: dict  # line -> applied potential (0 for floating lines)

    def cell_power(self, model: VoxelModel) -> np.ndarray:
        p = self.voxel_power.ravel()
        return np.array([p[model.cell_footprints[rc]].sum() for rc in model.cell_order()])

    @property
    def terminal_power(self) -> float:
        return float(sum(self.potentials[n] * i for n, i in self.currents.items()))


def sigma_field(model: VoxelModel, lrs: np.ndarray | None = None) -> np.ndarray:
    """Electrical conductivity per voxel.

    ``lrs`` is a per-cell boolean vector in cell_id order; HRS filaments
    conduct like the surrounding oxide.  House voxels and everything outside
    the crossbar box are insulators.
    """
    s = model.material_field("sigma")
    s[model.labels == Region.HOUSE] = 0.0
    s[~model.electrical_mask] = 0.0
    if lrs is not None:
        lrs = np.asarray(lrs, bool)
        if lrs.shape != (model.n_cells,):
            raise ValueError(f"lrs vector must have length {model.n_cells}")
        flat = s.reshape(-1)
        for on, rc in zip(lrs, model.cell_order()):
            if not on:
                flat[model.cells[rc]] = model.spec.materials.oxide.sigma
    return s


def solve_electrical(model: VoxelModel, bias: BiasAssignment, tol: float = 1e-8,
                     lrs=None, precond: str = "amg", sigma_scale=None,
                     maxiter: int | None = None) -> ElectricalResult:
    if tol <= 0:
        raise ValueError("tol must be positive")
    driven = {k: float(v) for k, v in bias.potentials.items() if v is not None}
    unknown = set(driven) - set(model.terminals)
    if unknown:
        raise ValueError(f"unknown electrode lines {sorted(unknown)}")
    if not driven:
        raise ValueError("all lines floating: at least one line must be driven")

    sigma = sigma_field(model, lrs)
    if sigma_scale is not None:
        sigma = sigma * sigma_scale
    active = sigma.ravel() > 0
    off, diag = _laplacian(model, sigma)
    rhs = np.zeros(model.n_voxels)
    bnd = []  # (indices, conductance, potential, line)
    for name, sides in model.terminals.items():
        if name not in driven:
            continue
        for idx, axis, _ in sides:
            g = _boundary_conductance(model, sigma, idx, axis)
            np.add.at(diag, idx, g)
            np.add.at(rhs, idx, g * driven[name])
            bnd.append((idx, g, driven[name], name))

    act = np.flatnonzero(active)
    A = (off + sp.diags(diag)).tocsr()[act][:, act]
    V = np.zeros(model.n_voxels)
    if np.any(rhs != 0):
        Vact, rep = _solve(A, rhs[act], tol, precond, maxiter=maxiter)
        V[act] = Vact
    else:
        rep = SolveReport()

    # Joule power per face, split between the two voxels in proportion to
    # their half-cell resistances (series model of the face conductance).
    shape = model.shape
    V3 = V.reshape(shape)
    P = np.zeros(shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        halves = [(d / 2).reshape(sh) / sigma for d, sh in
                  zip(model.widths(), ((-1, 1, 1), (1, -1, 1), (1, 1, -1)))]
    for axis, g in enumerate(_face_conductances(model, sigma)):
        pf = g * np.diff(V3, axis=axis) ** 2
        h = halves[axis]
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = h[tuple(lo)] / (h[tuple(lo)] + h[tuple(hi)])
        frac = np.where(np.isfinite(frac), frac, 0.5)
        P[tuple(lo)] += frac * pf
        P[tuple(hi)] += (1 - frac) * pf
    Pf = P.reshape(-1)
    currents = {name: 0.0 for name in model.terminals}
    for idx, g, v, name in bnd:
        dv = v - V[idx]
        currents[name] += float(np.sum(g * dv))
        np.add.at(Pf, idx, g * dv ** 2)

    q = P / model.volumes()
    res = ElectricalResult(V=ScalarField(V3, "potential"), q=ScalarField(q, "power_density"),
                           currents=currents, voxel_power=P, report=rep,
                           potentials={n: driven.get(n, 0.0) for n in model.terminals})
    return res


# ---------------------------------------------------------------------------
# thermal


WALLS = ("x-", "x+", "y-", "y+", "z-", "z+")


class HeatOperator:
    """Assembled steady heat operator for one model, with walls at a fixed T.

    Unknowns are ΔT = T − T_wall.  The preconditioner is built once and
    reused across right-hand sides.
    """

    def __init__(self, model: VoxelModel, precond: str = "amg", walls=WALLS):
        """``walls`` names the isothermal faces; the others are adiabatic."""
        unknown = set(walls) - set(WALLS)
        if unknown or not walls:
            raise ValueError(f"walls must be a non-empty subset of {WALLS}")
        self.model = model
        kappa = model.material_field("kappa")
        off, diag = _laplacian(model, kappa)
        idx = np.arange(model.n_voxels).reshape(model.shape)
        faces = {"x-": (0, idx[0]), "x+": (0, idx[-1]), "y-": (1, idx[:, 0]),
                 "y+": (1, idx[:, -1]), "z-": (2, idx[:, :, 0]), "z+": (2, idx[:, :, -1])}
        self.wall = np.zeros(model.n_voxels)
        for name in walls:
            axis, f = faces[name]
            f = f.ravel()
            np.add.at(self.wall, f, _boundary_conductance(model, kappa, f, axis))
        self.A = (off + sp.diags(diag + self.wall)).tocsr()
        self.capacity = (model.material_field("heat_capacity") * model.material_field("density")
                         * model.volumes()).ravel()
        self.precond = precond
        self._M = None

    @property
    def M(self):
        if self._M is None:
            self._M = PRECONDITIONERS[self.precond](self.A)
        return self._M

    def solve(self, power: np.ndarray, tol: float = 1e-8, x0=None, maxiter: int | None = None):
        """ΔT [K] for per-voxel heat input ``power`` [W]; flat arrays."""
        if np.any(power < 0):
            raise ValueError("heat source must be non-negative")
        if not np.any(power):
            return np.zeros(self.model.n_voxels), SolveReport()
        return _solve(self.A, power, tol, self.precond, x0=x0, maxiter=maxiter, M=self.M)


_OPERATORS: "weakref.WeakKeyDictionary[VoxelModel, dict]" = weakref.WeakKeyDictionary()


def heat_operator(model: VoxelModel, precond: str = "amg") -> HeatOperator:
    ops = _OPERATORS.setdefault(model, {})
    if precond not in ops:
        ops[precond] = HeatOperator(model, precond)
    return ops[precond]


def _as_power(model: VoxelModel, q) -> np.ndarray:
    qv = q.values if isinstance(q, ScalarField) else np.asarray(q, float)
    return (qv * model.volumes()).ravel()


def solve_heat_steady(model: VoxelModel, q, sink_T: float | None = None, tol: float = 1e-8,
                      precond: str = "amg", return_report: bool = False,
                      maxiter: int | None = None):
    sink_T = model.spec.t_amb if sink_T is None else sink_T
    if sink_T <= 0:
        raise ValueError("sink temperature must be positive")
    dT, rep = heat_operator(model, precond).solve(_as_power(model, q), tol, maxiter=maxiter)
    dT = np.maximum(dT, 0.0)  # maximum principle; clips sub-tolerance noise
    T = ScalarField(sink_T + dT.reshape(model.shape), "temperature")
    return (T, rep) if return_report else T


def solve_heat_transient(model: VoxelModel, q, sink_T: float | None = None,
                         dt0: float = 1e-9, growth: float = 1.2, dt_max: float = 2e-7,
                         t_end: float = 10e-6, probes: Mapping[str, int] | None = None,
                         tol: float = 1e-9, precond: str = "amg"):
    """Backward-Euler transient from T ≡ sink_T under constant source q.

    Returns (times, {probe: T(t)}, final ScalarField, SolveReport).  t_s is
    the first time every probe reaches 99 % of its steady rise.
    """
    sink_T = model.spec.t_amb if sink_T is None else sink_T
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    probes = dict(probes or {f"({r},{c})": model.probes[(r, c)] for r, c in model.cell_order()})
    op = heat_operator(model)
    power = _as_power(model, q)
    steady, _ = op.solve(power, tol=tol)
    names = list(probes)
    pidx = [np.atleast_1d(probes[n]) for n in names]
    target = np.array([steady[p].mean() for p in pidx])

    t0 = time.perf_counter()
    times = [0.0]
    trace = [np.zeros(len(names))]
    dT = np.zeros(model.n_voxels)
    t, dt, steps, iters = 0.0, dt0, 0, 0
    t_s = 0.0 if not np.any(target > 0) else None
    C = op.capacity
    # One preconditioner for every step: any fixed SPD M keeps PCG valid, and
    # the hierarchy for the largest step also serves the more diagonal
    # operators of the small early steps.
    M = PRECONDITIONERS[precond]((op.A + sp.diags(C / dt_max)).tocsr())
    while t < t_end * (1 - 1e-12):
        dt = min(dt, t_end - t)
        A = (op.A + sp.diags(C / dt)).tocsr()
        dT, it, _ = pcg(A, C / dt * dT + power, M=M, x0=dT, tol=tol)
        iters += it
        t += dt
        steps += 1
        probe = np.array([dT[p].mean() for p in pidx])
        if np.any(probe > 1.05 * target + 1e-9):
            raise SolverError(f"unstable step at t={t:.3e}s: probe overshoots steady "
                              f"solution by >5 %; reduce dt")
        if t_s is None and np.all(probe >= 0.99 * target):
            t_s = t
        times.append(t)
        trace.append(probe.copy())
        dt = min(dt * growth, dt_max)
    trace = np.array(trace)
    rep = SolveReport(iterations=iters, wall_time=time.perf_counter() - t0, time_steps=steps,
                      t_s=t_s)
    T = ScalarField(sink_T + np.maximum(dT, 0).reshape(model.shape), "temperature")
    return (np.array(times), {n: sink_T + trace[:, k] for k, n in enumerate(names)}, T, rep)


# ---------------------------------------------------------------------------
# coupled


@dataclass(frozen=True, eq=False)
class CoupledResult:
    V: ScalarField
    T: ScalarField
    cell_power: np.ndarray
    electrical: ElectricalResult
    report: SolveReport

    def cell_temperatures(self, model: VoxelModel) -> np.ndarray:
        return np.array([self.T.at(model.probes[rc]) for rc in model.cell_order()])


def solve_coupled(model: VoxelModel, bias: BiasAssignment, tol: float = 1e-8, lrs=None,
                  sigma_update: Callable | None = None, max_iter: int = 50,
                  precond: str = "amg", pcg_maxiter: int | None = None) -> CoupledResult:
    """Self-consistent electrical/thermal solve.

    ``sigma_update(model, T)`` may return per-voxel conductivity multipliers
    for a temperature-dependent σ; without it the electrical solve has no
    feedback path and the loop stops after one pass.  ``pcg_maxiter`` caps
    each linear solve (None: size-based default).
    """
    t0 = time.perf_counter()
    scale = None
    prev_P, prev_res = None, []
    for it in range(1, max_iter + 1):
        elec = solve_electrical(model, bias, tol, lrs=lrs, precond=precond, sigma_scale=scale,
                                maxiter=pcg_maxiter)
        P = elec.cell_power(model)
        T = solve_heat_steady(model, elec.q, tol=tol, precond=precond, maxiter=pcg_maxiter)
        if sigma_update is None:
            break
        if prev_P is not None:
            denom = np.where(np.abs(P) > 0, np.abs(P), 1.0)
            res = float(np.max(np.abs(P - prev_P) / denom))
            prev_res.append(res)
            if res < tol:
                break
            if len(prev_res) >= 3 and prev_res[-1] > prev_res[-2] > prev_res[-3]:
                raise SolverError("coupled iteration diverging; apply damping to the "
                                  "conductivity update", prev_res)
        prev_P = P
        scale = sigma_update(model, T)
    else:
        raise SolverError(f"coupled iteration did not converge in {max_iter} passes", prev_res)
    rep = SolveReport(iterations=it, residual=prev_res[-1] if prev_res else 0.0,
                      wall_time=time.perf_counter() - t0, history=prev_res)
    return CoupledResult(V=elec.V, T=T, cell_power=P, electrical=elec, report=rep)

