"""Passive-crossbar VMM reads with thermal coupling and read-disturb drift.

The physics-based RRAM compact model is replaced by a minimal surrogate: each
read pulse multiplies a cell's conductance by

    1 + alpha · (v_read / 0.3 V)^beta · exp(-E_a / (k_B · T))

so drift is monotone in temperature and feeds back through Joule heating.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .thermal_network import ThermalNetwork, solve_electrothermal

K_B = 8.617333262e-5  # eV/K
G_LRS = 27.5e-6  # S, analytic filament conductance at the reference parameters
HRS_RATIO = 1e-3
V_REF = 0.3


class State(Enum):
    LRS = "LRS"
    HRS = "HRS"


@dataclass
class CellState:
    state: State
    G: float
    G_prog: float
    T: float

    def __post_init__(self):
        if not (self.G > 0 and self.G_prog > 0):
            raise ValueError("conductances must be positive")


@dataclass(frozen=True)
class DriftParams:
    alpha: float
    e_a: float = 0.6  # eV
    beta: float = 2.0
    k_b: float = K_B

    def __post_init__(self):
        if self.alpha < 0 or self.e_a <= 0 or self.beta < 0:
            raise ValueError("need alpha >= 0, e_a > 0, beta >= 0")


# From scripts/calibrate_drift.py against data/coupling_3x3_sp80nm.txt:
# +23 % all-LRS degradation over the uncoupled run at 2e5 cycles.
DEFAULT_DRIFT = DriftParams(alpha=28.146, e_a=0.6, beta=2.0)


PRESETS = ("ALL_LRS", "CASE_A", "CASE_B")


@dataclass(frozen=True)
class InferencePattern:
    lrs: np.ndarray  # (rows, cols) bool
    name: str = "custom"

    @classmethod
    def preset(cls, name: str, rows: int = 3, cols: int = 3, ref_col: int = 2):
        """ALL_LRS; CASE_A = LRS down the reference column; CASE_B = LRS on the diagonal."""
        key = name.upper()
        if key == "ALL_LRS":
            m = np.ones((rows, cols), bool)
        elif key == "CASE_A":
            m = np.zeros((rows, cols), bool)
            m[:, ref_col - 1] = True
        elif key == "CASE_B":
            m = np.zeros((rows, cols), bool)
            for k in range(min(rows, cols)):
                m[k, k] = True
        else:
            raise ValueError(f"unknown pattern {name!r}; choose from {PRESETS}")
        return cls(m, key)

    @property
    def shape(self):
        return self.lrs.shape


# ---------------------------------------------------------------------------
# read currents


def ideal_currents(G, v) -> np.ndarray:
    """Column currents I_j = Σ_i G_ij v_i."""
    G = np.asarray(G, float)
    v = np.asarray(v, float)
    if G.ndim != 2 or v.shape != (G.shape[0],):
        raise ValueError("v must have one entry per row of G")
    return v @ G


def solve_array(G, v, line_resistance: float = 0.0) -> np.ndarray:
    """Column currents of the resistive crossbar by nodal analysis.

    Rows are driven at their left end through one segment; columns are
    sensed to ground at their bottom end through one segment; every pair of
    adjacent crosspoints on a line is joined by one segment.
    """
    G = np.asarray(G, float)
    v = np.asarray(v, float)
    if line_resistance < 0:
        raise ValueError("line resistance must be non-negative")
    if line_resistance == 0:
        return ideal_currents(G, v)
    rows, cols = G.shape
    g = 1.0 / line_resistance
    n = 2 * rows * cols
    ridx = np.arange(rows * cols).reshape(rows, cols)  # row-line node at (i, j)
    cidx = ridx + rows * cols  # column-line node at (i, j)
    A = sp.lil_matrix((n, n))
    b = np.zeros(n)

    def stamp(a, c, cond):
        A[a, a] += cond
        A[c, c] += cond
        A[a, c] -= cond
        A[c, a] -= cond

    for i in range(rows):
        for j in range(cols):
            stamp(ridx[i, j], cidx[i, j], G[i, j])
            if j + 1 < cols:
                stamp(ridx[i, j], ridx[i, j + 1], g)
            if i + 1 < rows:
                stamp(cidx[i, j], cidx[i + 1, j], g)
        A[ridx[i, 0], ridx[i, 0]] += g
        b[ridx[i, 0]] += g * v[i]
    for j in range(cols):
        A[cidx[-1, j], cidx[-1, j]] += g
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            x = spla.spsolve(A.tocsc(), b)
        except (RuntimeError, spla.MatrixRankWarning) as exc:
            raise np.linalg.LinAlgError(f"crossbar network is singular: {exc}") from None
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("crossbar network is singular")
    return g * x[cidx[-1, :]]


def vmm_accuracy(I_actual, I_ideal):
    """Percent accuracy per column; NaN where I_actual + I_ideal == 0."""
    a = np.asarray(I_actual, float)
    b = np.asarray(I_ideal, float)
    den = a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = (1.0 - np.abs((a - b) / den)) * 100.0
    return np.where(den == 0, np.nan, acc)


def drift_percent(G, G_prog):
    G_prog = np.asarray(G_prog, float)
    if np.any(G_prog <= 0):
        raise ValueError("programmed conductance must be positive")
    return (G_prog - np.asarray(G, float)) / G_prog * 100.0


def drift_factor(T, v_read, params: DriftParams):
    return 1.0 + params.alpha * (abs(v_read) / V_REF) ** params.beta * np.exp(
        -params.e_a / (params.k_b * np.asarray(T, float)))


def drift_step(cell: CellState, v_read: float, params: DriftParams) -> float:
    return float(cell.G * drift_factor(cell.T, v_read, params))


# ---------------------------------------------------------------------------
# inference


@dataclass
class InferenceTrace:
    pattern: str
    ref_col: int
    cycles: list = field(default_factory=list)
    I_actual: list = field(default_factory=list)  # per logged cycle, (cols,)
    I_ideal: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)  # per logged cycle, (cols,) percent
    drift: list = field(default_factory=list)  # per logged cycle, (rows*cols,) percent
    T: list = field(default_factory=list)  # per logged cycle, (rows*cols,) K
    runaway: bool = False
    undefined_accuracy: bool = False

    def ref_accuracy(self) -> np.ndarray:
        return np.array([a[self.ref_col - 1] for a in self.accuracy])

    def at(self, cycle: int) -> int:
        return self.cycles.index(cycle)

    def to_csv(self) -> str:
        ncell = len(self.drift[0]) if self.drift else 0
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cycle", "column_id", "I_actual_A", "I_ideal_A", "accuracy_pct"]
                   + [f"drift_pct_{k}" for k in range(ncell)]
                   + [f"T_K_{k}" for k in range(ncell)])
        for c, ia, ii, acc, d, t in zip(self.cycles, self.I_actual, self.I_ideal,
                                        self.accuracy, self.drift, self.T):
            for j in range(len(ia)):
                w.writerow([c, j + 1, repr(float(ia[j])), repr(float(ii[j])),
                            repr(float(acc[j]))] + [repr(float(x)) for x in d]
                           + [repr(float(x)) for x in t])
        return buf.getvalue()


def log_cycles(n_cycles: int, policy="decade") -> set:
    """Cycles to record: 1, 2, 5 per decade plus the last ('decade'), or every cycle ('all')."""
    if policy == "all":
        return set(range(1, n_cycles + 1))
    if isinstance(policy, (list, tuple, set)):
        return {int(c) for c in policy if 1 <= int(c) <= n_cycles} | {n_cycles}
    out = {n_cycles}
    d = 1
    while d <= n_cycles:
        out.update(k * d for k in (1, 2, 5) if k * d <= n_cycles)
        d *= 10
    return out


def run_inference(pattern: InferencePattern, net: ThermalNetwork, v_read: float = 0.3,
                  pulse_width: float = 100e-6, n_cycles: int = 200_000,
                  drift: DriftParams = DEFAULT_DRIFT, log_policy="decade", ref_col: int = 2,
                  t_cap: float = 1500.0, g_lrs: float = G_LRS, hrs_ratio: float = HRS_RATIO,
                  line_resistance: float = 0.0) -> InferenceTrace:
    """Repeated VMM reads with every row at ``v_read`` and columns grounded.

    Each cycle reads the column currents with the present conductances, sets
    the cell temperatures to the steady thermal-network solution (the pulse
    is assumed long compared with the thermal settling time, so
    ``pulse_width`` only documents that assumption) and then applies one
    drift step to every cell, HRS included.
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    rows, cols = pattern.shape
    if net.dim != rows * cols:
        raise ValueError(f"network has {net.dim} cells, pattern has {rows * cols}")
    if not 1 <= ref_col <= cols:
        raise ValueError("reference column out of range")
    G_prog = np.where(pattern.lrs, g_lrs, g_lrs * hrs_ratio).astype(float)
    G = G_prog.copy()
    v = np.full(rows, float(v_read))
    I_ideal = ideal_currents(G_prog, v) if line_resistance == 0 else \
        solve_array(G_prog, v, line_resistance)
    transfer = net.transfer
    v2 = v_read ** 2
    pref = drift.alpha * (abs(v_read) / V_REF) ** drift.beta
    ea_k = drift.e_a / drift.k_b
    logged = log_cycles(n_cycles, log_policy)
    trace = InferenceTrace(pattern=pattern.name, ref_col=ref_col)
    for cycle in range(1, n_cycles + 1):
        g = G.ravel()
        # Conductance is frozen during a pulse, so the electro-thermal fixed
        # point is reached in one pass; this is the inlined form of
        # solve_electrothermal for the per-cycle hot loop.
        T = net.t_amb + transfer @ (g * v2)
        if cycle in logged or T.max() > t_cap:
            I_act = ideal_currents(G, v) if line_resistance == 0 else \
                solve_array(G, v, line_resistance)
            acc = vmm_accuracy(I_act, I_ideal)
            trace.undefined_accuracy |= bool(np.any(np.isnan(acc)))
            trace.cycles.append(cycle)
            trace.I_actual.append(I_act)
            trace.I_ideal.append(I_ideal)
            trace.accuracy.append(acc)
            trace.drift.append(drift_percent(g, G_prog.ravel()))
            trace.T.append(T)
            if T.max() > t_cap:
                trace.runaway = True
                break
        if pref:
            G = (g * (1.0 + pref * np.exp(-ea_k / T))).reshape(rows, cols)
    return trace


def cell_temperatures_for(net: ThermalNetwork, G, v_read: float, tol: float = 1e-6):
    """Steady cell temperatures [K] for frozen conductances via the fixed-point solver."""
    g = np.asarray(G, float).ravel()
    dT, _, _ = solve_electrothermal(net, lambda _dT: g, v_read, tol=tol)
    return net.t_amb + dT


def degradation(trace: InferenceTrace, cycle: int) -> float:
    """100 − reference-column accuracy at ``cycle``."""
    return 100.0 - float(trace.accuracy[trace.at(cycle)][trace.ref_col - 1])


def additional_degradation(pattern: InferencePattern, net: ThermalNetwork, cycle: int,
                           **kw) -> float:
    """Degradation with coupling minus degradation of the same run without coupling."""
    kw = {**kw, "n_cycles": cycle, "log_policy": [cycle]}
    on = run_inference(pattern, net, **kw)
    off = run_inference(pattern, net.without_coupling(), **kw)
    return degradation(on, cycle) - degradation(off, cycle)


def calibrate_drift(net: ThermalNetwork, target: float = 23.0, cycle: int = 200_000,
                    e_a: float = 0.6, beta: float = 2.0, pattern: str = "ALL_LRS",
                    rtol: float = 1e-3, **kw) -> DriftParams:
    """Find alpha so the all-LRS additional degradation at ``cycle`` equals ``target``.

    Bisection in log(alpha); the additional degradation grows monotonically
    with alpha until runaway.
    """
    rows = cols = int(round(math.sqrt(net.dim)))
    pat = InferencePattern.preset(pattern, rows, cols)

    def f(log_a):
        p = DriftParams(alpha=math.exp(log_a), e_a=e_a, beta=beta)
        try:
            return additional_degradation(pat, net, cycle, drift=p, **kw) - target
        except (ValueError, IndexError):
            return float("inf")

    lo, hi = math.log(1e-6), math.log(1e12)
    flo = f(lo)
    if flo > 0:
        raise ValueError("target degradation reached even at negligible drift")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm != fm or fm > 0:  # nan (runaway) or overshoot
            hi = mid
        else:
            lo = mid
        if hi - lo < rtol:
            break
    return DriftParams(alpha=float(f"{math.exp(0.5 * (lo + hi)):.6g}"), e_a=e_a, beta=beta)

