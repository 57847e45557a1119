"""Compact steady-state thermal network built from a coupling matrix.

Temperature rise of cell n:  ΔT_n = Σ_m c_nm · R_th,m · P_m  (c_nn = 1).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .extraction import CouplingMatrix


class NonConvergenceError(RuntimeError):
    def __init__(self, msg: str, iterates):
        super().__init__(msg)
        self.iterates = iterates


@dataclass(frozen=True, eq=False)
class ThermalNetwork:
    coupling: CouplingMatrix
    t_amb: float = 300.0

    def __post_init__(self):
        if not self.t_amb > 0:
            raise ValueError("ambient temperature must be positive")

    @classmethod
    def from_matrix(cls, cm: CouplingMatrix) -> "ThermalNetwork":
        return cls(cm, cm.t_amb)

    @classmethod
    def uncoupled(cls, rth, t_amb: float = 300.0) -> "ThermalNetwork":
        rth = np.asarray(rth, float)
        return cls(CouplingMatrix(c=np.eye(len(rth)), rth=rth, t_amb=t_amb), t_amb)

    @property
    def dim(self) -> int:
        return self.coupling.dim

    @property
    def transfer(self) -> np.ndarray:
        """Matrix mapping power [W] to temperature rise [K]."""
        return self.coupling.c * self.coupling.rth[None, :]

    def without_coupling(self) -> "ThermalNetwork":
        return ThermalNetwork.uncoupled(self.coupling.rth, self.t_amb)


def cell_temperatures(net: ThermalNetwork, P) -> np.ndarray:
    P = np.asarray(P, float)
    if P.shape != (net.dim,):
        raise ValueError(f"power vector has shape {P.shape}, network has {net.dim} cells")
    if np.any(P < 0):
        raise ValueError("dissipated power must be non-negative")
    return net.coupling.c @ (net.coupling.rth * P)


def solve_electrothermal(net: ThermalNetwork, conductance: Callable[[np.ndarray], np.ndarray],
                         v, tol: float = 1e-6, damping: float = 0.5, max_iter: int = 200):
    """Damped successive substitution for ΔT = C·(R_th ∘ G(ΔT)·v²).

    ``conductance`` maps the ΔT vector to per-cell conductances and ``v`` is
    the per-cell voltage (scalar broadcasts).  The first pass evaluates the
    map from ΔT = 0 undamped; each later pass is damped.  Returns
    (ΔT, P, iterations).
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    v2 = np.broadcast_to(np.asarray(v, float) ** 2, (net.dim,))

    def step(dT):
        P = np.asarray(conductance(dT), float) * v2
        return cell_temperatures(net, P), P

    dT, P = step(np.zeros(net.dim))
    if not np.all(np.isfinite(dT)):
        raise NonConvergenceError("conductance map is not finite at ambient", (None, dT))
    prev = None
    for it in range(1, max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            new, P_new = step(dT)
        if not np.all(np.isfinite(new)):
            raise NonConvergenceError(f"electro-thermal iteration diverged at pass {it}",
                                      (prev, dT))
        if np.max(np.abs(new - dT), initial=0.0) < tol:
            return new, P_new, it
        prev = dT
        dT = dT + damping * (new - dT)
    raise NonConvergenceError(
        f"electro-thermal fixed point not reached in {max_iter} iterations", (prev, dT))


# ---------------------------------------------------------------------------
# netlist


def emit_netlist(net: ThermalNetwork, name: str = "XBAR_THERMAL", prune: float = 0.0) -> str:
    """Circuit-simulator subcircuit equivalent to the coupling-matrix equation.

    Ports, per cell n (1-based): te<n> external top terminal, td<n> device
    side of the current sense source, be<n> bottom terminal, tn<n> thermal
    node; then the ambient rail ``amb``.  Node voltages are temperature
    rises, 1 V == 1 K.  Per cell::

        VS<n>  te<n> td<n> 0                        current sense
        BP<n>  amb tn<n> I=V(td<n>,be<n>)*I(VS<n>)  dissipated power
        RTH<n> tn<n> x<n> <R_th>                    self-heating
        E<n>_<m> ... tn<m> x<m> <c_nm>               coupling chain to amb

    Each coupling source senses the self-heating drop across RTH<m>, so the
    rise at tn<n> is R_th,n·P_n + Σ c_nm·R_th,m·P_m.  Couplings below
    ``prune`` are dropped.
    """
    cm = net.coupling
    n = cm.dim
    ports = " ".join(f"te{k} td{k} be{k} tn{k}" for k in range(1, n + 1)) + " amb"
    out = ["* xbartherm thermal coupling network",
           f"* cells {n}, ambient {net.t_amb!r} K, node voltage 1 V == 1 K rise",
           f".SUBCKT {name} {ports}"]
    chains = {k: [m for m in range(1, n + 1)
                  if m != k and cm.c[k - 1, m - 1] > 0 and cm.c[k - 1, m - 1] >= prune]
              for k in range(1, n + 1)}
    low = {k: (f"x{k}" if chains[k] else "amb") for k in chains}
    for k in range(1, n + 1):
        out.append(f"* cell {k} {cm.labels[k - 1]}")
        out.append(f"VS{k} te{k} td{k} 0")
        out.append(f"BP{k} amb tn{k} I=V(td{k},be{k})*I(VS{k})")
        node = low[k]
        out.append(f"RTH{k} tn{k} {node} {float(cm.rth[k - 1])!r}")
        for i, m in enumerate(chains[k]):
            nxt = "amb" if i == len(chains[k]) - 1 else f"s{k}_{i + 1}"
            out.append(f"E{k}_{m} {node} {nxt} tn{m} {low[m]} {float(cm.c[k - 1, m - 1])!r}")
            node = nxt
    out.append(f".ENDS {name}")
    return "\n".join(out) + "\n"


_RTH = re.compile(r"^RTH(\d+)\s+\S+\s+\S+\s+(\S+)$")
_E = re.compile(r"^E(\d+)_(\d+)\s+\S+\s+\S+\s+\S+\s+\S+\s+(\S+)$")


def parse_netlist(text: str):
    """Recover (R_th vector, coupling matrix) from :func:`emit_netlist` output."""
    rth, gains = {}, {}
    for line in text.splitlines():
        if m := _RTH.match(line):
            rth[int(m.group(1))] = float(m.group(2))
        elif m := _E.match(line):
            gains[(int(m.group(1)), int(m.group(2)))] = float(m.group(3))
    n = len(rth)
    if sorted(rth) != list(range(1, n + 1)):
        raise ValueError("netlist R_th elements are not numbered 1..n")
    c = np.eye(n)
    for (a, b), g in gains.items():
        c[a - 1, b - 1] = g
    return np.array([rth[k] for k in range(1, n + 1)]), c
