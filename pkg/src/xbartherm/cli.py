"""Command-line front end: ``xbartherm <subcommand> [--config FILE] [--out DIR] ...``.

Exit status: 0 success, 2 configuration or input error, 3 solver
non-convergence, 4 thermal runaway during inference, 5 mesh over budget.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .crossbar_circuit import InferencePattern, degradation, run_inference
from .extraction import (ConsistencyError, CouplingMatrix, MatrixFormatError, extract_coupling_matrix,
                         extract_rth, rth_sweep_to_csv, rth_to_csv, spacing_to_csv,
                         sweep_spacing)
from .field_solver import BiasAssignment, solve_coupled, solve_heat_transient
from .fieldio import probes_to_csv, write_field
from .geometry import ResourceError, build_model, cell_id
from .linalg import SolverError
from .thermal_network import NonConvergenceError, ThermalNetwork, emit_netlist

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_RUNAWAY = 4
EXIT_RESOURCE = 5

PACKAGED_COUPLING = "coupling_3x3_sp80nm.txt"


def _write(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _log(msg: str):
    print(msg, file=sys.stderr)


def _probe_name(rc) -> str:
    return f"({rc[0]},{rc[1]})"


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve_field(cfg: cfgmod.RunConfig, out: Path, jobs: int = 1) -> int:
    spec, fs = cfg.crossbar, cfg.field
    model = build_model(spec, cfg.mesh)
    _log(f"model: {model.shape} = {model.n_voxels} voxels")
    if fs.all_lrs:
        lrs = np.ones(model.n_cells, bool)
        bias = BiasAssignment.read_all(model, fs.v_bias)
    else:
        r, c = fs.source
        lrs = np.zeros(model.n_cells, bool)
        lrs[cell_id(spec, r, c)] = True
        bias = BiasAssignment.single_cell(model, r, c, fs.v_bias)
    t0 = time.perf_counter()
    res = solve_coupled(model, bias, cfg.solver.tol, lrs=lrs, precond=cfg.solver.precond,
                        pcg_maxiter=cfg.solver.max_iter)
    _log(f"steady solve: {time.perf_counter() - t0:.2f} s")
    write_field(out / "field_V.xbf", model, res.V)
    write_field(out / "field_T.xbf", model, res.T)
    write_field(out / "field_q.xbf", model, res.electrical.q)

    steady = res.cell_temperatures(model)
    names = [_probe_name(rc) for rc in model.cell_order()]
    times, traces = [], {n: [] for n in names}
    t_s = None
    if fs.transient:
        times, tr, _, rep = solve_heat_transient(
            model, res.electrical.q, dt0=fs.dt0, growth=fs.growth, dt_max=fs.dt_max,
            t_end=fs.t_end, tol=min(cfg.solver.tol, 1e-9))
        traces = {n: list(tr[n]) for n in names}
        times = list(times)
        t_s = rep.t_s
    times.append(math.inf)
    for n, t in zip(names, steady):
        traces[n].append(t)
    _write(out / "probes.csv", probes_to_csv(times, traces))

    rep = res.electrical.report
    lines = ["# xbartherm solve-field summary",
             f"voxels {model.n_voxels}",
             f"electrical_iterations {rep.iterations}",
             f"electrical_residual {float(rep.residual)!r}",
             f"coupled_passes {res.report.iterations}",
             f"terminal_power_W {res.electrical.terminal_power!r}",
             f"settling_time_s {'' if t_s is None else repr(t_s)}"]
    lines += [f"cell {n} P_W {float(p)!r} T_K {float(t)!r}"
              for n, p, t in zip(names, res.cell_power, steady)]
    _write(out / "report.txt", "\n".join(lines) + "\n")
    print(f"max probe T {steady.max():.2f} K, terminal power {res.electrical.terminal_power:.4g} W")
    return EXIT_OK


def cmd_extract(cfg: cfgmod.RunConfig, out: Path, jobs: int = 1) -> int:
    model = build_model(cfg.crossbar, cfg.mesh)
    _log(f"model: {model.shape} = {model.n_voxels} voxels")
    tol, ex = cfg.solver.tol, cfg.extraction
    results = [extract_rth(model, n, ex.power_sweep, tol) for n in range(model.n_cells)]
    _write(out / "rth.csv", rth_to_csv(results))
    _write(out / "rth_sweep.csv", rth_sweep_to_csv(results))
    cm = extract_coupling_matrix(model, ex.p0, tol, jobs)
    _write(out / "coupling.csv", cm.to_csv())
    _write(out / "coupling.txt", cm.dumps())
    spread = max(r.residual for r in results)
    print(f"R_th range {min(r.rth for r in results):.4g}..{max(r.rth for r in results):.4g} K/W, "
          f"max sweep deviation {spread:.2e}")
    print(f"coupling asymmetry before symmetrization: {cm.asymmetry:.4f}")
    return EXIT_OK


def _load_coupling(path) -> CouplingMatrix:
    if path is None:
        text = resources.files("xbartherm.data").joinpath(PACKAGED_COUPLING).read_text("utf-8")
    else:
        try:
            text = Path(path).read_text("utf-8")
        except OSError as exc:
            raise cfgmod.ConfigError(f"cannot read coupling file {path}: {exc}") from None
    return CouplingMatrix.loads(text)


def cmd_emit_netlist(cfg: cfgmod.RunConfig, out: Path, coupling=None) -> int:
    if coupling is None:
        coupling = out / "coupling.txt"
    cm = _load_coupling(coupling)
    text = emit_netlist(ThermalNetwork.from_matrix(cm), cfg.netlist.name, cfg.netlist.prune)
    _write(out / "netlist.cir", text)
    n_e = sum(1 for ln in text.splitlines() if ln.startswith("E"))
    print(f"netlist: {cm.dim} cells, {n_e} coupling sources")
    return EXIT_OK


def cmd_infer(cfg: cfgmod.RunConfig, out: Path, coupling=None, gnuplot: bool = False) -> int:
    inf, spec = cfg.inference, cfg.crossbar
    cm = _load_coupling(coupling if coupling is not None else inf.coupling_file)
    if cm.dim != spec.rows * spec.cols:
        raise cfgmod.ConfigError(f"coupling matrix has {cm.dim} cells but the crossbar is "
                                 f"{spec.rows}x{spec.cols}")
    net = ThermalNetwork.from_matrix(cm)
    kw = dict(v_read=inf.v_read, pulse_width=inf.pulse_width, n_cycles=inf.cycles,
              drift=inf.drift, ref_col=inf.ref_col, t_cap=inf.t_cap,
              line_resistance=inf.line_resistance)
    rows = [["pattern", "coupling", "final_cycle", "ref_accuracy_pct", "degradation_pct",
             "additional_degradation_pct", "max_T_K", "runaway"]]
    runaway = False
    for name in inf.patterns:
        pat = InferencePattern.preset(name, spec.rows, spec.cols, inf.ref_col)
        on = run_inference(pat, net, **kw)
        _write(out / f"inference_trace_{name}.csv", on.to_csv())
        off = None
        if inf.compare_uncoupled:
            off = run_inference(pat, net.without_coupling(), **kw)
            _write(out / f"inference_trace_{name}_uncoupled.csv", off.to_csv())
        for tag, tr in (("on", on), ("off", off)):
            if tr is None:
                continue
            last = tr.cycles[-1]
            extra = ""
            if tag == "on" and off is not None and off.cycles[-1] == last:
                extra = repr(degradation(on, last) - degradation(off, last))
            rows.append([name, tag, str(last), repr(float(tr.ref_accuracy()[-1])),
                         repr(degradation(tr, last)), extra,
                         repr(float(np.max(tr.T[-1]))), str(tr.runaway).lower()])
            runaway |= tr.runaway
    _write(out / "summary.csv", "\n".join(",".join(r) for r in rows) + "\n")
    if gnuplot:
        _write(out / "inference.gp", _gnuplot_inference(inf.patterns, inf.ref_col,
                                                        inf.compare_uncoupled, spec.cols))
    width = max(len(r[0]) for r in rows)
    for r in rows:
        acc = r[3] if r[3] == "ref_accuracy_pct" else f"{float(r[3]):.3f}"
        add = r[5] if not r[5] or r[5].startswith("add") else f"{float(r[5]):.3f}"
        print(f"{r[0]:<{width}}  {r[1]:<8} {r[2]:>11} {acc:>17} {add:>27}")
    if runaway:
        _log("thermal runaway: cell temperature exceeded the configured cap")
        return EXIT_RUNAWAY
    return EXIT_OK


def _gnuplot_inference(patterns, ref_col: int, uncoupled: bool, cols: int) -> str:
    plots = []
    for p in patterns:
        plots.append(f"'inference_trace_{p}.csv' every {cols}::{ref_col - 1} "
                     f"using 1:5 with linespoints title '{p}'")
        if uncoupled:
            plots.append(f"'inference_trace_{p}_uncoupled.csv' every {cols}::{ref_col - 1} "
                         f"using 1:5 with lines dashtype 2 title '{p} (no coupling)'")
    return ("set datafile separator ','\nset key autotitle columnhead\nset logscale x\n"
            "set xlabel 'inference cycle'\nset ylabel 'accuracy [%]'\n"
            "plot " + ", \\\n     ".join(plots) + "\n")


def cmd_sweep_spacing(cfg: cfgmod.RunConfig, out: Path, jobs: int = 1,
                      gnuplot: bool = False) -> int:
    ex = cfg.extraction
    pts = sweep_spacing(cfg.crossbar, ex.spacings, ex.p0, cfg.mesh, cfg.solver.tol, jobs,
                        all_lrs=ex.all_lrs)
    _write(out / "spacing.csv", spacing_to_csv(pts))
    if gnuplot:
        _write(out / "spacing.gp",
               "set datafile separator ','\nset key autotitle columnhead\n"
               "set xlabel 'spacing [nm]'\nset ylabel 'nearest-neighbour coupling'\n"
               "set y2label 'max dT [K]'\nset y2tics\n"
               "plot 'spacing.csv' using ($1*1e9):2 with linespoints, \\\n"
               "     '' using ($1*1e9):3 axes x1y2 with linespoints\n")
    for p in pts:
        allr = "" if p.all_lrs_max_dT is None else f"  all-LRS max dT {p.all_lrs_max_dT:.2f} K"
        print(f"sp {p.sp * 1e9:6.1f} nm  TC {p.tc_nearest:.4f}  max dT {p.max_dT:.2f} K{allr}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="YAML run configuration (defaults if omitted)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--jobs", type=int, help="worker threads for independent solves")
    common.add_argument("--quick", action="store_true", help="halve the mesh resolution")
    common.add_argument("--tol", type=float, help="relative residual tolerance")

    p = argparse.ArgumentParser(prog="xbartherm", parents=[common],
                                description="Thermal crosstalk analysis for RRAM crossbars.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve-field", parents=[common], help="coupled field solve with dumps")
    sub.add_parser("extract", parents=[common], help="R_th sweep and coupling matrix")
    e = sub.add_parser("emit-netlist", parents=[common], help="compact network netlist")
    e.add_argument("--coupling", help="coupling matrix file (default <out>/coupling.txt)")
    i = sub.add_parser("infer", parents=[common], help="VMM inference drift study")
    i.add_argument("--coupling", help="coupling matrix file (default: packaged 3x3, sp=80 nm)")
    i.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script")
    s = sub.add_parser("sweep-spacing", parents=[common], help="coupling versus spacing")
    s.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script")
    return p


def _resolve(path, base: Path | None):
    if path is None or base is None or os.path.isabs(path):
        return path
    return str(base / path)


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    a = vars(args)
    jobs = a.get("jobs", 1)
    try:
        if jobs < 1:
            raise cfgmod.ConfigError("--jobs must be >= 1")
        base = None
        if "config" in a:
            cfg = cfgmod.load(a["config"])
            base = Path(a["config"]).resolve().parent
            cfg = replace(cfg, output=_resolve(cfg.output, base) if "out" not in a else cfg.output,
                          inference=replace(cfg.inference, coupling_file=_resolve(
                              cfg.inference.coupling_file, base)))
        else:
            cfg = cfgmod.default()
        cfg = cfgmod.with_overrides(cfg, out=a.get("out"), tol=a.get("tol"),
                                    quick=a.get("quick", False))
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        cmd = args.command
        if cmd == "solve-field":
            return cmd_solve_field(cfg, out, jobs)
        if cmd == "extract":
            return cmd_extract(cfg, out, jobs)
        if cmd == "emit-netlist":
            return cmd_emit_netlist(cfg, out, a.get("coupling"))
        if cmd == "infer":
            return cmd_infer(cfg, out, a.get("coupling"), a.get("gnuplot", False))
        return cmd_sweep_spacing(cfg, out, jobs, a.get("gnuplot", False))
    except (cfgmod.ConfigError, MatrixFormatError) as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG
    except (SolverError, NonConvergenceError, ConsistencyError) as exc:
        _log(f"solver failure: {exc}")
        return EXIT_SOLVER
    except ResourceError as exc:
        _log(f"resource error: {exc}")
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
