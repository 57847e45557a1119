"""Run configuration: YAML text with nested sections and unit-suffixed quantities.

Quantities may be plain numbers (SI) or strings such as ``"80 nm"``,
``"2.45 uW"`` or ``"100 us"``.  Serialization always writes plain SI floats,
so parse -> serialize -> parse is a fixed point.
"""

from __future__ import annotations

import re
from decimal import Decimal
from dataclasses import asdict, dataclass, fields, replace
from dataclasses import field as _default

import yaml

from .crossbar_circuit import DEFAULT_DRIFT, PRESETS, DriftParams
from .extraction import DEFAULT_SWEEP
from .geometry import CrossbarSpec, MaterialParams, MaterialSet, MeshPolicy, validate


class ConfigError(ValueError):
    """Malformed or incomplete configuration."""


_PREFIX = {"": 0, "p": -12, "n": -9, "u": -6, "µ": -6, "μ": -6, "m": -3, "k": 3, "M": 6}
_UNITS = ("m", "s", "W", "V", "K", "A", "S", "Hz", "Ohm")
_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([^\d\s]*)\s*$")


def parse_quantity(value, what: str = "value") -> float:
    """Number or '<number> [prefix]unit' string -> SI float."""
    if isinstance(value, bool):
        raise ConfigError(f"{what}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{what}: expected a number, got {value!r}")
    m = _QTY.match(value)
    if not m:
        raise ConfigError(f"{what}: cannot parse quantity {value!r}")
    num, unit = m.group(1), m.group(2)
    if not unit:
        return float(num)
    # Try the bare unit first so "m" means metre rather than milli.
    for u in sorted(_UNITS, key=len, reverse=True):
        if unit == u:
            return float(num)
        if unit.endswith(u) and unit[: -len(u)] in _PREFIX:
            # Scale in decimal so "2.45 uW" is exactly 2.45e-06.
            return float(Decimal(num).scaleb(_PREFIX[unit[: -len(u)]]))
    raise ConfigError(f"{what}: unknown unit {unit!r} in {value!r}")


def _int(value, what):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{what}: expected an integer, got {value!r}")
    return value


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return sec


def _check_keys(sec: dict, allowed, where: str):
    extra = set(sec) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(map(str, extra)))}")


# ---------------------------------------------------------------------------
# sections


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-8
    precond: str = "amg"
    max_iter: int | None = None  # PCG iteration cap per solve; None: size-based default


@dataclass(frozen=True)
class FieldSettings:
    source: tuple | None = None  # LRS cell driven at v_bias; None means the centre cell
    v_bias: float = 0.3
    all_lrs: bool = False
    transient: bool = False
    t_end: float = 10e-6
    dt0: float = 1e-9
    dt_max: float = 2e-7
    growth: float = 1.2


@dataclass(frozen=True)
class ExtractionSettings:
    power_sweep: tuple = DEFAULT_SWEEP
    p0: float = 2.45e-6
    spacings: tuple = (80e-9, 120e-9, 160e-9, 240e-9, 400e-9)
    all_lrs: bool = True


@dataclass(frozen=True)
class InferenceSettings:
    patterns: tuple = PRESETS
    v_read: float = 0.3
    pulse_width: float = 100e-6
    cycles: int = 200_000
    ref_col: int | None = None  # None: centre column (column 2 of a 3x3 array)
    drift: DriftParams = DEFAULT_DRIFT
    t_cap: float = 1500.0
    line_resistance: float = 0.0
    compare_uncoupled: bool = True
    coupling_file: str | None = None  # None: packaged 3x3 matrix at sp = 80 nm


@dataclass(frozen=True)
class NetlistSettings:
    name: str = "XBAR_THERMAL"
    prune: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    crossbar: CrossbarSpec = _default(default_factory=CrossbarSpec)
    mesh: MeshPolicy = _default(default_factory=MeshPolicy)
    solver: SolverSettings = _default(default_factory=SolverSettings)
    field: FieldSettings = _default(default_factory=FieldSettings)
    extraction: ExtractionSettings = _default(default_factory=ExtractionSettings)
    inference: InferenceSettings = _default(default_factory=InferenceSettings)
    netlist: NetlistSettings = _default(default_factory=NetlistSettings)
    output: str = "out"


# ---------------------------------------------------------------------------
# parsing


_LENGTHS = ("sp", "w_m", "h_m", "t_ox", "r_cf", "th_margin", "line_overhang")


def _materials(sec: dict) -> MaterialSet:
    base = MaterialSet.default()
    _check_keys(sec, ("cf", "electrode", "oxide", "house"), "crossbar.materials")
    out = {}
    for name in ("cf", "electrode", "oxide", "house"):
        m = _section(sec, name)
        _check_keys(m, ("sigma", "kappa", "heat_capacity", "density"), f"materials.{name}")
        cur = getattr(base, name)
        out[name] = MaterialParams(**{a: parse_quantity(m.get(a, getattr(cur, a)), f"{name}.{a}")
                                      for a in ("sigma", "kappa", "heat_capacity", "density")})
    return MaterialSet(**out)


def _crossbar(sec: dict) -> CrossbarSpec:
    keys = ("rows", "cols", "t_amb", "materials") + _LENGTHS
    _check_keys(sec, keys, "crossbar")
    d = CrossbarSpec()
    kw = {"rows": _int(sec.get("rows", d.rows), "crossbar.rows"),
          "cols": _int(sec.get("cols", d.cols), "crossbar.cols"),
          "t_amb": parse_quantity(sec.get("t_amb", d.t_amb), "crossbar.t_amb"),
          "materials": _materials(_section(sec, "materials"))}
    for k in _LENGTHS:
        v = sec.get(k, getattr(d, k))
        kw[k] = None if v is None else parse_quantity(v, f"crossbar.{k}")
    spec = CrossbarSpec(**kw)
    problems = validate(spec)
    if problems:
        raise ConfigError("crossbar: " + "; ".join(problems))
    return spec


def _mesh(sec: dict) -> MeshPolicy:
    d = MeshPolicy()
    _check_keys(sec, [f.name for f in fields(MeshPolicy)], "mesh")
    m = MeshPolicy(
        h_fine=parse_quantity(sec.get("h_fine", d.h_fine), "mesh.h_fine"),
        h_line=parse_quantity(sec.get("h_line", d.h_line), "mesh.h_line"),
        grading=parse_quantity(sec.get("grading", d.grading), "mesh.grading"),
        h_max=parse_quantity(sec.get("h_max", d.h_max), "mesh.h_max"),
        min_layer_cells=_int(sec.get("min_layer_cells", d.min_layer_cells), "mesh.min_layer_cells"),
        voxel_budget=_int(sec.get("voxel_budget", d.voxel_budget), "mesh.voxel_budget"),
        area_correction=bool(sec.get("area_correction", d.area_correction)),
    )
    if not (m.h_fine > 0 and m.h_line >= m.h_fine and m.h_max >= m.h_line and m.grading > 1):
        raise ConfigError("mesh: need 0 < h_fine <= h_line <= h_max and grading > 1")
    if m.min_layer_cells < 1 or m.voxel_budget < 1:
        raise ConfigError("mesh: min_layer_cells and voxel_budget must be positive")
    return m


def _solver(sec: dict) -> SolverSettings:
    _check_keys(sec, ("tol", "precond", "max_iter"), "solver")
    mi = sec.get("max_iter")
    s = SolverSettings(tol=parse_quantity(sec.get("tol", 1e-8), "solver.tol"),
                       precond=str(sec.get("precond", "amg")),
                       max_iter=None if mi is None else _int(mi, "solver.max_iter"))
    if s.max_iter is not None and s.max_iter < 1:
        raise ConfigError("solver.max_iter must be >= 1")
    if not 0 < s.tol < 1:
        raise ConfigError("solver.tol must lie in (0, 1)")
    if s.precond not in ("amg", "jacobi"):
        raise ConfigError("solver.precond must be 'amg' or 'jacobi'")
    return s


def _cell(value, spec: CrossbarSpec, what: str) -> tuple:
    if isinstance(value, str):
        m = re.match(r"^\(?\s*(\d+)\s*,\s*(\d+)\s*\)?$", value)
        if not m:
            raise ConfigError(f"{what}: expected '(row,col)', got {value!r}")
        value = (int(m.group(1)), int(m.group(2)))
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise ConfigError(f"{what}: expected [row, col], got {value!r}")
    r, c = (_int(v, what) for v in value)
    if not (1 <= r <= spec.rows and 1 <= c <= spec.cols):
        raise ConfigError(f"{what}: cell ({r},{c}) outside the {spec.rows}x{spec.cols} array")
    return r, c


def _field(sec: dict, spec: CrossbarSpec) -> FieldSettings:
    d = FieldSettings()
    _check_keys(sec, [f.name for f in fields(FieldSettings)], "field")
    f = FieldSettings(
        source=_cell(sec["source"], spec, "field.source") if sec.get("source") is not None
        else ((spec.rows + 1) // 2, (spec.cols + 1) // 2),
        v_bias=parse_quantity(sec.get("v_bias", d.v_bias), "field.v_bias"),
        all_lrs=bool(sec.get("all_lrs", d.all_lrs)),
        transient=bool(sec.get("transient", d.transient)),
        t_end=parse_quantity(sec.get("t_end", d.t_end), "field.t_end"),
        dt0=parse_quantity(sec.get("dt0", d.dt0), "field.dt0"),
        dt_max=parse_quantity(sec.get("dt_max", d.dt_max), "field.dt_max"),
        growth=parse_quantity(sec.get("growth", d.growth), "field.growth"),
    )
    if not (f.t_end > 0 and 0 < f.dt0 <= f.dt_max and f.growth >= 1):
        raise ConfigError("field: need t_end > 0, 0 < dt0 <= dt_max, growth >= 1")
    return f


def _extraction(sec: dict) -> ExtractionSettings:
    d = ExtractionSettings()
    _check_keys(sec, [f.name for f in fields(ExtractionSettings)], "extraction")
    sweep = tuple(parse_quantity(p, "extraction.power_sweep")
                  for p in sec.get("power_sweep", d.power_sweep))
    spacings = tuple(parse_quantity(s, "extraction.spacings")
                     for s in sec.get("spacings", d.spacings))
    e = ExtractionSettings(power_sweep=sweep,
                           p0=parse_quantity(sec.get("p0", d.p0), "extraction.p0"),
                           spacings=spacings,
                           all_lrs=bool(sec.get("all_lrs", d.all_lrs)))
    if len(sweep) < 3 or min(sweep) <= 0:
        raise ConfigError("extraction.power_sweep needs at least 3 positive powers")
    if e.p0 <= 0:
        raise ConfigError("extraction.p0 must be positive")
    if not spacings or min(spacings) < 0:
        raise ConfigError("extraction.spacings must be non-empty and non-negative")
    return e


def _inference(sec: dict, spec: CrossbarSpec) -> InferenceSettings:
    d = InferenceSettings()
    _check_keys(sec, [f.name for f in fields(InferenceSettings)], "inference")
    pats = sec.get("patterns", list(d.patterns))
    if isinstance(pats, str):
        pats = [pats]
    pats = tuple(str(p).upper() for p in pats)
    for p in pats:
        if p not in PRESETS:
            raise ConfigError(f"inference.patterns: unknown pattern {p!r}; choose from {PRESETS}")
    dr = _section(sec, "drift")
    _check_keys(dr, ("alpha", "e_a", "beta"), "inference.drift")
    try:
        drift = DriftParams(alpha=parse_quantity(dr.get("alpha", d.drift.alpha), "drift.alpha"),
                            e_a=parse_quantity(dr.get("e_a", d.drift.e_a), "drift.e_a"),
                            beta=parse_quantity(dr.get("beta", d.drift.beta), "drift.beta"))
    except ValueError as exc:
        raise ConfigError(f"inference.drift: {exc}") from None
    cf = sec.get("coupling_file", d.coupling_file)
    inf = InferenceSettings(
        patterns=pats,
        v_read=parse_quantity(sec.get("v_read", d.v_read), "inference.v_read"),
        pulse_width=parse_quantity(sec.get("pulse_width", d.pulse_width), "inference.pulse_width"),
        cycles=_int(sec.get("cycles", d.cycles), "inference.cycles"),
        ref_col=_int(sec["ref_col"], "inference.ref_col") if sec.get("ref_col") is not None
        else (spec.cols + 1) // 2,
        drift=drift,
        t_cap=parse_quantity(sec.get("t_cap", d.t_cap), "inference.t_cap"),
        line_resistance=parse_quantity(sec.get("line_resistance", d.line_resistance),
                                       "inference.line_resistance"),
        compare_uncoupled=bool(sec.get("compare_uncoupled", d.compare_uncoupled)),
        coupling_file=None if cf is None else str(cf),
    )
    if inf.cycles < 1:
        raise ConfigError("inference.cycles must be >= 1")
    if not 1 <= inf.ref_col <= spec.cols:
        raise ConfigError(f"inference.ref_col must lie in 1..{spec.cols}")
    if inf.t_cap <= spec.t_amb or inf.line_resistance < 0 or inf.pulse_width <= 0:
        raise ConfigError("inference: need t_cap > t_amb, line_resistance >= 0, pulse_width > 0")
    return inf


def _netlist(sec: dict) -> NetlistSettings:
    _check_keys(sec, ("name", "prune"), "netlist")
    n = NetlistSettings(name=str(sec.get("name", "XBAR_THERMAL")),
                        prune=parse_quantity(sec.get("prune", 0.0), "netlist.prune"))
    if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", n.name):
        raise ConfigError(f"netlist.name {n.name!r} is not a valid subcircuit name")
    if not 0 <= n.prune <= 1:
        raise ConfigError("netlist.prune must lie in [0, 1]")
    return n


def from_dict(raw) -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping of sections")
    _check_keys(raw, [f.name for f in fields(RunConfig)], "top level")
    spec = _crossbar(_section(raw, "crossbar"))
    out = raw.get("output", "out")
    if not isinstance(out, str) or not out:
        raise ConfigError("output must be a directory path")
    return RunConfig(crossbar=spec, mesh=_mesh(_section(raw, "mesh")),
                     solver=_solver(_section(raw, "solver")),
                     field=_field(_section(raw, "field"), spec),
                     extraction=_extraction(_section(raw, "extraction")),
                     inference=_inference(_section(raw, "inference"), spec),
                     netlist=_netlist(_section(raw, "netlist")), output=out)


def loads(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML syntax error: {exc}") from None
    return from_dict(raw)


def load(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


# ---------------------------------------------------------------------------
# serialization


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def to_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["inference"]["drift"] = {k: d["inference"]["drift"][k] for k in ("alpha", "e_a", "beta")}
    return _plain(d)


def dumps(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


def with_overrides(cfg: RunConfig, *, out=None, tol=None, quick=False) -> RunConfig:
    if out is not None:
        cfg = replace(cfg, output=str(out))
    if tol is not None:
        if not 0 < tol < 1:
            raise ConfigError("--tol must lie in (0, 1)")
        cfg = replace(cfg, solver=replace(cfg.solver, tol=tol))
    if quick:
        cfg = replace(cfg, mesh=cfg.mesh.coarsened(2.0))
    return cfg


def default() -> RunConfig:
    """Defaults with every cell-dependent setting resolved."""
    return from_dict({})
