"""Voxelized 3-D model of a passive r x c RRAM crossbar inside a thermal house.

Coordinate frame: origin at the array centre, z = 0 on the oxide mid-plane.
Top electrode lines belong to rows and run along x; bottom electrode lines
belong to columns and run along y.  Each cell owns a square tile of side
``pitch = w_m + sp``; the union of tiles is the crossbar footprint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np


class Region(IntEnum):
    CF = 0
    ELECTRODE_TOP = 1
    ELECTRODE_BOTTOM = 2
    OXIDE = 3
    HOUSE = 4


class ResourceError(RuntimeError):
    """Raised when a mesh policy would exceed the configured voxel budget."""


@dataclass(frozen=True)
class MaterialParams:
    sigma: float  # electrical conductivity [S/m]
    kappa: float  # thermal conductivity [W/(m K)]
    heat_capacity: float  # [J/(kg K)]
    density: float  # [kg/m^3]

    def violations(self, name: str) -> list[str]:
        out = []
        for attr in ("sigma", "kappa", "heat_capacity", "density"):
            v = getattr(self, attr)
            if not (math.isfinite(v) and v > 0):
                out.append(f"{name}.{attr} must be positive and finite (got {v!r})")
        return out


@dataclass(frozen=True)
class MaterialSet:
    cf: MaterialParams
    electrode: MaterialParams
    oxide: MaterialParams
    house: MaterialParams

    @classmethod
    def default(cls) -> "MaterialSet":
        return cls(
            cf=MaterialParams(sigma=7e3, kappa=22.0, heat_capacity=445.0, density=8.9e3),
            electrode=MaterialParams(sigma=1.23e5, kappa=22.0, heat_capacity=445.0, density=8.9e3),
            oxide=MaterialParams(sigma=7e-7, kappa=0.5, heat_capacity=286.0, density=9.68e3),
            # Only kappa of the house is known; sigma is never used (the
            # electrical solve treats the house as an insulator) and the
            # heat capacity / density are those of a ~90 % porous silica,
            # the porosity that brings kappa down to 0.05.
            house=MaterialParams(sigma=1e-12, kappa=0.05, heat_capacity=730.0, density=220.0),
        )

    def by_region(self, region: Region) -> MaterialParams:
        return {
            Region.CF: self.cf,
            Region.ELECTRODE_TOP: self.electrode,
            Region.ELECTRODE_BOTTOM: self.electrode,
            Region.OXIDE: self.oxide,
            Region.HOUSE: self.house,
        }[Region(region)]


@dataclass(frozen=True)
class CrossbarSpec:
    rows: int = 3
    cols: int = 3
    sp: float = 400e-9
    w_m: float = 80e-9
    h_m: float = 30e-9
    t_ox: float = 20e-9
    r_cf: float = 5e-9
    th_margin: float = 1e-6
    t_amb: float = 300.0
    materials: MaterialSet = field(default_factory=MaterialSet.default)
    # Length by which electrode lines run past the footprint into the house.
    # None means a quarter of th_margin; lines never touch the isothermal walls.
    line_overhang: float | None = None

    @property
    def th_kappa(self) -> float:
        return self.materials.house.kappa

    @property
    def pitch(self) -> float:
        return self.w_m + self.sp

    @property
    def overhang(self) -> float:
        return 0.25 * self.th_margin if self.line_overhang is None else self.line_overhang

    @property
    def footprint(self) -> tuple[float, float]:
        """Half-widths of the crossbar footprint along x and y."""
        return 0.5 * self.cols * self.pitch, 0.5 * self.rows * self.pitch

    def col_center(self, col: int) -> float:
        return (col - 1 - 0.5 * (self.cols - 1)) * self.pitch

    def row_center(self, row: int) -> float:
        return (row - 1 - 0.5 * (self.rows - 1)) * self.pitch

    def with_spacing(self, sp: float) -> "CrossbarSpec":
        return replace(self, sp=sp)


@dataclass(frozen=True)
class MeshPolicy:
    h_fine: float = 2.5e-9  # finest voxel, used across filaments and the oxide
    h_line: float = 10e-9  # target voxel inside electrode lines
    grading: float = 1.3  # max ratio between neighbouring voxel sizes
    h_max: float = 250e-9
    min_layer_cells: int = 2
    voxel_budget: int = 3_000_000
    # Rescale filament sigma and kappa so each voxelized cross-section
    # conducts like the exact circle.
    area_correction: bool = True

    def coarsened(self, factor: float = 2.0) -> "MeshPolicy":
        return replace(self, h_fine=self.h_fine * factor, h_line=self.h_line * factor,
                       h_max=self.h_max * factor)

    def refined(self, factor: float = 2.0) -> "MeshPolicy":
        return self.coarsened(1.0 / factor)


def validate(spec: CrossbarSpec) -> list[str]:
    """Return every invariant violation of ``spec``; an empty list means ok."""
    v = []
    if not (isinstance(spec.rows, int) and spec.rows >= 1):
        v.append(f"rows must be a positive integer (got {spec.rows!r})")
    if not (isinstance(spec.cols, int) and spec.cols >= 1):
        v.append(f"cols must be a positive integer (got {spec.cols!r})")
    if not 2 * spec.r_cf < spec.w_m:
        v.append(f"2·r_cf < w_m violated (r_cf={spec.r_cf:g}, w_m={spec.w_m:g})")
    if not spec.r_cf > 0:
        v.append(f"r_cf > 0 violated (got {spec.r_cf:g})")
    if not spec.sp >= 0:
        v.append(f"sp ≥ 0 violated (got {spec.sp:g})")
    for name in ("t_ox", "h_m", "th_margin", "t_amb", "w_m"):
        val = getattr(spec, name)
        if not (math.isfinite(val) and val > 0):
            v.append(f"{name} > 0 violated (got {val:g})")
    if spec.line_overhang is not None and not 0 <= spec.line_overhang < spec.th_margin:
        v.append(f"0 ≤ line_overhang < th_margin violated (got {spec.line_overhang:g})")
    for name in ("cf", "electrode", "oxide", "house"):
        v.extend(getattr(spec.materials, name).violations(name))
    return v


def cell_id(spec: CrossbarSpec, row: int, col: int) -> int:
    """Row-major linear index of the 1-based cell (row, col)."""
    if not (1 <= row <= spec.rows and 1 <= col <= spec.cols):
        raise ValueError(f"cell ({row},{col}) outside {spec.rows}x{spec.cols} array")
    return (row - 1) * spec.cols + (col - 1)


def cell_rc(spec: CrossbarSpec, n: int) -> tuple[int, int]:
    if not 0 <= n < spec.rows * spec.cols:
        raise ValueError(f"cell index {n} outside 0..{spec.rows * spec.cols - 1}")
    return n // spec.cols + 1, n % spec.cols + 1


def cell_label(spec: CrossbarSpec, n: int) -> str:
    r, c = cell_rc(spec, n)
    return f"({r},{c})"


# ---------------------------------------------------------------------------
# graded 1-D grids


def _size_field(x: np.ndarray, zones, grading: float, h_max: float) -> np.ndarray:
    s = np.full_like(x, h_max)
    for lo, hi, h in zones:
        d = np.maximum(np.maximum(lo - x, x - hi), 0.0)
        s = np.minimum(s, h + (grading - 1.0) * d)
    return s


def graded_axis(breaks, zones, grading: float, h_max: float, min_cells: int,
                mirror: bool = False) -> np.ndarray:
    """Edges of a 1-D grid that contains every break point.

    ``zones`` is a list of (lo, hi, h) with target size h inside [lo, hi];
    away from a zone the target grows linearly with distance, which is what
    geometric grading at ratio ``grading`` amounts to.  Each interval between
    breaks is split at equal increments of the integral of 1/size.  With
    ``mirror`` the grid is built for x >= 0 and reflected, so it is exactly
    symmetric about the origin.
    """
    b = np.asarray(breaks, dtype=float)
    if mirror:
        b = np.concatenate([[0.0], b[b > 0]])
    b = np.unique(np.round(b, 15))
    edges = [b[0]]
    for a, c in zip(b[:-1], b[1:]):
        t = np.linspace(a, c, 401)
        inv = 1.0 / _size_field(t, zones, grading, h_max)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(t))])
        n = max(min_cells, int(math.ceil(cum[-1] - 1e-9)))
        targets = np.linspace(0.0, cum[-1], n + 1)[1:-1]
        edges.extend(np.interp(targets, cum, t))
        edges.append(c)
    out = np.asarray(edges)
    if mirror:
        out = np.concatenate([-out[:0:-1], out])
    if np.any(np.diff(out) <= 0):
        raise AssertionError("graded grid is not strictly increasing")
    return out


def _centers(e: np.ndarray) -> np.ndarray:
    return 0.5 * (e[1:] + e[:-1])


# ---------------------------------------------------------------------------
# voxel model


@dataclass(frozen=True, eq=False)
class VoxelModel:
    spec: CrossbarSpec
    mesh: MeshPolicy
    x: np.ndarray  # voxel edges along x
    y: np.ndarray
    z: np.ndarray
    labels: np.ndarray  # (nx, ny, nz) int8 of Region values
    cells: dict  # (row, col) -> flat indices of filament voxels
    cell_footprints: dict  # (row, col) -> flat indices of CF + oxide voxels in the cell tile
    probes: dict  # (row, col) -> flat indices of the 8 voxels around the filament centre
    terminals: dict  # line name -> (flat indices, axis, side) of terminal voxels
    electrical_mask: np.ndarray  # (nx, ny, nz) bool, voxels inside the crossbar box
    cf_area: dict  # (row, col) -> voxelized filament cross-section [m^2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape

    @property
    def n_voxels(self) -> int:
        return int(self.labels.size)

    @property
    def n_cells(self) -> int:
        return self.spec.rows * self.spec.cols

    def widths(self):
        return np.diff(self.x), np.diff(self.y), np.diff(self.z)

    def volumes(self) -> np.ndarray:
        dx, dy, dz = self.widths()
        return dx[:, None, None] * dy[None, :, None] * dz[None, None, :]

    def centers(self):
        return _centers(self.x), _centers(self.y), _centers(self.z)

    def region_volume(self, region: Region) -> float:
        return float(self.volumes()[self.labels == region].sum())

    def material_field(self, attr: str) -> np.ndarray:
        """Per-voxel value of a MaterialParams attribute."""
        table = np.array([getattr(self.spec.materials.by_region(r), attr) for r in Region])
        out = table[self.labels]
        if attr in ("sigma", "kappa") and self.mesh.area_correction:
            flat = out.reshape(-1)
            exact = np.pi * self.spec.r_cf ** 2
            for rc, idx in self.cells.items():
                flat[idx] *= exact / self.cf_area[rc]
        return out

    def cell_order(self):
        """(row, col) pairs in cell_id order."""
        return [(r, c) for r in range(1, self.spec.rows + 1) for c in range(1, self.spec.cols + 1)]


def build_model(spec: CrossbarSpec, mesh: MeshPolicy | None = None) -> VoxelModel:
    mesh = mesh or MeshPolicy()
    problems = validate(spec)
    if problems:
        raise ValueError("invalid crossbar spec: " + "; ".join(problems))

    fx, fy = spec.footprint
    m, ov = spec.th_margin, spec.overhang
    hw, r = 0.5 * spec.w_m, spec.r_cf
    zo, zt = 0.5 * spec.t_ox, 0.5 * spec.t_ox + spec.h_m

    def lateral(f, centers):
        breaks = [-f - m, -f, f, f + m, -f - ov, f + ov]
        zones = []
        for c in centers:
            breaks += [c - hw, c + hw, c - r, c, c + r]
            zones += [(c - r, c + r, mesh.h_fine), (c - hw, c + hw, mesh.h_line)]
        return graded_axis(breaks, zones, mesh.grading, mesh.h_max, mesh.min_layer_cells,
                           mirror=True)

    cx = [spec.col_center(j) for j in range(1, spec.cols + 1)]
    cy = [spec.row_center(i) for i in range(1, spec.rows + 1)]
    x = lateral(fx, cx)
    y = lateral(fy, cy)
    z = graded_axis(
        [-zt - m, -zt, -zo, 0.0, zo, zt, zt + m],
        [(-zo, zo, mesh.h_fine), (-zt, zt, 2 * mesh.h_fine)],
        mesh.grading, mesh.h_max, mesh.min_layer_cells, mirror=True,
    )
    n_total = (len(x) - 1) * (len(y) - 1) * (len(z) - 1)
    if n_total > mesh.voxel_budget:
        raise ResourceError(
            f"mesh needs {n_total} voxels, exceeding voxel_budget={mesh.voxel_budget}")

    xc, yc, zc = _centers(x), _centers(y), _centers(z)
    X = xc[:, None, None]
    Y = yc[None, :, None]
    Z = zc[None, None, :]
    shape = (len(xc), len(yc), len(zc))

    labels = np.full(shape, Region.HOUSE, dtype=np.int8)
    in_fx = np.abs(X) < fx
    in_fy = np.abs(Y) < fy
    oxide_layer = np.abs(Z) < zo
    labels[np.broadcast_to(in_fx & in_fy & oxide_layer, shape)] = Region.OXIDE

    top_layer = (Z > zo) & (Z < zt)
    bot_layer = (Z < -zo) & (Z > -zt)
    top_any = np.zeros(shape, bool)
    bot_any = np.zeros(shape, bool)
    for yi in cy:
        top_any |= np.broadcast_to((np.abs(Y - yi) < hw) & (np.abs(X) < fx + ov) & top_layer, shape)
    for xj in cx:
        bot_any |= np.broadcast_to((np.abs(X - xj) < hw) & (np.abs(Y) < fy + ov) & bot_layer, shape)
    labels[top_any] = Region.ELECTRODE_TOP
    labels[bot_any] = Region.ELECTRODE_BOTTOM

    cells, footprints, probes, cf_area = {}, {}, {}, {}
    iz_mid = int(np.searchsorted(z, 0.0))
    for i, yi in enumerate(cy, start=1):
        for j, xj in enumerate(cx, start=1):
            disk = ((X - xj) ** 2 + (Y - yi) ** 2 <= r * r) & oxide_layer
            disk = np.broadcast_to(disk, shape)
            labels[disk] = Region.CF
            idx = np.flatnonzero(disk)
            if idx.size == 0:
                raise ResourceError(f"filament of cell ({i},{j}) unresolved; refine h_fine")
            cells[(i, j)] = idx
            ii, jj, ll = np.unravel_index(idx, shape)
            first = ll == ll.min()
            cf_area[(i, j)] = float(np.sum(np.diff(x)[ii[first]] * np.diff(y)[jj[first]]))
            tile = np.broadcast_to((np.abs(X - xj) < hw) & (np.abs(Y - yi) < hw) & oxide_layer, shape)
            footprints[(i, j)] = np.flatnonzero(tile)
            # The filament centre is a grid vertex; probe the 8 voxels around it.
            ix = int(np.searchsorted(x, xj))
            iy = int(np.searchsorted(y, yi))
            probes[(i, j)] = np.array([np.ravel_multi_index((a, b, c), shape)
                                       for a in (ix - 1, ix) for b in (iy - 1, iy)
                                       for c in (iz_mid - 1, iz_mid)])

    emask = np.broadcast_to(in_fx & in_fy & (np.abs(Z) < zt), shape).copy()

    # Terminals sit on the footprint boundary faces of each line.
    terminals = {}
    ix_lo, ix_hi = int(np.argmax(xc > -fx)), int(len(xc) - 1 - np.argmax(xc[::-1] < fx))
    iy_lo, iy_hi = int(np.argmax(yc > -fy)), int(len(yc) - 1 - np.argmax(yc[::-1] < fy))
    for i, yi in enumerate(cy, start=1):
        sel = (np.abs(yc - yi) < hw)[:, None] & ((zc > zo) & (zc < zt))[None, :]
        iy_s, iz_s = np.nonzero(sel)
        lo = np.ravel_multi_index((np.full_like(iy_s, ix_lo), iy_s, iz_s), shape)
        hi = np.ravel_multi_index((np.full_like(iy_s, ix_hi), iy_s, iz_s), shape)
        terminals[f"T{i}"] = ((lo, 0, -1), (hi, 0, +1))
    for j, xj in enumerate(cx, start=1):
        sel = (np.abs(xc - xj) < hw)[:, None] & ((zc < -zo) & (zc > -zt))[None, :]
        ix_s, iz_s = np.nonzero(sel)
        lo = np.ravel_multi_index((ix_s, np.full_like(ix_s, iy_lo), iz_s), shape)
        hi = np.ravel_multi_index((ix_s, np.full_like(ix_s, iy_hi), iz_s), shape)
        terminals[f"B{j}"] = ((lo, 1, -1), (hi, 1, +1))

    for a in (x, y, z, labels, emask):
        a.setflags(write=False)
    return VoxelModel(spec=spec, mesh=mesh, x=x, y=y, z=z, labels=labels, cells=cells,
                      cell_footprints=footprints, probes=probes, terminals=terminals,
                      electrical_mask=emask, cf_area=cf_area)


def slab_model(thickness: float, width: float, layers: int, lateral: int = 1,
               material: str = "oxide") -> VoxelModel:
    """Homogeneous width x width x thickness block of one material, uniformly voxelized.

    Used for verification against closed-form conduction; it has no cells,
    lines or terminals.
    """
    if not (thickness > 0 and width > 0 and layers >= 1 and lateral >= 1):
        raise ValueError("slab needs positive size and at least one voxel per axis")
    region = {"oxide": Region.OXIDE, "electrode": Region.ELECTRODE_TOP, "cf": Region.CF,
              "house": Region.HOUSE}[material]
    x = np.linspace(-width / 2, width / 2, lateral + 1)
    z = np.linspace(0.0, thickness, layers + 1)
    labels = np.full((lateral, lateral, layers), region, dtype=np.int8)
    emask = np.zeros(labels.shape, bool)
    for a in (x, z, labels, emask):
        a.setflags(write=False)
    return VoxelModel(spec=CrossbarSpec(rows=1, cols=1), mesh=MeshPolicy(area_correction=False),
                      x=x, y=x, z=z, labels=labels, cells={}, cell_footprints={}, probes={},
                      terminals={}, electrical_mask=emask, cf_area={})


def line_names(spec: CrossbarSpec) -> list[str]:
    return [f"T{i}" for i in range(1, spec.rows + 1)] + [f"B{j}" for j in range(1, spec.cols + 1)]


def analytic_volumes(spec: CrossbarSpec) -> dict:
    """Continuum region volumes for comparison against the voxelization."""
    fx, fy = spec.footprint
    ov = spec.overhang
    cf = spec.rows * spec.cols * math.pi * spec.r_cf ** 2 * spec.t_ox
    top = spec.rows * spec.w_m * 2 * (fx + ov) * spec.h_m
    bot = spec.cols * spec.w_m * 2 * (fy + ov) * spec.h_m
    oxide = 4 * fx * fy * spec.t_ox - cf
    return {Region.CF: cf, Region.ELECTRODE_TOP: top, Region.ELECTRODE_BOTTOM: bot,
            Region.OXIDE: oxide}
