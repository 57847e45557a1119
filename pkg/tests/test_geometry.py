import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xbartherm.geometry import (CrossbarSpec, MaterialParams, MaterialSet, MeshPolicy, Region,
                                ResourceError, analytic_volumes, build_model, cell_id, cell_label,
                                cell_rc, graded_axis, slab_model, validate)


def test_table_spec_is_valid():
    assert validate(CrossbarSpec(r_cf=5e-9, w_m=80e-9, t_ox=20e-9, h_m=30e-9)) == []


def test_wide_filament_violation():
    v = validate(CrossbarSpec(r_cf=50e-9, w_m=80e-9))
    assert any("2·r_cf < w_m" in s for s in v)


def test_negative_spacing_violation():
    v = validate(CrossbarSpec(sp=-1e-9))
    assert any("sp ≥ 0" in s for s in v)


def test_validate_reports_every_violation():
    bad = CrossbarSpec(r_cf=50e-9, sp=-1e-9, t_ox=0.0, h_m=-1.0, th_margin=0.0, t_amb=-3.0)
    v = validate(bad)
    for frag in ("2·r_cf", "sp ≥ 0", "t_ox", "h_m", "th_margin", "t_amb"):
        assert any(frag in s for s in v), frag


def test_material_violations():
    mats = replace(MaterialSet.default(), oxide=MaterialParams(0.0, 0.5, 286.0, float("nan")))
    v = validate(CrossbarSpec(materials=mats))
    assert any("oxide.sigma" in s for s in v)
    assert any("oxide.density" in s for s in v)


def test_build_rejects_invalid_spec():
    with pytest.raises(ValueError, match="2·r_cf"):
        build_model(CrossbarSpec(r_cf=50e-9))


@pytest.mark.parametrize("rc,n", [((1, 1), 0), ((2, 2), 4), ((3, 3), 8)])
def test_cell_id_examples(rc, n):
    assert cell_id(CrossbarSpec(), *rc) == n


@pytest.mark.parametrize("rc", [(0, 1), (4, 1), (1, 0), (1, 4)])
def test_cell_id_out_of_range(rc):
    with pytest.raises(ValueError):
        cell_id(CrossbarSpec(), *rc)


@given(st.integers(1, 7), st.integers(1, 7))
def test_cell_id_bijection(rows, cols):
    spec = CrossbarSpec(rows=rows, cols=cols)
    ids = [cell_id(spec, r, c) for r in range(1, rows + 1) for c in range(1, cols + 1)]
    assert ids == list(range(rows * cols))
    for n in ids:
        assert cell_id(spec, *cell_rc(spec, n)) == n
    assert cell_label(spec, 0) == "(1,1)"


def test_single_cell_model(model_1x1_quick):
    m = model_1x1_quick
    assert list(m.cells) == [(1, 1)]
    assert m.cells[(1, 1)].size > 0
    assert set(m.terminals) == {"T1", "B1"}


def test_3x3_counts(model_3x3_quick):
    m = model_3x3_quick
    assert len(m.cells) == 9
    assert sorted(k for k in m.terminals if k.startswith("T")) == ["T1", "T2", "T3"]
    assert sorted(k for k in m.terminals if k.startswith("B")) == ["B1", "B2", "B3"]


def test_grids_strictly_increasing(model_3x3_quick):
    for e in (model_3x3_quick.x, model_3x3_quick.y, model_3x3_quick.z):
        assert np.all(np.diff(e) > 0)


def test_every_label_is_a_region(model_3x3_quick):
    assert set(np.unique(model_3x3_quick.labels)) <= {int(r) for r in Region}


def test_filament_area_at_default_mesh():
    m = build_model(CrossbarSpec(rows=1, cols=1))
    exact = math.pi * (5e-9) ** 2
    assert abs(m.cf_area[(1, 1)] - exact) / exact < 0.15


def test_filament_sits_at_line_crossing(model_3x3_quick):
    m = model_3x3_quick
    spec = m.spec
    xc, yc, zc = m.centers()
    for (r, c), idx in m.cells.items():
        i, j, k = np.unravel_index(idx, m.shape)
        assert np.all(np.abs(xc[i] - spec.col_center(c)) <= spec.r_cf)
        assert np.all(np.abs(yc[j] - spec.row_center(r)) <= spec.r_cf)
        assert np.all(np.abs(zc[k]) < spec.t_ox / 2)
        # the filament spans the whole oxide gap
        assert math.isclose(np.diff(m.z)[np.unique(k)].sum(), spec.t_ox, rel_tol=1e-9)


def test_oxide_gap_matches_t_ox(model_3x3_quick):
    m = model_3x3_quick
    spec = m.spec
    i = int(np.searchsorted(m.x, spec.col_center(2))) - 3
    j = int(np.searchsorted(m.y, spec.row_center(2))) - 3
    col = m.labels[i, j]
    dz = np.diff(m.z)
    gap = dz[col == Region.OXIDE].sum()
    assert abs(gap - spec.t_ox) <= dz.max()
    assert math.isclose(dz[col == Region.ELECTRODE_TOP].sum(), spec.h_m, rel_tol=1e-9)
    assert math.isclose(dz[col == Region.ELECTRODE_BOTTOM].sum(), spec.h_m, rel_tol=1e-9)


def test_house_surrounds_crossbar(model_3x3_quick):
    lab = model_3x3_quick.labels
    for face in (lab[0], lab[-1], lab[:, 0], lab[:, -1], lab[:, :, 0], lab[:, :, -1]):
        assert np.all(face == Region.HOUSE)


def test_region_volumes_converge():
    spec = CrossbarSpec(rows=1, cols=1)
    exact = analytic_volumes(spec)
    errs = []
    for mesh in (MeshPolicy().coarsened(2), MeshPolicy()):
        m = build_model(spec, mesh)
        rel = {r: abs(m.region_volume(r) - v) / v for r, v in exact.items()}
        # lines and the oxide slab are aligned with grid breaks
        for r in (Region.ELECTRODE_TOP, Region.ELECTRODE_BOTTOM, Region.OXIDE):
            assert rel[r] < 1e-3, (r, rel[r])
        errs.append(rel[Region.CF])
    assert errs[0] < 0.5 and errs[1] < 0.15


def test_mirror_symmetry(model_3x3_quick):
    m = model_3x3_quick
    assert np.allclose(m.x, -m.x[::-1]) and np.allclose(m.y, -m.y[::-1])
    lab = np.asarray(m.labels)
    assert np.array_equal(lab, lab[::-1, :, :])
    assert np.array_equal(lab, lab[:, ::-1, :])
    # x<->y with z flipped swaps the roles of top and bottom lines
    swapped = np.transpose(lab, (1, 0, 2))[:, :, ::-1].copy()
    top, bot = swapped == Region.ELECTRODE_TOP, swapped == Region.ELECTRODE_BOTTOM
    swapped[top], swapped[bot] = Region.ELECTRODE_BOTTOM, Region.ELECTRODE_TOP
    assert np.array_equal(lab, swapped)


def test_voxel_budget_error():
    with pytest.raises(ResourceError, match="voxel_budget=1000"):
        build_model(CrossbarSpec(), MeshPolicy(voxel_budget=1000))


def test_model_is_read_only(model_1x1_quick):
    with pytest.raises(ValueError):
        model_1x1_quick.labels[0, 0, 0] = 0


def test_area_correction_scales_filament_only(model_1x1_quick):
    m = model_1x1_quick
    k = m.material_field("kappa").ravel()
    idx = m.cells[(1, 1)]
    scale = math.pi * m.spec.r_cf ** 2 / m.cf_area[(1, 1)]
    assert np.allclose(k[idx], 22.0 * scale)
    assert np.all(k[m.labels.ravel() == Region.HOUSE] == 0.05)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=2, max_size=6, unique=True),
       st.floats(1.05, 2.0), st.floats(0.01, 0.3))
def test_graded_axis_contains_breaks(ticks, grading, h):
    breaks = [t / 1000 for t in ticks]
    e = graded_axis(breaks, [(-0.1, 0.1, h)], grading, 0.5, 1)
    assert np.all(np.diff(e) > 0)
    for b in breaks:
        assert np.min(np.abs(e - b)) < 1e-12
    # no cell exceeds h_max
    d = np.diff(e)
    assert np.max(d) <= 0.5 * 1.0001 + 1e-12


def test_graded_axis_mirror_is_symmetric():
    e = graded_axis([-1.0, -0.3, 0.2, 1.0], [(0.1, 0.25, 0.01)], 1.3, 0.2, 2, mirror=True)
    assert np.allclose(e, -e[::-1])


def test_slab_model():
    m = slab_model(20e-9, 80e-9, 4, lateral=2)
    assert m.shape == (2, 2, 4)
    assert math.isclose(m.volumes().sum(), 20e-9 * (80e-9) ** 2, rel_tol=1e-12)
    assert np.all(m.material_field("kappa") == 0.5)
