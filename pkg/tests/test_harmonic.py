import itertools
import math

import numpy as np
import pytest

from cylex.cylinder import CylinderConfig, make_stream, neighbors, sample_step
from cylex.errors import BudgetError, EmptyMeasureError, NotNiceError, UndefinedStateError
from cylex.exponent import run_ensemble
from cylex.harmonic import (Slab, _hit_before_exit_cylinder, _sparse_h, harnack_constant, harnack_readings,
                            hitting_measure, hprocess_kernel, level_chain, one_step_log_ratio, solve_h,
                            survival_prob_exact, survival_profile, total_variation, window_field, z_bar, z_hat,
                            z_star)
from cylex.paths import (Completion, PathWindow, concat_arrays, cross_sections, enumerate_windows,
                         sample_segments, straight_window, windows_from_iterable)

from oracles import propagate_survival

TAIL_STEPS = 40


def chain_ext(cfg, canon):
    """Turn canonical segments (each from (0, 0) to level 1) into an extension
    chained from the window endpoint: segment i climbs from level i to i + 1."""
    out, cell = [], 0
    for i, (lv, cl) in enumerate(canon):
        out.append((lv + i, cfg.translation_table[cl, cell]))
        cell = int(out[-1][1][-1])
    return out


def free_mask_with_ext(w, ext, bottom):
    n = len(ext)
    free = w.free_mask(bottom, n)
    for lv, cl in ext:
        free[lv - bottom, cl] = False
    return free


def oracle_z(w, ext, bottom, steps=TAIL_STEPS):
    """Z_n from time-stepped trajectory propagation; returns (value, tail bound)."""
    cfg = w.cfg
    n = len(ext)
    f0 = w.free_mask(bottom, 0)
    fn = free_mask_with_ext(w, ext, bottom)
    start = f0[0].astype(float)
    den, a0 = propagate_survival(cfg, f0, 0, start, -bottom, steps)
    num, a1 = propagate_survival(cfg, fn, 0, start, n - bottom, steps)
    return num / den, (a0 + a1) / den


def small_ladder_windows(cfg, depth, max_len):
    return [w for w, _ in enumerate_windows(cfg, depth, max_len)]


@pytest.fixture(scope="module")
def tri_windows(tri):
    ens, _ = run_ensemble(straight_window(tri, 6), 1.0, 12, 60, seed=5, depth=6)
    live = [w for w, lw in zip(ens.windows, ens.logw) if np.isfinite(lw)]
    return list(dict.fromkeys(live))


# -- the survival-harmonic function ----------------------------------------

def test_h_boundary_values(ladder):
    w = straight_window(ladder, 4)
    fld = window_field(w)
    for s in w.sites():
        if s.level >= fld.slab.bottom:
            assert fld[s] == 0.0
    assert fld[ladder.site(0, 1)] == 1.0
    assert fld[ladder.site(0, 0)] == 0.0
    assert fld.residual < 1e-12 and not fld.degenerate


def test_h_matches_trajectory_propagation_ladder(ladder):
    worst = tail = 0.0
    windows = [straight_window(ladder, 4)] + small_ladder_windows(ladder, 2, 4)[:12]
    for w in windows:
        fld = window_field(w)
        free = fld.slab.free_mask(ladder)
        top = free.shape[0] - 1
        for j in range(top):
            for c in range(ladder.n_cells):
                if not free[j, c]:
                    continue
                start = np.zeros(ladder.n_cells)
                start[c] = 1.0
                hit, alive = propagate_survival(ladder, free, j, start, top, TAIL_STEPS)
                worst = max(worst, abs(hit - fld.array[j, c]))
                tail = max(tail, alive)
    assert tail < 1e-9, tail
    assert worst < 1e-8


def test_recursion_matches_sparse_solve(tri, tri_windows):
    for w in tri_windows[:10]:
        fld = window_field(w)
        free = fld.slab.free_mask(tri)
        np.testing.assert_allclose(fld.array, _sparse_h(tri, free), atol=1e-12)


def test_degenerate_field_flagged(ladder):
    slab = Slab(-2, 0, frozenset({ladder.site(0, 0), ladder.site(0, 1)}))
    fld = solve_h(slab, ladder)
    assert fld.degenerate and np.all(fld.array == 0)


def test_slab_rejects_obstacle_outside(ladder):
    with pytest.raises(ValueError):
        Slab(-2, 0, frozenset({ladder.site(1, 0)}))


def test_empty_obstacle_kernel_is_walk_kernel(tri):
    slab = Slab(-60, 0, frozenset())
    fld = solve_h(slab, tri)
    K = hprocess_kernel(fld, tri)
    z = tri.site(-40, 1)
    row = K.row(z)
    plain = {}
    for s, q in neighbors(z, tri):
        plain[s] = plain.get(s, 0.0) + q
    for s, q in plain.items():
        assert row[s] == pytest.approx(q, abs=1e-10)


def test_kernel_rows_normalised(tri, tri_windows):
    for w in tri_windows[:6]:
        fld = window_field(w)
        K = hprocess_kernel(fld, tri)
        for j in range(fld.slab.bottom, fld.slab.top):
            for c in range(tri.n_cells):
                z = tri.site(j, c)
                if fld[z] > 1e-300:
                    assert sum(K.row(z).values()) == pytest.approx(1.0, abs=1e-10)
            L = K.level_kernel(j)
            live = fld.array[j - fld.slab.bottom] > 0
            np.testing.assert_allclose(L[live].sum(axis=1), 1.0, atol=1e-10)


def test_kernel_undefined_on_obstacle(ladder):
    fld = window_field(straight_window(ladder, 3))
    K = hprocess_kernel(fld, ladder)
    with pytest.raises(UndefinedStateError):
        K.row(ladder.site(-1, 0))
    with pytest.raises(UndefinedStateError):
        K.row(ladder.site(0, 1))


def test_kernel_matches_rejection_sampling(ladder):
    """First-step frequencies of surviving plain walks = h-process row."""
    w = straight_window(ladder, 2)
    fld = window_field(w, pad=2)
    K = hprocess_kernel(fld, ladder)
    z = ladder.site(-2, 1)
    row = K.row(z)
    rng = make_stream(123)
    counts: dict = {}
    kept = 0
    for _ in range(20000):
        first = None
        x = z
        while True:
            x = sample_step(x, ladder, rng)
            if first is None:
                first = x
            if x.level < fld.slab.bottom or fld[x] == 0.0 and x.level < fld.slab.top:
                break
            if x.level == fld.slab.top:
                if fld[x] > 0:
                    kept += 1
                    counts[first] = counts.get(first, 0) + 1
                break
    assert kept > 1000
    for s, q in row.items():
        freq = counts.get(s, 0) / kept
        assert abs(freq - q) < 4 * math.sqrt(q * (1 - q) / kept) + 1e-3
    assert set(counts) <= set(row)


# -- Harnack constant and field inequalities --------------------------------

def test_harnack_level_values_closed_form(ladder, tri):
    # two-cell torus: both lateral moves jump to the other cell
    assert harnack_constant(ladder) == pytest.approx(2 / (2 * ladder.d), abs=1e-14)
    # three-cell torus: the worst set is an adjacent pair, reached in one move
    assert harnack_constant(tri) == pytest.approx(1 / (2 * tri.d), abs=1e-14)


def test_harnack_cylinder_reading_stable_and_larger(ladder, tri):
    for cfg in (ladder, tri):
        r = harnack_readings(cfg)
        assert 0 < r["level"] <= r["cylinder"] < 1
    a40 = _hit_before_exit_cylinder(tri, (0, 1), 1, height=40)[0]
    a60 = _hit_before_exit_cylinder(tri, (0, 1), 1, height=60)[0]
    assert a40 == pytest.approx(a60, abs=1e-12)


def test_harnack_budget(tri):
    with pytest.raises(BudgetError):
        harnack_constant(CylinderConfig(3, 5, 0.75), max_cells=16)


def harnack_worst_ratio(w, fld):
    prof = cross_sections(w)
    free = fld.slab.free_mask(w.cfg)
    worst = math.inf
    for j in range(fld.slab.bottom + 1, 0):
        if not prof.indicator(j):
            continue
        cells = np.flatnonzero(free[j - fld.slab.bottom])
        hv = fld.array[j - fld.slab.bottom, cells]
        if len(cells) < 2 or hv.max() <= 0:
            continue
        worst = min(worst, hv.min() / hv.max())
    return worst


def test_harnack_on_solved_fields(tri, ladder, tri_windows):
    for cfg, windows in ((tri, tri_windows), (ladder, [straight_window(ladder, 5)])):
        a = harnack_constant(cfg)
        for w in windows:
            fld = window_field(w)
            assert harnack_worst_ratio(w, fld) >= a - 1e-12


def test_level_ratio_bounds(tri, tri_windows):
    lo, hi = tri.backward, 1 / tri.forward
    for w in tri_windows[:10]:
        fld = window_field(w)
        H, free = fld.array, fld.slab.free_mask(tri)
        both = free[:-1] & free[1:] & (H[:-1] > 0)
        r = H[1:][both] / H[:-1][both]
        assert np.all(r <= hi * (1 + 1e-12))
        assert np.all(r >= lo * (1 - 1e-12))


# -- hitting measures ---------------------------------------------------------

def test_hitting_measure_point_mass(ladder):
    w = straight_window(ladder, 3)
    m = hitting_measure(w, -3, -1)
    assert m.weights == {ladder.site(-1, 1): pytest.approx(1.0)}


def test_hitting_measure_normalised(tri, tri_windows):
    for w in tri_windows[:5]:
        m = hitting_measure(w, -5, 0)
        assert sum(m.weights.values()) == pytest.approx(1.0, abs=1e-12)
        assert m.defect < 1e-9
        assert all(s.level == 0 for s in m.weights)


def test_hitting_measure_errors(ladder):
    w = straight_window(ladder, 3)
    with pytest.raises(ValueError):
        hitting_measure(w, 0, -2)
    with pytest.raises(EmptyMeasureError):
        hitting_measure(w, -2, -1, start=ladder.site(-2, 0))


def test_hitting_measure_deep_starts_merge(tri, tri_windows):
    w = tri_windows[0]
    ref = hitting_measure(w, -6, 0, bottom=-30).vector(tri)
    for s in range(tri.n_cells):
        try:
            m = hitting_measure(w, -25, 0, start=tri.site(-25, s), bottom=-30).vector(tri)
        except EmptyMeasureError:
            continue
        assert total_variation(m, ref) < 1e-3


# -- survival ratios ----------------------------------------------------------

def test_z0_is_one(tri, tri_windows):
    for w in tri_windows[:5]:
        assert survival_prob_exact(w, []) == 1.0


def test_z_matches_trajectory_propagation_ladder(ladder):
    rng = make_stream(7)
    worst = tail = 0.0
    cases = [(straight_window(ladder, 4), [(np.array([0, 1]), np.array([0, 0]))] * 2)]
    for depth in (1, 2, 3, 4):
        for w in small_ladder_windows(ladder, depth, 3)[:6]:
            canon = sample_segments(ladder, 2, rng)
            cases.append((w, canon))
    for w, canon in cases:
        ext = chain_ext(ladder, canon)
        b = min(w.default_bottom(), min(int(lv.min()) for lv, _ in ext) - 4)
        try:
            z = survival_prob_exact(w, ext, bottom=b)
        except NotNiceError:
            continue
        zo, t = oracle_z(w, ext, b)
        worst = max(worst, abs(z - zo))
        tail = max(tail, t)
    assert tail < 1e-9, tail
    assert worst < 1e-8


def test_z_straight_ladder_closed_form(ladder, ladder_u):
    w = straight_window(ladder, 8)
    ext = chain_ext(ladder, [(np.array([0, 1]), np.array([0, 0]))] * 3)
    prof = survival_profile(w, ext)
    np.testing.assert_allclose(prof, ladder_u ** np.arange(4), rtol=1e-10)


def test_z_monotone_and_multiplicative(tri, tri_windows):
    rng = make_stream(9)
    for w in tri_windows[:6]:
        canon = sample_segments(tri, 4, rng)
        ext = chain_ext(tri, canon)
        try:
            prof = survival_profile(w, ext)
        except NotNiceError:
            continue
        assert np.all(np.diff(prof) <= 1e-14) and np.all((prof >= 0) & (prof <= 1))
        # split after two segments: shift the window forward and continue
        w2 = w
        for lv, cl in canon[:2]:
            w2 = concat_arrays(w2, lv, cl)
        rest = chain_ext(tri, canon[2:])
        if prof[2] == 0:
            continue
        second = survival_prob_exact(w2, rest)
        assert prof[4] == pytest.approx(prof[2] * second, rel=1e-9, abs=1e-300)


def test_z_pad_and_depth_insensitive(tri, tri_windows):
    rng = make_stream(13)
    for w in tri_windows[:6]:
        ext = chain_ext(tri, sample_segments(tri, 1, rng))
        try:
            z4 = survival_prob_exact(w, ext, pad=4)
        except NotNiceError:
            continue
        z12 = survival_prob_exact(w, ext, pad=12)
        assert z4 == pytest.approx(z12, rel=1e-10, abs=1e-300)


def test_one_step_log_ratio_matches_exact(tri, tri_windows):
    rng = make_stream(17)
    segs = sample_segments(tri, len(tri_windows), rng)
    got = one_step_log_ratio(tri_windows, segs)
    for w, s, g in zip(tri_windows, segs, got):
        z = survival_prob_exact(w, [s])
        if z > 0:
            assert g == pytest.approx(math.log(z), abs=1e-10)
        else:
            assert g == -math.inf
    # grouping must not matter
    got2 = np.concatenate([one_step_log_ratio(tri_windows[i:i + 3], segs[i:i + 3])
                           for i in range(0, len(segs), 3)])
    np.testing.assert_array_equal(got, got2)


def test_not_nice_raises(ladder):
    # a window occupying both rails of level 0 cannot be avoided
    w = windows_from_iterable([(np.array([0, 0, 1]), np.array([0, 1, 1]))], ladder)
    with pytest.raises(NotNiceError):
        survival_prob_exact(w, [(np.array([0, 1]), np.array([0, 0]))], bottom=-5)


def test_level_chain_batch_independent(tri, tri_windows):
    frees = [w.free_mask(-12, 0) for w in tri_windows[:4]]
    joint = level_chain(tri, np.stack(frees)).logmass
    for i, f in enumerate(frees):
        np.testing.assert_array_equal(level_chain(tri, f).logmass[0], joint[i])


# -- solver variants ----------------------------------------------------------

def test_z_bar_one_step_lower_bound(tri, tri_windows):
    rng = make_stream(21)
    for w in tri_windows[:8]:
        ext = chain_ext(tri, sample_segments(tri, 1, rng))
        blocked = {int(c) for l, c in zip(*ext[0]) if l == 0} | {0}
        for c in range(tri.n_cells):
            if c in blocked or (1, c) in set(zip(ext[0][0].tolist(), ext[0][1].tolist())):
                continue
            assert z_bar(w, ext, tri.site(0, c)) >= tri.forward - 1e-14


def test_z_hat_below_z_bar(tri, tri_windows):
    rng = make_stream(23)
    for w in tri_windows[:5]:
        ext = chain_ext(tri, sample_segments(tri, 2, rng))
        for c in range(1, tri.n_cells):
            z = tri.site(0, c)
            assert z_hat(w, ext, z) <= z_bar(w, ext, z) + 1e-14


def test_z_star_is_probability(tri, tri_windows):
    rng = make_stream(29)
    w = tri_windows[0]
    ext = chain_ext(tri, sample_segments(tri, 1, rng))
    v = z_star(w, ext, 3)
    assert 0.0 <= v
    with pytest.raises(ValueError):
        z_star(w, ext, 50)


def test_field_csv(ladder):
    fld = window_field(straight_window(ladder, 2), pad=1)
    text = fld.to_csv()
    lines = text.strip().splitlines()
    assert lines[0] == "level,t1,h"
    assert len(lines) == 1 + fld.array.size
