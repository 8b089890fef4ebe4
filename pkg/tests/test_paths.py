import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cylex.cylinder import make_stream
from cylex.errors import StructureError
from cylex.paths import (Completion, PathWindow, Segment, agreement_count, agrees_last_k, concat, concat_arrays,
                         cross_sections, enumerate_segments, in_V, in_V_k, in_W, is_nice, sample_segments,
                         straight_segment, straight_window, window_from_text, window_to_text,
                         windows_from_iterable)

from oracles import bfs_components


def _random_window(cfg, depth, seed):
    rng = make_stream(seed)
    return windows_from_iterable(sample_segments(cfg, depth, rng), cfg)


def test_segment_structure(tri):
    s = straight_segment(tri, 3, 1)
    assert s.start == tri.site(2, 1) and s.end == tri.site(3, 1)
    with pytest.raises(StructureError):
        Segment((tri.site(0, 0),), 1)
    with pytest.raises(StructureError):
        Segment((tri.site(0, 0), tri.site(1, 0), tri.site(0, 0), tri.site(1, 0)), 1)
    bad = Segment((tri.site(0, 0), tri.site(0, 0), tri.site(1, 0)), 1)
    with pytest.raises(StructureError):
        bad.validate(tri)


def test_in_W(tri):
    s = Segment((tri.site(0, 0), tri.site(-1, 0), tri.site(0, 0), tri.site(1, 0)), 1)
    assert in_W(s, -2) and not in_W(s, -1)


def test_canonical_translation_invariance(tri):
    segs = [Segment((tri.site(4, 1), tri.site(4, 2), tri.site(5, 2)), 5),
            Segment((tri.site(5, 2), tri.site(4, 2), tri.site(4, 0), tri.site(5, 0), tri.site(6, 0)), 6)]
    w = PathWindow(tri, segs)
    shifted = [s.shifted(-9, tri, 2) for s in segs]
    assert PathWindow(tri, shifted) == w
    assert w.endpoint == tri.site(0, 0)
    assert w.depth == 2
    assert hash(PathWindow(tri, shifted)) == hash(w)


def test_window_rejects_broken_chain(tri):
    a = straight_segment(tri, 1, 0)
    b = straight_segment(tri, 2, 1)
    with pytest.raises(StructureError):
        PathWindow(tri, [a, b])
    with pytest.raises(StructureError):
        PathWindow(tri, [])


def test_concat_matches_segment_construction(tri):
    rng = make_stream(3)
    raw = sample_segments(tri, 5, rng)
    w = windows_from_iterable(raw[:4], tri)
    lv, cl = raw[4]
    w5 = concat_arrays(w, lv, cl)
    seg = Segment.from_arrays(lv, cl, tri)
    assert concat(w, seg) == w5
    assert w5.depth == 5
    # truncation keeps the newest segments
    assert agrees_last_k(w5.truncated(3), w5, 3)
    assert w5.truncated(3).depth == 3
    with pytest.raises(StructureError):
        concat(w, straight_segment(tri, 2, 0))


def test_agreement_count(tri):
    w = _random_window(tri, 6, 11)
    seg = Segment((tri.site(0, 0), tri.site(0, 1), tri.site(1, 1)), 1)
    a = concat(w, seg)
    b = concat(straight_window(tri, 6), seg)
    assert agreement_count(a, b) >= 1
    assert agrees_last_k(a, b, 1)
    assert agrees_last_k(a, b, 0)
    with pytest.raises(ValueError):
        agrees_last_k(a, b, 8)
    assert agreement_count(a, a) == a.depth


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depth=st.integers(1, 6), L=st.sampled_from([2, 3, 4]),
       completion=st.sampled_from(list(Completion)))
def test_text_roundtrip(seed, depth, L, completion):
    from cylex.cylinder import CylinderConfig
    cfg = CylinderConfig(2, L, 0.75)
    w = _random_window(cfg, depth, seed).with_completion(completion)
    back = window_from_text(window_to_text(w), cfg)
    assert back == w
    assert back.completion is completion


def test_segments_roundtrip(tri):
    w = _random_window(tri, 5, 2)
    assert PathWindow(tri, w.segments) == w


def test_sampled_segments_start_and_end(tri):
    rng = make_stream(8)
    for lv, cl in sample_segments(tri, 200, rng, start_cells=np.full(200, 2)):
        assert lv[0] == 0 and cl[0] == 2 and lv[-1] == 1
        assert np.all(lv[:-1] <= 0)
        Segment.from_arrays(lv, cl, tri).validate(tri)


def test_sampled_shapes_match_enumeration(tri):
    """Frequencies of the short segment shapes against exact probabilities."""
    exact = {}
    for (lv, cl), q in enumerate_segments(tri, 4):
        exact[(lv.tobytes(), cl.tobytes())] = q
    n = 100_000
    rng = make_stream(21)
    freq = {}
    for lv, cl in sample_segments(tri, n, rng):
        k = (lv.tobytes(), cl.tobytes())
        if k in exact:
            freq[k] = freq.get(k, 0) + 1
    for k, q in exact.items():
        if q * n < 50:
            continue
        f = freq.get(k, 0) / n
        assert abs(f - q) < 4.5 * math.sqrt(q * (1 - q) / n)


def test_enumerated_mass_approaches_one(tri):
    m8 = sum(q for _, q in enumerate_segments(tri, 8))
    m12 = sum(q for _, q in enumerate_segments(tri, 12))
    assert 0 < 1 - m12 < 1 - m8 < 0.15


def _oracle_profile(w):
    cfg = w.cfg
    bottom = min(w.min_level, -w.depth) - 1
    free = w.free_mask(bottom, 0)
    lab = bfs_components(cfg, free, vertical=True)
    good = set(lab[0][lab[0] >= 0]) & set(lab[-1][lab[-1] >= 0])
    J, D = {}, {}
    for k in range(free.shape[0]):
        cells = [c for c in range(cfg.n_cells) if lab[k, c] in good]
        D[bottom + k] = frozenset(cells)
        row = np.zeros_like(free)
        row[k, cells] = True
        lab2 = bfs_components(cfg, row, vertical=False)
        J[bottom + k] = int(len(cells) > 0 and len({lab2[k, c] for c in cells}) == 1)
    return J, D


@pytest.mark.parametrize("seed", range(12))
def test_cross_sections_vs_bfs(seed, tri):
    from cylex.cylinder import CylinderConfig
    for cfg in (tri, CylinderConfig(3, 3, 0.75)):
        w = _random_window(cfg, 5, seed)
        prof = cross_sections(w)
        J, D = _oracle_profile(w)
        assert prof.J == J
        assert prof.D == D


def test_blocked_level_is_not_nice(tri):
    seg = Segment((tri.site(-1, 0), tri.site(-1, 1), tri.site(-1, 2), tri.site(0, 2)), 0)
    w = PathWindow(tri, [straight_segment(tri, -1, 0), seg])
    assert not cross_sections(w).nonempty
    assert not is_nice(w)
    assert is_nice(straight_window(tri, 4))


def test_in_V_k(tri, ladder):
    w = straight_window(tri, 6)
    assert in_V_k(w, 0)
    assert in_V_k(w, 6)
    assert in_V(w, 6, 3)
    with pytest.raises(ValueError):
        in_V_k(w, 7)
    # on the ladder with a straight obstacle every level is a single free cell
    assert in_V_k(straight_window(ladder, 4), 4)


def test_tail_indicator(tri, ladder):
    p = cross_sections(straight_window(tri, 3))
    assert p.indicator(-50) == 1
    assert cross_sections(straight_window(ladder, 3)).indicator(-50) == 1
    with pytest.raises(ValueError):
        p.indicator(1)


def test_default_bottom(tri):
    w = straight_window(tri, 4)
    assert w.default_bottom(4) == -8
    assert w.with_completion("absorb").default_bottom(4) == -4
    lv, cl = w.obstacle_arrays(-8)
    assert lv.min() == -8 and np.all(cl[lv < -4] == w.start_cell)
