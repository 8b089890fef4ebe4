"""Path segments, finite windows of half-infinite paths, and path predicates.

A *segment* is a walk piece that starts one level below its target level,
stays strictly below the target until its last step, and ends on the
target level.  A half-infinite path that has just reached level 0 splits
into such segments, one per level; a :class:`PathWindow` keeps the top
``depth`` of them, shifted so the top endpoint sits at level 0 and torus
cell 0 (canonical form, which makes torus translates compare equal).

Below the oldest kept segment the window is *completed* by one of two rules:

* ``Completion.STRAIGHT`` - the path continues straight down from the first
  site of the oldest segment forever (a canonical nice tail);
* ``Completion.ABSORB`` - everything below level ``-depth`` is treated as a
  killing boundary for conditioned walks.

Sites are stored as flat ``(level, cell)`` integer arrays, see
:mod:`cylex.cylinder`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .cylinder import CylinderConfig, Site, step_cells
from .errors import StructureError


class Completion(str, enum.Enum):
    STRAIGHT = "straight"
    ABSORB = "absorb"


# ---------------------------------------------------------------------------
# segments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    """One level crossing: from level ``target_level - 1`` up to ``target_level``."""

    sites: tuple[Site, ...]
    target_level: int

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(Site(int(s.level), tuple(int(x) for x in s.torus)) for s in self.sites))
        object.__setattr__(self, "target_level", int(self.target_level))
        if len(self.sites) < 2:
            raise StructureError("a segment has at least two sites")
        i = self.target_level
        if self.sites[0].level != i - 1:
            raise StructureError(f"segment must start at level {i - 1}, starts at {self.sites[0].level}")
        if self.sites[-1].level != i:
            raise StructureError(f"segment must end at level {i}, ends at {self.sites[-1].level}")
        if any(s.level >= i for s in self.sites[:-1]):
            raise StructureError("segment interior must stay below its target level")

    @property
    def start(self) -> Site:
        return self.sites[0]

    @property
    def end(self) -> Site:
        return self.sites[-1]

    def __len__(self) -> int:
        return len(self.sites)

    def validate(self, cfg: CylinderConfig) -> None:
        """Check that consecutive sites are cylinder neighbours."""
        for s in self.sites:
            cfg.validate_site(s)
        lv, cl = _sites_to_arrays(self.sites, cfg)
        if not _is_walk(lv, cl, cfg):
            raise StructureError("consecutive segment sites are not neighbours")

    def arrays(self, cfg: CylinderConfig) -> tuple[np.ndarray, np.ndarray]:
        return _sites_to_arrays(self.sites, cfg)

    @classmethod
    def from_arrays(cls, levels, cells, cfg: CylinderConfig) -> "Segment":
        sites = tuple(Site(int(l), cfg.torus_of(int(c))) for l, c in zip(levels, cells))
        return cls(sites, int(levels[-1]))

    def shifted(self, dlevel: int, cfg: CylinderConfig, dcell: int = 0) -> "Segment":
        """Translate by ``dlevel`` levels and torus shift ``cell(dcell)``."""
        lv, cl = self.arrays(cfg)
        return Segment.from_arrays(lv + dlevel, cfg.translation_table[cl, dcell], cfg)


def straight_segment(cfg: CylinderConfig, target_level: int = 1, cell: int = 0) -> Segment:
    """The one-step segment straight up into ``target_level``."""
    return Segment((cfg.site(target_level - 1, cell), cfg.site(target_level, cell)), target_level)


def _sites_to_arrays(sites: Sequence[Site], cfg: CylinderConfig):
    lv = np.fromiter((s.level for s in sites), dtype=np.int64, count=len(sites))
    cl = np.fromiter((cfg.cell_of(s.torus) for s in sites), dtype=np.int64, count=len(sites))
    return lv, cl


def _is_walk(lv: np.ndarray, cl: np.ndarray, cfg: CylinderConfig) -> bool:
    if len(lv) < 2:
        return True
    dl = np.diff(lv)
    vertical = (np.abs(dl) == 1) & (cl[1:] == cl[:-1])
    adj = cfg.lateral_matrix > 0
    lateral = (dl == 0) & adj[cl[:-1], cl[1:]]
    return bool(np.all(vertical | lateral))


def in_W(s: Segment, j: int) -> bool:
    """True iff the segment never touches a level ``<= j``."""
    return min(site.level for site in s.sites) > j


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

class PathWindow:
    """The top ``depth`` segments of a half-infinite path, in canonical position.

    Attributes ``levels`` and ``cells`` hold all sites oldest-first;
    segment ``i`` (0 = oldest) occupies ``bounds[i]:bounds[i+1]``, and
    consecutive segments share their junction site.  Segment ``i`` targets
    level ``i - depth + 1`` so the newest one ends at ``(0, cell 0)``.
    """

    __slots__ = ("cfg", "levels", "cells", "bounds", "completion", "_key")

    def __init__(self, cfg: CylinderConfig, segments: Sequence[Segment],
                 completion: Completion | str = Completion.STRAIGHT):
        if len(segments) < 1:
            raise StructureError("a window needs at least one segment")
        completion = Completion(completion)
        arrs = []
        for i, s in enumerate(segments):
            s.validate(cfg)
            if i > 0 and s.start != segments[i - 1].end:
                raise StructureError(f"segment {i} does not start where segment {i - 1} ends")
            if i > 0 and s.target_level != segments[i - 1].target_level + 1:
                raise StructureError("segment target levels must increase by one")
            arrs.append(s.arrays(cfg))
        lv = np.concatenate([a[0] for a in arrs])
        cl = np.concatenate([a[1] for a in arrs])
        bounds = np.cumsum([0] + [len(a[0]) for a in arrs])
        self._set(cfg, lv, cl, bounds, completion, canonicalize=True)

    @classmethod
    def _raw(cls, cfg, levels, cells, bounds, completion, canonicalize=True) -> "PathWindow":
        w = cls.__new__(cls)
        w._set(cfg, levels, cells, bounds, completion, canonicalize)
        return w

    def _set(self, cfg, lv, cl, bounds, completion, canonicalize):
        lv = np.asarray(lv, dtype=np.int64)
        cl = np.asarray(cl, dtype=np.int64)
        if canonicalize:
            lv = lv - lv[-1]
            cl = cfg.translation_table[cl, cfg.negation_table[cl[-1]]]
        for a in (lv, cl):
            a.setflags(write=False)
        b = np.asarray(bounds, dtype=np.int64)
        b.setflags(write=False)
        self.cfg = cfg
        self.levels = lv
        self.cells = cl
        self.bounds = b
        self.completion = Completion(completion)
        self._key = None

    # -- basic accessors ----------------------------------------------
    @property
    def depth(self) -> int:
        return len(self.bounds) - 1

    @property
    def endpoint(self) -> Site:
        return self.cfg.site(int(self.levels[-1]), int(self.cells[-1]))

    @property
    def start_cell(self) -> int:
        """Cell of the first site (level ``-depth``), where the tail attaches."""
        return int(self.cells[0])

    def segment_arrays(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Arrays of segment ``i`` counted from the top: 0 = newest (gamma_0)."""
        if not (0 <= i < self.depth):
            raise IndexError(i)
        k = self.depth - 1 - i
        a, b = self.bounds[k], self.bounds[k + 1]
        return self.levels[a:b], self.cells[a:b]

    @property
    def segments(self) -> tuple[Segment, ...]:
        """Oldest first."""
        out = []
        for k in range(self.depth):
            a, b = self.bounds[k], self.bounds[k + 1]
            out.append(Segment.from_arrays(self.levels[a:b], self.cells[a:b], self.cfg))
        return tuple(out)

    def sites(self) -> set[Site]:
        return {self.cfg.site(int(l), int(c)) for l, c in zip(self.levels, self.cells)}

    def key(self) -> bytes:
        if self._key is None:
            self._key = (self.completion.value.encode() + b"|" + self.bounds.tobytes()
                         + self.levels.tobytes() + self.cells.tobytes())
        return self._key

    def __eq__(self, other) -> bool:
        return isinstance(other, PathWindow) and self.cfg == other.cfg and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        return f"PathWindow(depth={self.depth}, sites={len(self.levels)}, completion={self.completion.value})"

    @property
    def min_level(self) -> int:
        return int(self.levels.min())

    # -- slab geometry --------------------------------------------------
    def default_bottom(self, pad: int = 4) -> int:
        """Bottom level of the slab used by exact solves on this window."""
        if self.completion is Completion.ABSORB:
            return -self.depth
        return min(self.min_level, -self.depth) - pad

    def obstacle_arrays(self, bottom: int) -> tuple[np.ndarray, np.ndarray]:
        """Window sites at levels ``>= bottom`` plus the completion tail."""
        keep = self.levels >= bottom
        lv, cl = self.levels[keep], self.cells[keep]
        if self.completion is Completion.STRAIGHT and bottom < -self.depth:
            tl = np.arange(bottom, -self.depth, dtype=np.int64)
            lv = np.concatenate([tl, lv])
            cl = np.concatenate([np.full(len(tl), self.start_cell, dtype=np.int64), cl])
        return lv, cl

    def free_mask(self, bottom: int, top: int = 0) -> np.ndarray:
        """Boolean ``(top - bottom + 1, C)`` array, True for sites off the path."""
        free = np.ones((top - bottom + 1, self.cfg.n_cells), dtype=bool)
        lv, cl = self.obstacle_arrays(bottom)
        m = lv <= top
        free[lv[m] - bottom, cl[m]] = False
        return free

    # -- algebra ---------------------------------------------------------
    def truncated(self, depth: int) -> "PathWindow":
        """Keep the newest ``depth`` segments."""
        if depth < 1:
            raise ValueError("depth must be >= 1")
        if depth >= self.depth:
            return self
        k0 = self.depth - depth
        a = self.bounds[k0]
        return PathWindow._raw(self.cfg, self.levels[a:], self.cells[a:], self.bounds[k0:] - a,
                               self.completion, canonicalize=False)

    def with_completion(self, completion: Completion | str) -> "PathWindow":
        return PathWindow._raw(self.cfg, self.levels, self.cells, self.bounds, completion, canonicalize=False)


def concat(w: PathWindow, s: Segment, max_depth: int | None = None) -> PathWindow:
    """Append a segment that starts at the window's endpoint and targets level 1.

    The result is re-shifted so its new endpoint is at ``(0, cell 0)``.  With
    ``max_depth`` the oldest segments are dropped to keep that depth.
    """
    if s.target_level != 1 or s.start != w.endpoint:
        raise StructureError(f"segment must start at the window endpoint {w.endpoint} and target level 1")
    s.validate(w.cfg)
    lv, cl = s.arrays(w.cfg)
    return concat_arrays(w, lv, cl, max_depth)


def concat_arrays(w: PathWindow, lv: np.ndarray, cl: np.ndarray, max_depth: int | None = None) -> PathWindow:
    """Fast, unchecked :func:`concat` on ``(levels, cells)`` of a canonical segment
    (starting at ``(0, 0)``, ending on level 1)."""
    cfg = w.cfg
    k0 = 0
    if max_depth is not None and w.depth + 1 > max_depth:
        k0 = w.depth + 1 - max_depth
    a = w.bounds[k0]
    levels = np.concatenate([w.levels[a:], lv])
    cells = np.concatenate([w.cells[a:], cl])
    bounds = np.concatenate([w.bounds[k0:] - a, [w.bounds[-1] - a + len(lv)]])
    return PathWindow._raw(cfg, levels, cells, bounds, w.completion, canonicalize=True)


def straight_window(cfg: CylinderConfig, depth: int, completion: Completion | str = Completion.STRAIGHT) -> PathWindow:
    """Window of ``depth`` one-step vertical segments (a straight line)."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    lv = np.repeat(np.arange(-depth, 0, dtype=np.int64), 2)
    lv[1::2] += 1
    cl = np.zeros_like(lv)
    bounds = np.arange(0, 2 * depth + 1, 2)
    return PathWindow._raw(cfg, lv, cl, bounds, completion, canonicalize=True)


def window_from_segments(cfg, segments: Sequence[Segment], completion=Completion.STRAIGHT) -> PathWindow:
    return PathWindow(cfg, segments, completion)


def agrees_last_k(w: PathWindow, w2: PathWindow, k: int) -> bool:
    """True iff the newest ``k`` segments coincide (up to torus translation)."""
    if k < 0 or k > min(w.depth, w2.depth):
        raise ValueError(f"k={k} exceeds window depth {min(w.depth, w2.depth)}")
    if k == 0:
        return True
    a = w.bounds[w.depth - k]
    b = w2.bounds[w2.depth - k]
    if len(w.levels) - a != len(w2.levels) - b:
        return False
    if not (np.array_equal(w.levels[a:], w2.levels[b:]) and np.array_equal(w.cells[a:], w2.cells[b:])):
        return False
    return np.array_equal(w.bounds[w.depth - k:] - a, w2.bounds[w2.depth - k:] - b)


def agreement_count(w: PathWindow, w2: PathWindow) -> int:
    """Largest ``k`` with ``agrees_last_k(w, w2, k)``."""
    k = 0
    kmax = min(w.depth, w2.depth)
    while k < kmax:
        la, lb = w.segment_arrays(k), w2.segment_arrays(k)
        if not (np.array_equal(la[0], lb[0]) and np.array_equal(la[1], lb[1])):
            break
        k += 1
    return k


# ---------------------------------------------------------------------------
# cross sections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrossSectionProfile:
    """Connectivity of the avoidable region level by level.

    ``J[j]`` for ``j`` in ``levels`` (``bottom .. 0``) is 1 iff ``D_j`` is
    nonempty and connected on the level torus.  ``D[j]`` is the set of cells
    of level ``j`` in the complement component joining the bottom to level 0.
    Levels below ``bottom`` belong to the completion: ``tail_J`` applies.
    """

    bottom: int
    J: dict
    D: dict
    tail_J: int

    @property
    def nonempty(self) -> bool:
        return len(self.D.get(0, ())) > 0

    def indicator(self, j: int) -> int:
        if j > 0:
            raise ValueError("levels above 0 are not part of the window")
        if j < self.bottom:
            return self.tail_J
        return self.J[j]

    def count(self, lo: int, hi: int) -> int:
        """Number of connected levels ``j`` with ``lo <= j <= hi``."""
        return sum(self.indicator(j) for j in range(lo, hi + 1))


def _grid_components(free: np.ndarray, adj: np.ndarray, vertical: bool):
    """Connected components of the free sites of a ``(nlev, C)`` slab graph."""
    nlev, C = free.shape
    idx = -np.ones(free.shape, dtype=np.int64)
    fl = np.flatnonzero(free.ravel())
    idx.ravel()[fl] = np.arange(len(fl))
    rows, cols = [], []
    ii, jj = np.nonzero(adj)
    for lev in range(nlev):
        ok = free[lev, ii] & free[lev, jj]
        rows.append(idx[lev, ii[ok]])
        cols.append(idx[lev, jj[ok]])
    if vertical and nlev > 1:
        ok = free[:-1] & free[1:]
        a, c = np.nonzero(ok)
        rows.append(idx[a, c])
        cols.append(idx[a + 1, c])
    r = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    c = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    n = len(fl)
    g = coo_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    lab = -np.ones(free.shape, dtype=np.int64)
    lab.ravel()[fl] = labels
    return lab


def cross_sections(w: PathWindow) -> CrossSectionProfile:
    """Compute ``D_j`` and ``J_j`` from a component search on the slab complement."""
    cfg = w.cfg
    if w.completion is Completion.STRAIGHT:
        bottom = min(w.min_level, -w.depth) - 1
    else:
        bottom = -w.depth
    free = w.free_mask(bottom, 0)
    adj = cfg.lateral_matrix > 0
    lab = _grid_components(free, adj, vertical=True)
    good = set(lab[0][lab[0] >= 0].tolist()) & set(lab[-1][lab[-1] >= 0].tolist())
    inD = np.isin(lab, list(good)) & (lab >= 0)
    lab2 = _grid_components(inD, adj, vertical=False)
    J, D = {}, {}
    for k in range(free.shape[0]):
        j = bottom + k
        cells = np.flatnonzero(inD[k])
        D[j] = frozenset(cells.tolist())
        J[j] = int(len(cells) > 0 and len(np.unique(lab2[k, cells])) == 1)
    nonempty = bool(good)
    # Below the slab the straight tail removes one cell per level: the rest of
    # the torus is connected whenever the torus minus one cell is.
    tail_J = 0
    if w.completion is Completion.STRAIGHT and nonempty:
        tail_J = int(_torus_minus_one_connected(cfg))
    return CrossSectionProfile(bottom=bottom, J=J, D=D, tail_J=tail_J)


def _torus_minus_one_connected(cfg: CylinderConfig) -> bool:
    free = np.ones((1, cfg.n_cells), dtype=bool)
    free[0, 0] = False
    if cfg.n_cells == 1:
        return False
    lab = _grid_components(free, cfg.lateral_matrix > 0, vertical=False)
    return len(np.unique(lab[0, 1:])) == 1


def is_nice(w: PathWindow, min_connected: int = 1) -> bool:
    """Window-scale surrogate of niceness.

    True iff the complement component joining the slab bottom to level 0
    exists and at least ``min_connected`` of the levels ``-depth .. -1`` have
    a connected slice.
    """
    prof = cross_sections(w)
    if not prof.nonempty:
        return False
    return prof.count(-w.depth, -1) >= min_connected


def in_V(w: PathWindow, k: int, j: int, delta: float = 0.25, profile: CrossSectionProfile | None = None) -> bool:
    """``sum_{i=-k}^{-k+j-1} J_i > delta * j``."""
    if k > w.depth:
        raise ValueError(f"k={k} exceeds window depth {w.depth}")
    if j < 0 or j > k:
        raise ValueError("need 0 <= j <= k")
    prof = profile if profile is not None else cross_sections(w)
    return prof.count(-k, -k + j - 1) > delta * j


def in_V_k(w: PathWindow, k: int, delta: float = 0.25, profile: CrossSectionProfile | None = None) -> bool:
    """Conjunction of :func:`in_V` over integers ``j`` with ``k/2 <= j <= k``.

    ``k = 0`` is vacuous (true).
    """
    if k > w.depth:
        raise ValueError(f"k={k} exceeds window depth {w.depth}")
    if k <= 0:
        return True
    prof = profile if profile is not None else cross_sections(w)
    J = np.array([prof.indicator(i) for i in range(-k, 0)])
    csum = np.concatenate([[0], np.cumsum(J)])
    for j in range(math.ceil(k / 2), k + 1):
        if not csum[j] > delta * j:
            return False
    return True


# ---------------------------------------------------------------------------
# sampling and enumeration of segments
# ---------------------------------------------------------------------------

def sample_segments(cfg: CylinderConfig, n: int, rng: np.random.Generator, start_cells=None,
                    chunk: int = 64) -> list[tuple[np.ndarray, np.ndarray]]:
    """Sample ``n`` segments of the plain walk from level 0 to level 1.

    Returns a list of ``(levels, cells)`` arrays starting at ``(0, start_cell)``
    (cell 0 by default).  Segments are uncapped: every walk runs until it
    reaches level 1, which happens almost surely thanks to the drift.
    """
    if start_cells is None:
        start_cells = np.zeros(n, dtype=np.int64)
    start_cells = np.asarray(start_cells, dtype=np.int64)
    lev = np.zeros(n, dtype=np.int64)
    cel = start_cells.copy()
    hist_l = [lev.copy()]
    hist_c = [cel.copy()]
    done_at = np.full(n, -1, dtype=np.int64)
    active = np.arange(n)
    t = 0
    while len(active):
        u = rng.random(len(active))
        nl, nc = step_cells(lev[active], cel[active], cfg, u)
        lev[active] = nl
        cel[active] = nc
        t += 1
        hist_l.append(lev.copy())
        hist_c.append(cel.copy())
        fin = nl == 1
        done_at[active[fin]] = t
        active = active[~fin]
    HL = np.stack(hist_l)
    HC = np.stack(hist_c)
    return [(HL[: done_at[i] + 1, i].copy(), HC[: done_at[i] + 1, i].copy()) for i in range(n)]


def sample_segment(cfg: CylinderConfig, start: Site, rng: np.random.Generator) -> Segment:
    """Sample one segment of the plain walk from ``start`` to the next level."""
    (lv, cl), = sample_segments(cfg, 1, rng, np.array([cfg.cell_of(start.torus)]))
    return Segment.from_arrays(lv + start.level, cl, cfg)


def enumerate_segments(cfg: CylinderConfig, max_len: int) -> Iterator[tuple[tuple[np.ndarray, np.ndarray], float]]:
    """All canonical segments ``(0, 0) -> level 1`` with at most ``max_len`` steps.

    Yields ``((levels, cells), probability)``.  The missing mass is
    ``1 - sum(probabilities)`` and decays geometrically in ``max_len``.
    """
    f, b = cfg.forward, cfg.backward
    moves = cfg.lateral_moves
    stack = [((0,), (0,), 1.0)]
    while stack:
        ls, cs, pr = stack.pop()
        steps = len(ls) - 1
        l, c = ls[-1], cs[-1]
        if l == 1:
            yield (np.array(ls, dtype=np.int64), np.array(cs, dtype=np.int64)), pr
            continue
        if steps >= max_len:
            continue
        stack.append((ls + (l + 1,), cs + (c,), pr * f))
        stack.append((ls + (l - 1,), cs + (c,), pr * b))
        for t, q in moves[c]:
            stack.append((ls + (l,), cs + (t,), pr * q))


def enumerate_windows(cfg: CylinderConfig, depth: int, max_len: int,
                      completion: Completion | str = Completion.STRAIGHT) -> Iterator[tuple[PathWindow, float]]:
    """All windows built from ``depth`` enumerated segments, with their
    product probabilities.  Exponential in ``depth``; test-bed sized only."""
    segs = list(enumerate_segments(cfg, max_len))

    def rec(w, pr, left):
        if left == 0:
            yield w, pr
            return
        for (lv, cl), q in segs:
            yield from rec(concat_arrays(w, lv, cl), pr * q, left - 1)

    for (lv, cl), q in segs:
        w = PathWindow._raw(cfg, lv, cl, np.array([0, len(lv)]), completion)
        yield from rec(w, q, depth - 1)


# ---------------------------------------------------------------------------
# text serialization
# ---------------------------------------------------------------------------

def window_to_text(w: PathWindow) -> str:
    """Line format: a header, then ``segment <target>`` followed by one
    ``<level> <t1> ... <t(d-1)>`` line per site."""
    cfg = w.cfg
    out = [f"# window d={cfg.d} L={cfg.L} depth={w.depth} completion={w.completion.value}"]
    for s in w.segments:
        out.append(f"segment {s.target_level}")
        for site in s.sites:
            out.append(" ".join(str(x) for x in (site.level, *site.torus)))
    return "\n".join(out) + "\n"


def window_from_text(text: str, cfg: CylinderConfig) -> PathWindow:
    completion = Completion.STRAIGHT
    segs: list[tuple[int, list[Site]]] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if tok.startswith("completion="):
                    completion = Completion(tok.split("=", 1)[1])
            continue
        parts = line.split()
        if parts[0] == "segment":
            segs.append((int(parts[1]), []))
            continue
        if not segs:
            raise StructureError("site line before the first 'segment' header")
        vals = [int(x) for x in parts]
        if len(vals) != cfg.d:
            raise StructureError(f"expected {cfg.d} integers per site line, got {line!r}")
        segs[-1][1].append(cfg.site(vals[0], vals[1:]))
    return PathWindow(cfg, [Segment(tuple(s), t) for t, s in segs], completion)


def windows_from_iterable(items: Iterable[tuple[np.ndarray, np.ndarray]], cfg, completion=Completion.STRAIGHT) -> PathWindow:
    """Chain canonical segment arrays into a window."""
    items = list(items)
    lv, cl = items[0]
    w = PathWindow._raw(cfg, lv, cl, np.array([0, len(lv)]), completion)
    for lv, cl in items[1:]:
        w = concat_arrays(w, lv, cl)
    return w


__all__ = [
    "Completion", "Segment", "PathWindow", "CrossSectionProfile",
    "concat", "concat_arrays", "agrees_last_k", "agreement_count", "cross_sections", "is_nice",
    "in_V", "in_V_k", "in_W", "straight_segment", "straight_window", "sample_segment",
    "sample_segments", "enumerate_segments", "enumerate_windows", "window_to_text",
    "window_from_text", "windows_from_iterable",
]
