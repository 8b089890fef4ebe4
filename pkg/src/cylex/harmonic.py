"""Exact computations for walks conditioned to avoid a path.

Everything here rests on one block recursion over levels.  For a slab
``bottom .. top`` with an obstacle, let ``E_j`` be the ``C x C`` matrix of
probabilities that the walk started at ``(j, x)`` first reaches level
``j + 1`` at ``(j + 1, y)`` without touching the obstacle and without
dropping below the slab.  Splitting on the first step,

    E_j = (I - R_j)^{-1} F_j,
    R_j = P_j (Lat + b Q_{j-1} E_{j-1}) P_j,
    F_j = f P_j P_{j+1},

where ``P_j`` is the diagonal 0/1 projector on free cells of level ``j``,
``Lat`` the lateral kernel, ``f, b`` the forward/backward probabilities and
``E_{bottom-1} = 0`` (killing below the slab).  Products ``E_i ... E_j``
give arrival distributions; backward products give the survival-harmonic
function ``h``.  The recursion is vectorised over a batch of obstacles, so
ensembles of windows are evaluated together.

Arriving on an obstacle site counts as hitting it (the walk must reach each
level at a free site).
"""
from __future__ import annotations

import csv
import io
import itertools

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cylinder import CylinderConfig, Site
from .errors import BudgetError, EmptyMeasureError, NotNiceError, UndefinedStateError
from .paths import Completion, PathWindow, Segment

DEFAULT_PAD = 4


# ---------------------------------------------------------------------------
# the batched level recursion
# ---------------------------------------------------------------------------

@dataclass
class LevelChain:
    """Output of :func:`level_chain`.

    ``logmass[b, j]`` is the log of the probability that the walk reaches
    level index ``j`` (counted from the slab bottom) at a free site without
    touching the obstacle; ``arrival[b, j]`` is the normalised arrival
    distribution there.  ``E`` (optional) holds the per-level matrices.
    """

    logmass: np.ndarray
    arrival: np.ndarray
    E: np.ndarray | None = None


def level_chain(cfg: CylinderConfig, free: np.ndarray, start_idx=0, start: np.ndarray | None = None,
                keep_E: bool = False) -> LevelChain:
    """Run the recursion on a batch of slabs.

    Parameters
    ----------
    free : bool array ``(batch, nlev, C)``; index 0 is the slab bottom.
    start_idx : level index where the walk starts (scalar or per batch).
    start : optional ``(batch, C)`` start weights; default uniform over the
        free cells of the start level.  Normalised internally.
    """
    free = np.asarray(free, dtype=bool)
    if free.ndim == 2:
        free = free[None]
    nb, nlev, C = free.shape
    ff = free.astype(float)
    lat = cfg.lateral_matrix
    fwd, bwd = cfg.forward, cfg.backward
    sidx = np.broadcast_to(np.asarray(start_idx, dtype=np.int64), (nb,))
    eye = np.eye(C)

    nu = np.zeros((nb, C))
    run = np.full(nb, -np.inf)
    logmass = np.full((nb, nlev), -np.inf)
    arrival = np.zeros((nb, nlev, C))
    Eprev = np.zeros((nb, C, C))
    Es = np.zeros((nb, max(nlev - 1, 0), C, C)) if keep_E else None

    for j in range(nlev):
        inj = sidx == j
        if inj.any():
            v = ff[inj, j] if start is None else np.asarray(start, dtype=float)[inj] * ff[inj, j]
            s = v.sum(axis=-1)
            ok = s > 0
            vv = np.zeros_like(v)
            vv[ok] = v[ok] / s[ok, None]
            nu[inj] = vv
            r = np.full(len(s), -np.inf)
            r[ok] = np.log(s[ok]) if start is not None else 0.0
            run[inj] = r
        logmass[:, j] = run
        arrival[:, j] = nu
        if j == nlev - 1:
            break
        fj = ff[:, j]
        fn = ff[:, j + 1]
        fp = ff[:, j - 1] if j > 0 else np.zeros_like(fj)
        R = fj[:, :, None] * (lat[None] * fj[:, None, :] + bwd * fp[:, :, None] * Eprev)
        A = eye[None] - R
        E = np.linalg.solve(A, np.broadcast_to(eye, A.shape)) * (fwd * fj * fn)[:, None, :]
        if keep_E:
            Es[:, j] = E
        nxt = np.einsum("bi,bij->bj", nu, E)
        s = nxt.sum(axis=-1)
        ok = s > 0
        nu = np.zeros_like(nxt)
        nu[ok] = nxt[ok] / s[ok, None]
        with np.errstate(divide="ignore"):
            run = np.where(ok, run + np.log(np.where(ok, s, 1.0)), -np.inf)
        Eprev = E
    return LevelChain(logmass=logmass, arrival=arrival, E=Es)


def free_from_sites(cfg: CylinderConfig, bottom: int, top: int, levels: np.ndarray, cells: np.ndarray) -> np.ndarray:
    free = np.ones((top - bottom + 1, cfg.n_cells), dtype=bool)
    m = (levels >= bottom) & (levels <= top)
    free[levels[m] - bottom, cells[m]] = False
    return free


def _levels_of_ext(ext_arrays: Sequence[tuple[np.ndarray, np.ndarray]]):
    if not ext_arrays:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return (np.concatenate([a[0] for a in ext_arrays]), np.concatenate([a[1] for a in ext_arrays]))


# ---------------------------------------------------------------------------
# slabs and harmonic fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Slab:
    """Levels ``bottom .. top`` with an obstacle; killing below ``bottom``."""

    bottom: int
    top: int
    obstacle: frozenset

    def __post_init__(self):
        if self.top < self.bottom:
            raise ValueError("slab top must not lie below its bottom")
        object.__setattr__(self, "obstacle", frozenset(self.obstacle))
        for s in self.obstacle:
            if not (self.bottom <= s.level <= self.top):
                raise ValueError(f"obstacle site {s} outside the slab")

    @classmethod
    def from_window(cls, w: PathWindow, pad: int = DEFAULT_PAD, bottom: int | None = None,
                    extra: Sequence[Segment] = (), top: int = 0) -> "Slab":
        """Slab holding the window (plus completion tail) and extension segments."""
        b = w.default_bottom(pad) if bottom is None else bottom
        for s in extra:
            b = min(b, min(x.level for x in s.sites) - (0 if w.completion is Completion.ABSORB else pad))
        lv, cl = w.obstacle_arrays(b)
        obs = {w.cfg.site(int(l), int(c)) for l, c in zip(lv, cl) if l <= top}
        for s in extra:
            obs.update(x for x in s.sites if b <= x.level <= top)
        return cls(b, top, frozenset(obs))

    def free_mask(self, cfg: CylinderConfig) -> np.ndarray:
        free = np.ones((self.top - self.bottom + 1, cfg.n_cells), dtype=bool)
        for s in self.obstacle:
            free[s.level - self.bottom, cfg.cell_of(s.torus)] = False
        return free


@dataclass
class HarmonicField:
    """``h(z)`` = probability to reach the slab top at a free site before
    touching the obstacle or leaving through the bottom."""

    slab: Slab
    cfg: CylinderConfig
    array: np.ndarray                 # (nlev, C), index 0 = bottom
    residual: float
    degenerate: bool = False
    E: np.ndarray | None = field(default=None, repr=False)

    def __getitem__(self, z: Site) -> float:
        j = z.level - self.slab.bottom
        if j < 0 or z.level > self.slab.top:
            return 0.0
        return float(self.array[j, self.cfg.cell_of(z.torus)])

    @property
    def values(self) -> dict:
        out = {}
        for j in range(self.array.shape[0]):
            for c in range(self.cfg.n_cells):
                out[self.cfg.site(self.slab.bottom + j, c)] = float(self.array[j, c])
        return out

    def to_csv(self) -> str:
        return _site_csv(self.values, self.cfg, "h")


def _harmonic_residual(cfg: CylinderConfig, free: np.ndarray, H: np.ndarray) -> float:
    """Max |h - P h| over free sites strictly below the top."""
    if H.shape[0] < 2:
        return 0.0
    up = H[1:]
    down = np.vstack([np.zeros((1, H.shape[1])), H[:-2]]) if H.shape[0] > 1 else None
    avg = cfg.forward * up + cfg.backward * down + H[:-1] @ cfg.lateral_matrix.T
    res = np.abs(H[:-1] - avg) * free[:-1]
    return float(res.max(initial=0.0))


def _sparse_h(cfg: CylinderConfig, free: np.ndarray) -> np.ndarray:
    """Direct sparse solve of the Dirichlet problem (independent of the recursion)."""
    nlev, C = free.shape
    H = np.zeros((nlev, C))
    H[-1] = free[-1]
    if nlev == 1:
        return H
    inner = free[:-1]
    idx = -np.ones((nlev - 1, C), dtype=np.int64)
    fl = np.flatnonzero(inner.ravel())
    idx.ravel()[fl] = np.arange(len(fl))
    n = len(fl)
    if n == 0:
        return H
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    lat = cfg.lateral_matrix
    for k in fl:
        j, c = divmod(int(k), C)
        i = idx[j, c]
        rows.append(i); cols.append(i); vals.append(1.0)
        # forward
        if j + 1 == nlev - 1:
            rhs[i] += cfg.forward * H[-1, c]
        elif free[j + 1, c]:
            rows.append(i); cols.append(idx[j + 1, c]); vals.append(-cfg.forward)
        if j >= 1 and free[j - 1, c]:
            rows.append(i); cols.append(idx[j - 1, c]); vals.append(-cfg.backward)
        for t in np.flatnonzero(lat[c]):
            if free[j, t]:
                rows.append(i); cols.append(idx[j, t]); vals.append(-lat[c, t])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    x = spla.spsolve(A.tocsc(), rhs)
    H[:-1].ravel()[fl] = x
    return H


def solve_h(slab: Slab, cfg: CylinderConfig, tol: float = 1e-12) -> HarmonicField:
    """Survival-harmonic function on a slab.

    Uses the block recursion ``h_j = E_j h_{j+1}``; if the harmonicity
    residual exceeds ``tol`` the sparse direct solve is used instead, then
    one step of iterative refinement.
    """
    free = slab.free_mask(cfg)
    return _solve_h_free(cfg, slab, free, tol)


def _solve_h_free(cfg, slab, free, tol):
    nlev, C = free.shape
    ch = level_chain(cfg, free[None], keep_E=True)
    E = ch.E[0]
    H = np.zeros((nlev, C))
    H[-1] = free[-1]
    for j in range(nlev - 2, -1, -1):
        H[j] = E[j] @ H[j + 1]
    res = _harmonic_residual(cfg, free, H)
    if res > tol:
        H = _sparse_h(cfg, free)
        res = _harmonic_residual(cfg, free, H)
    degenerate = not free[-1].any()
    return HarmonicField(slab=slab, cfg=cfg, array=H, residual=res, degenerate=degenerate, E=E)


def window_field(w: PathWindow, pad: int = DEFAULT_PAD, tol: float = 1e-12, bottom: int | None = None) -> HarmonicField:
    return solve_h(Slab.from_window(w, pad=pad, bottom=bottom), w.cfg, tol)


# ---------------------------------------------------------------------------
# h-process
# ---------------------------------------------------------------------------

class HProcessKernel:
    """Doob transform ``p(z, w) h(w) / h(z)`` of the walk kernel."""

    def __init__(self, h: HarmonicField, cfg: CylinderConfig):
        self.h = h
        self.cfg = cfg

    def row(self, z: Site) -> dict[Site, float]:
        cfg, h = self.cfg, self.h
        if z.level >= h.slab.top or z.level < h.slab.bottom:
            raise UndefinedStateError(f"{z} is not an interior site of the slab")
        hz = h[z]
        if hz <= 0:
            raise UndefinedStateError(f"h vanishes at {z}")
        out: dict[Site, float] = {}
        from .cylinder import neighbors
        for wsite, q in neighbors(z, cfg):
            hw = h[wsite]
            if hw > 0:
                out[wsite] = out.get(wsite, 0.0) + q * hw / hz
        return out

    __call__ = row

    def level_kernel(self, j: int) -> np.ndarray:
        """Kernel of first arrival at level ``j + 1`` from level ``j``:
        ``E_j(x, y) h_{j+1}(y) / h_j(x)`` (rows with ``h = 0`` are zero)."""
        h = self.h
        k = j - h.slab.bottom
        E = h.E[k]
        hj, hn = h.array[k], h.array[k + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            K = np.where(hj[:, None] > 0, E * hn[None, :] / hj[:, None], 0.0)
        return K


def hprocess_kernel(h: HarmonicField, cfg: CylinderConfig) -> HProcessKernel:
    return HProcessKernel(h, cfg)


# ---------------------------------------------------------------------------
# hitting measures
# ---------------------------------------------------------------------------

@dataclass
class HittingMeasure:
    level: int
    weights: dict
    defect: float = 0.0

    def vector(self, cfg: CylinderConfig) -> np.ndarray:
        v = np.zeros(cfg.n_cells)
        for s, q in self.weights.items():
            v[cfg.cell_of(s.torus)] += q
        return v

    def to_csv(self, cfg) -> str:
        return _site_csv(self.weights, cfg, "probability")


def _measure_vector(w: PathWindow, from_level: int, to_level: int, start=None, pad: int = DEFAULT_PAD,
                    bottom: int | None = None):
    cfg = w.cfg
    if not (from_level < to_level <= 0):
        raise ValueError("need from_level < to_level <= 0")
    b = w.default_bottom(pad) if bottom is None else bottom
    if w.completion is not Completion.ABSORB:
        b = min(b, from_level - pad)
    if from_level < b:
        raise ValueError(f"from_level {from_level} lies below the slab bottom {b}")
    free = w.free_mask(b, 0)
    fld = _solve_h_free(cfg, Slab(b, 0, frozenset()), free, tol=1e-10)
    H = fld.array
    E = fld.E
    i0, i1 = from_level - b, to_level - b
    h0 = H[i0]
    if start is None:
        pi = (free[i0] & (h0 > 0)).astype(float)
    else:
        pi = np.asarray(start, dtype=float) * (h0 > 0)
    if pi.sum() == 0:
        raise EmptyMeasureError(f"no live site on level {from_level}")
    pi = pi / pi.sum()
    # literal mixture of h-processes: weight 1/h at the start, h at the end
    v = np.where(h0 > 0, pi / np.where(h0 > 0, h0, 1.0), 0.0)
    for k in range(i0, i1):
        v = v @ E[k]
    v = v * H[i1]
    s = v.sum()
    if s <= 0:
        raise EmptyMeasureError(f"no conditioned path from level {from_level} to {to_level}")
    return v / s, abs(1.0 - s)


def hitting_measure(w: PathWindow, from_level: int, to_level: int, cfg: CylinderConfig | None = None,
                    start: Site | Mapping[Site, float] | None = None, pad: int = DEFAULT_PAD,
                    bottom: int | None = None) -> HittingMeasure:
    """Hitting distribution on ``to_level`` of the h-process started on ``from_level``.

    The start is the uniform distribution over live free sites of
    ``from_level`` (each started as its own h-process), or a given site /
    weight map.  ``defect`` reports ``|1 - total mass|`` before
    normalisation, which is roundoff-sized for the exact h-process.
    """
    cfg = w.cfg if cfg is None else cfg
    sv = None
    if isinstance(start, Site):
        sv = np.zeros(cfg.n_cells)
        sv[cfg.cell_of(start.torus)] = 1.0
    elif start is not None:
        sv = np.zeros(cfg.n_cells)
        for s, q in start.items():
            sv[cfg.cell_of(s.torus)] += q
    v, defect = _measure_vector(w, from_level, to_level, sv, pad=pad, bottom=bottom)
    weights = {cfg.site(to_level, c): float(v[c]) for c in range(cfg.n_cells) if v[c] > 0}
    return HittingMeasure(level=to_level, weights=weights, defect=defect)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    """``sum |p - q|`` (the unnormalised convention: values in [0, 2])."""
    return float(np.abs(np.asarray(p) - np.asarray(q)).sum())


# ---------------------------------------------------------------------------
# Harnack constant
# ---------------------------------------------------------------------------

def _connected_subsets(cfg: CylinderConfig, max_cells: int):
    C = cfg.n_cells
    if C > max_cells:
        raise BudgetError(f"{C} cells per level exceed the enumeration budget of {max_cells}")
    adj = cfg.lateral_matrix > 0
    for r in range(2, C + 1):
        for sub in itertools.combinations(range(C), r):
            s = set(sub)
            seen = {sub[0]}
            stack = [sub[0]]
            while stack:
                x = stack.pop()
                for y in np.flatnonzero(adj[x]):
                    y = int(y)
                    if y in s and y not in seen:
                        seen.add(y)
                        stack.append(y)
            if len(seen) == r:
                yield sub


def _hit_before_exit_level(cfg: CylinderConfig, D: Sequence[int], target: int) -> dict[int, float]:
    """P_z{reach target before leaving D}, walk confined to one level."""
    lat = cfg.lateral_matrix
    others = [x for x in D if x != target]
    n = len(others)
    pos = {x: i for i, x in enumerate(others)}
    A = np.eye(n)
    rhs = np.zeros(n)
    for x in others:
        i = pos[x]
        for y in D:
            q = lat[x, y]
            if q == 0:
                continue
            if y == target:
                rhs[i] += q
            else:
                A[i, pos[y]] -= q
    sol = np.linalg.solve(A, rhs)
    return {x: float(sol[pos[x]]) for x in others}


def _hit_before_exit_cylinder(cfg: CylinderConfig, D: Sequence[int], target: int, height: int = 40) -> dict[int, float]:
    """P_z{reach target before touching level-0 cells outside D}; the walk may
    move through the other (obstacle-free) levels.  Slab ``[-height, height]``
    with killing at both ends."""
    C = cfg.n_cells
    nlev = 2 * height + 1
    mid = height
    blocked = np.zeros((nlev, C), dtype=bool)
    outside = [c for c in range(C) if c not in D]
    blocked[mid, outside] = True
    idx = -np.ones((nlev, C), dtype=np.int64)
    live = ~blocked
    live[mid, target] = False
    fl = np.flatnonzero(live.ravel())
    idx.ravel()[fl] = np.arange(len(fl))
    n = len(fl)
    rows, cols, vals = list(range(n)), list(range(n)), [1.0] * n
    rhs = np.zeros(n)
    lat = cfg.lateral_matrix
    for k in fl:
        j, c = divmod(int(k), C)
        i = idx[j, c]
        moves = [(j + 1, c, cfg.forward), (j - 1, c, cfg.backward)]
        moves += [(j, int(t), lat[c, t]) for t in np.flatnonzero(lat[c])]
        for jj, cc, q in moves:
            if not (0 <= jj < nlev):
                continue
            if jj == mid and cc == target:
                rhs[i] += q
            elif idx[jj, cc] >= 0:
                rows.append(i); cols.append(idx[jj, cc]); vals.append(-q)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    x = spla.spsolve(A.tocsc(), rhs)
    return {c: float(x[idx[mid, c]]) for c in D if c != target}


def harnack_constant(cfg: CylinderConfig, max_cells: int = 16, reading: str = "level") -> float:
    """Minimum over connected level subsets ``D`` (at least two cells) and
    distinct ``z, w`` in ``D`` of the probability that the walk from ``z``
    reaches ``w`` before leaving ``D``.

    ``reading="level"`` confines the walk to the level (any vertical step
    leaves ``D``); ``reading="cylinder"`` lets it wander through other,
    obstacle-free levels and only forbids level sites outside ``D``.
    A torus with a single cell has no pair and returns 1.
    """
    if reading not in ("level", "cylinder"):
        raise ValueError("reading must be 'level' or 'cylinder'")
    solver = _hit_before_exit_level if reading == "level" else _hit_before_exit_cylinder
    best = 1.0
    for D in _connected_subsets(cfg, max_cells):
        for w in D:
            for z, val in solver(cfg, D, w).items():
                best = min(best, val)
    return best


def harnack_readings(cfg: CylinderConfig, max_cells: int = 16) -> dict[str, float]:
    """Both readings of the Harnack constant."""
    return {"level": harnack_constant(cfg, max_cells, "level"),
            "cylinder": harnack_constant(cfg, max_cells, "cylinder")}


# ---------------------------------------------------------------------------
# survival ratios Z_n
# ---------------------------------------------------------------------------

def _ext_arrays(ext: Sequence, cfg: CylinderConfig, origin=(0, 0)):
    """Normalise an extension given as Segments or (levels, cells) arrays,
    check chaining from ``origin`` and return one array per segment."""
    out = []
    cur = origin
    for i, s in enumerate(ext):
        if isinstance(s, Segment):
            s.validate(cfg)
            lv, cl = s.arrays(cfg)
        else:
            lv, cl = np.asarray(s[0], dtype=np.int64), np.asarray(s[1], dtype=np.int64)
        if (int(lv[0]), int(cl[0])) != cur or int(lv[-1]) != cur[0] + 1:
            from .errors import StructureError
            raise StructureError(f"extension segment {i} does not chain from {cur}")
        out.append((lv, cl))
        cur = (int(lv[-1]), int(cl[-1]))
    return out


def survival_profile(w: PathWindow, ext: Sequence, cfg: CylinderConfig | None = None,
                     pad: int = DEFAULT_PAD, bottom: int | None = None) -> np.ndarray:
    """``[Z_0, Z_1, ..., Z_n]`` for the prefixes of an extension.

    ``Z_m`` = P{avoid window + first ``m`` segments until level ``m``} /
    P{avoid window until level 0}, both from the uniform start on free cells
    of the slab bottom.
    """
    cfg = w.cfg if cfg is None else cfg
    exts = _ext_arrays(ext, cfg)
    n = len(exts)
    b = w.default_bottom(pad) if bottom is None else bottom
    if exts and w.completion is not Completion.ABSORB and bottom is None:
        b = min(b, min(int(a[0].min()) for a in exts) - pad)
    lv0, cl0 = w.obstacle_arrays(b)
    free = np.ones((n + 1, n - b + 1, cfg.n_cells), dtype=bool)
    top_idx = np.arange(n + 1) - b
    for m in range(n + 1):
        el, ec = _levels_of_ext(exts[:m])
        lv = np.concatenate([lv0, el])
        cl = np.concatenate([cl0, ec])
        keep = lv >= b
        free[m, lv[keep] - b, cl[keep]] = False
    ch = level_chain(cfg, free)
    lm = ch.logmass[np.arange(n + 1), top_idx]
    if not np.isfinite(lm[0]):
        raise NotNiceError("the window cannot be avoided from below")
    return np.exp(lm - lm[0])


def survival_prob_exact(w: PathWindow, ext: Sequence, cfg: CylinderConfig | None = None,
                        pad: int = DEFAULT_PAD, bottom: int | None = None) -> float:
    """``Z_n`` for the window ``w`` extended by the segments ``ext``."""
    prof = survival_profile(w, ext, cfg, pad=pad, bottom=bottom)
    return float(prof[-1])


def one_step_log_ratio(windows: Sequence[PathWindow], segs: Sequence[tuple[np.ndarray, np.ndarray]],
                       pad: int = DEFAULT_PAD) -> np.ndarray:
    """Vectorised ``log Z_1`` for many (window, canonical segment) pairs.

    Each pair gets its own slab bottom (``default_bottom`` lowered to the
    segment's deepest level minus ``pad``), independent of the batch, so
    results do not depend on how work is grouped.
    """
    nb = len(windows)
    if nb == 0:
        return np.zeros(0)
    cfg = windows[0].cfg
    bots = np.empty(nb, dtype=np.int64)
    for i, (w, (sl, _)) in enumerate(zip(windows, segs)):
        b = w.default_bottom(pad)
        if w.completion is not Completion.ABSORB:
            b = min(b, int(sl.min()) - pad)
        bots[i] = b
    B = int(bots.min())
    nlev = 1 - B + 1
    free = np.ones((2 * nb, nlev, cfg.n_cells), dtype=bool)
    for i, (w, (sl, sc)) in enumerate(zip(windows, segs)):
        b = int(bots[i])
        lv, cl = w.obstacle_arrays(b)
        free[2 * i, : b - B] = False
        free[2 * i + 1, : b - B] = False
        free[2 * i, lv - B, cl] = False
        free[2 * i + 1, lv - B, cl] = False
        free[2 * i + 1, sl - B, sc] = False
    sidx = np.repeat(bots - B, 2)
    ch = level_chain(cfg, free, start_idx=sidx)
    den = ch.logmass[0::2, -B]
    num = ch.logmass[1::2, 1 - B]
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(den), num - den, np.nan)


# ---------------------------------------------------------------------------
# solver variants used by the audits
# ---------------------------------------------------------------------------

def _ext_obstacle_free(w: PathWindow, ext, cfg, pad, bottom=None):
    exts = _ext_arrays(ext, cfg)
    n = len(exts)
    b = w.default_bottom(pad) if bottom is None else bottom
    if exts and w.completion is not Completion.ABSORB and bottom is None:
        b = min(b, min(int(a[0].min()) for a in exts) - pad)
    lv0, cl0 = w.obstacle_arrays(b)
    el, ec = _levels_of_ext(exts)
    lv = np.concatenate([lv0, el])
    cl = np.concatenate([cl0, ec])
    return free_from_sites(cfg, b, n, lv, cl), b, n


def z_bar(w: PathWindow, ext: Sequence, z: Site, cfg: CylinderConfig | None = None, pad: int = DEFAULT_PAD) -> float:
    """Probability that the walk started at the level-0 site ``z`` reaches
    level ``n`` without touching the window or the extension."""
    cfg = w.cfg if cfg is None else cfg
    if z.level != 0:
        raise ValueError("z must lie on level 0")
    free, b, n = _ext_obstacle_free(w, ext, cfg, pad)
    start = np.zeros(cfg.n_cells)
    start[cfg.cell_of(z.torus)] = 1.0
    ch = level_chain(cfg, free, start_idx=-b, start=start[None])
    return float(np.exp(ch.logmass[0, n - b]))


def z_hat(w: PathWindow, ext: Sequence, z: Site, cfg: CylinderConfig | None = None) -> float:
    """As :func:`z_bar` but the walk is killed when it touches level -1."""
    cfg = w.cfg if cfg is None else cfg
    if z.level != 0:
        raise ValueError("z must lie on level 0")
    free, b, n = _ext_obstacle_free(w, ext, cfg, pad=0, bottom=0)
    start = np.zeros(cfg.n_cells)
    start[cfg.cell_of(z.torus)] = 1.0
    ch = level_chain(cfg, free, start_idx=0, start=start[None])
    return float(np.exp(ch.logmass[0, n]))


def touch_solve(cfg: CylinderConfig, free: np.ndarray, start_idx: int, start: np.ndarray,
                touch_idx: int) -> tuple[float, float]:
    """Walk on a slab (index 0 = bottom, killing below, success = reaching
    the top level at a free site).  Returns ``(P{success and some level
    <= touch_idx visited}, P{success})`` from the start distribution on
    level ``start_idx``.  Sparse direct solve on the flag-augmented chain."""
    nlev, C = free.shape
    top = nlev - 1
    idx = -np.ones((top, C, 2), dtype=np.int64)
    live = [(j, c, g) for j in range(top) for c in range(C) for g in (0, 1) if free[j, c] and (g == 1 or j > touch_idx)]
    for i, (j, c, g) in enumerate(live):
        idx[j, c, g] = i
    n = len(live)
    rows, cols, vals = list(range(n)), list(range(n)), [1.0] * n
    rhs_touch = np.zeros(n)
    rhs_any = np.zeros(n)
    lat = cfg.lateral_matrix
    for i, (j, c, g) in enumerate(live):
        moves = [(j + 1, c, cfg.forward), (j - 1, c, cfg.backward)]
        moves += [(j, int(t), lat[c, t]) for t in np.flatnonzero(lat[c])]
        for jj, cc, q in moves:
            if jj < 0 or not free[jj, cc]:
                continue
            if jj == top:
                rhs_any[i] += q
                if g == 1:
                    rhs_touch[i] += q
                continue
            gg = 1 if (g == 1 or jj <= touch_idx) else 0
            rows.append(i); cols.append(idx[jj, cc, gg]); vals.append(-q)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()
    lu = spla.splu(A)
    xt = lu.solve(rhs_touch)
    xa = lu.solve(rhs_any)
    pt = pa = 0.0
    for c in range(C):
        if start[c] == 0 or not free[start_idx, c]:
            continue
        g = 1 if start_idx <= touch_idx else 0
        k = idx[start_idx, c, g]
        pt += start[c] * xt[k]
        pa += start[c] * xa[k]
    return float(pt), float(pa)


def z_star(w: PathWindow, ext: Sequence, k: int, cfg: CylinderConfig | None = None, pad: int = DEFAULT_PAD) -> float:
    """``Z_n`` additionally conditioned on the walk touching some level
    ``<= -k`` between reaching level 0 and reaching level ``n``."""
    cfg = w.cfg if cfg is None else cfg
    free, b, n = _ext_obstacle_free(w, ext, cfg, pad)
    if -k < b:
        raise ValueError("touch level lies below the slab")
    base = w.free_mask(b, 0)
    ch = level_chain(cfg, base[None])
    mu0 = ch.arrival[0, -b]
    num, _ = touch_solve(cfg, free, -b, mu0, -k - b)
    free_empty = np.ones_like(free)
    den, _ = touch_solve(cfg, free_empty, -b, mu0, -k - b)
    if den <= 0:
        raise ValueError("touch event has probability zero")
    return num / den


def _site_csv(values: Mapping[Site, float], cfg: CylinderConfig, name: str) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["level"] + [f"t{i + 1}" for i in range(cfg.d - 1)] + [name])
    for s in sorted(values):
        wr.writerow([s.level, *s.torus, repr(float(values[s]))])
    return buf.getvalue()


__all__ = [
    "LevelChain", "level_chain", "Slab", "HarmonicField", "solve_h", "window_field",
    "HProcessKernel", "hprocess_kernel", "HittingMeasure", "hitting_measure", "total_variation",
    "harnack_constant", "harnack_readings", "survival_profile", "survival_prob_exact",
    "one_step_log_ratio", "z_bar", "z_hat", "z_star", "touch_solve", "free_from_sites",
]


