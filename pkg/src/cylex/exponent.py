"""Estimators of the non-intersection exponent xi(k, lambda).

Three independent routes are provided:

* :func:`estimate_direct` - forward simulation of the extension paths and
  the exact ratio ``Z_n`` for every ``n``; the exponent is minus the slope
  of ``log E[Z_n^lambda]`` in ``n``.
* :func:`estimate_resample` - a particle population of truncated windows
  grown one level at a time, reweighted by ``Z_1^lambda`` and resampled
  when the effective sample size drops.  The per-step log normaliser
  averages to ``-xi`` at stationarity.
* :func:`transfer_eigen` - a finite transfer matrix over level-occupancy
  states of the top ``m`` levels.  Its leading eigenvalue estimates
  ``exp(-xi)``, and its right eigenvector estimates the normalised survival
  expectation ``K``.

Plus an exact enumeration of ``q_n`` on tiny cylinders used by the
subadditivity audit, a lambda-curve driver and an invariant-measure check.
"""
from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import _stats
from .cylinder import CylinderConfig, make_stream
from .errors import BudgetError, ConvergenceError, DegenerateEstimateError, ExtinctionError, NotNiceError
from .harmonic import DEFAULT_PAD, level_chain, one_step_log_ratio
from .paths import Completion, PathWindow, concat_arrays, sample_segments, straight_window


class Method(str, enum.Enum):
    DIRECT = "DirectMC"
    RESAMPLE = "Resample"
    TRANSFER = "TransferEigen"


@dataclass
class ExponentEstimate:
    lam: float
    k: int
    xi_hat: float
    stderr: float
    n_range: tuple[int, int]
    method: Method
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not math.isfinite(self.xi_hat):
            raise DegenerateEstimateError("exponent estimate is not finite")
        if self.stderr < 0 or math.isnan(self.stderr):
            self.stderr = float("inf") if math.isnan(self.stderr) else abs(self.stderr)

    def as_row(self) -> dict:
        return {"lambda": self.lam, "k": self.k, "xi_hat": self.xi_hat, "stderr": self.stderr,
                "n_min": self.n_range[0], "n_max": self.n_range[1], "method": self.method.value}


def upper_bound(cfg: CylinderConfig, lam: float, k: int | None = None) -> float:
    """Straight-line bound on xi.

    With ``k=None`` this is ``(C - 1 + lam) log(d/p)`` (``C`` cells per
    level), valid for every ``k``; with an explicit ``k < C - 1`` the sharper
    ``(k + lam) log(d/p)`` from the same straight-line configuration.
    """
    C = cfg.n_cells
    kk = C - 1 if k is None else min(k, C - 1)
    return (kk + lam) * math.log(cfg.d / cfg.p)


# ---------------------------------------------------------------------------
# direct Monte Carlo
# ---------------------------------------------------------------------------

def _union_base(windows: Sequence[PathWindow], offsets: Sequence[int], pad: int):
    cfg = windows[0].cfg
    b = min(w.default_bottom(pad) for w in windows)
    parts = []
    for w, off in zip(windows, offsets):
        lv, cl = w.obstacle_arrays(b)
        parts.append((lv, cfg.translation_table[cl, off]))
    return b, parts


def _direct_block(args) -> np.ndarray:
    """Z_n (n = 0..n_max) for one block of replicas; returns ``(R, n_max+1)``."""
    cfg, windows, offsets, n_max, R, seed, key, pad = args
    rng = make_stream(seed, *key)
    k = len(windows)
    b0, parts = _union_base(windows, offsets, pad)
    # sample extensions: n_max chained segments for each obstacle and replica
    ends = np.tile(np.asarray(offsets, dtype=np.int64), R)       # (R*k,)
    ext = []                                                      # ext[m] = list of (lv, cl) of length R*k
    for m in range(n_max):
        segs = sample_segments(cfg, R * k, rng, start_cells=ends)
        segs = [(lv + m, cl) for lv, cl in segs]
        ends = np.array([s[1][-1] for s in segs], dtype=np.int64)
        ext.append(segs)
    # bottoms per replica (batch independent)
    bots = np.full(R, b0, dtype=np.int64)
    for m in range(n_max):
        mins = np.array([s[0].min() for s in ext[m]]).reshape(R, k).min(axis=1)
        bots = np.minimum(bots, mins - pad)
    if windows[0].completion is Completion.ABSORB:
        bots[:] = b0
    B = int(bots.min())
    nlev = n_max - B + 1
    free = np.ones((R, n_max + 1, nlev, cfg.n_cells), dtype=bool)
    for r in range(R):
        free[r, :, : bots[r] - B] = False
    for lv, cl in parts:
        m = lv >= B
        free[:, :, lv[m] - B, cl[m]] = False
    for m in range(n_max):
        rr = np.concatenate([np.full(len(s[0]), i // k) for i, s in enumerate(ext[m])])
        ll = np.concatenate([s[0] for s in ext[m]])
        cc = np.concatenate([s[1] for s in ext[m]])
        ok = ll >= B
        # segment m+1 is part of every obstacle Gamma_n with n >= m+1
        for n in range(m + 1, n_max + 1):
            free[rr[ok], n, ll[ok] - B, cc[ok]] = False
    flat = free.reshape(R * (n_max + 1), nlev, cfg.n_cells)
    sidx = np.repeat(bots - B, n_max + 1)
    ch = level_chain(cfg, flat, start_idx=sidx)
    lm = ch.logmass.reshape(R, n_max + 1, nlev)
    top = np.arange(n_max + 1) - B
    logz = lm[:, np.arange(n_max + 1), top]
    if not np.all(np.isfinite(logz[:, 0])):
        raise NotNiceError("the starting configuration cannot be avoided")
    with np.errstate(invalid="ignore"):
        return np.exp(logz - logz[:, :1])


def simulate_survival(w0, n_max: int, replicas: int, cfg: CylinderConfig | None = None, seed: int = 0,
                      offsets: Sequence[int] | None = None, pad: int = DEFAULT_PAD, block_size: int = 128,
                      workers: int = 1) -> np.ndarray:
    """``Z_n`` for ``replicas`` independent extensions; shape ``(replicas, n_max+1)``.

    Replica block ``i`` (of ``block_size`` replicas) uses stream key ``(i,)``,
    so the output does not depend on ``workers``.
    """
    windows = [w0] if isinstance(w0, PathWindow) else list(w0)
    cfg = windows[0].cfg if cfg is None else cfg
    k = len(windows)
    if offsets is None:
        offsets = list(range(k))
    if len(offsets) != k:
        raise ValueError("one torus offset per obstacle is required")
    nblocks = -(-replicas // block_size)
    jobs = []
    for i in range(nblocks):
        R = min(block_size, replicas - i * block_size)
        jobs.append((cfg, windows, list(offsets), n_max, R, seed, (i,), pad))
    if workers > 1 and nblocks > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(_direct_block, jobs))
    else:
        res = [_direct_block(j) for j in jobs]
    return np.concatenate(res, axis=0)


def log_moment_table(Z: np.ndarray, lam: float, groups: int = 20) -> dict:
    """``log mean Z_n^lam`` per ``n`` with jackknife standard errors."""
    R = Z.shape[0]
    Zl = np.where(Z > 0, Z, 0.0) ** lam if lam > 0 else np.ones_like(Z)
    G = max(2, min(groups, R))
    gidx = np.arange(R) % G
    sums = np.array([[math.fsum(Zl[gidx == g, n].tolist()) for n in range(Z.shape[1])] for g in range(G)])
    counts = np.array([(gidx == g).sum() for g in range(G)])
    tot = sums.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logmean = np.log(tot / R)
        loo = np.log((tot[None, :] - sums) / (R - counts)[:, None])
        se = np.sqrt((G - 1) / G * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return {"n": np.arange(Z.shape[1]), "log_mean": logmean, "stderr": se, "sums": sums, "counts": counts}


def _slope_jackknife(tab: dict, n_min: int, n_max: int) -> tuple[float, float, float]:
    ns = np.arange(n_min, n_max + 1)
    lm = tab["log_mean"][ns]
    if not np.all(np.isfinite(lm)):
        raise DegenerateEstimateError(
            "all sampled Z_n^lambda vanish for some n in the fit range; use estimate_resample "
            "or more replicas")
    fit = _stats.fit_line(ns, lm)
    sums, counts = tab["sums"], tab["counts"]
    G = len(counts)
    tot = sums.sum(axis=0)
    R = counts.sum()
    slopes = []
    for g in range(G):
        with np.errstate(divide="ignore"):
            l = np.log((tot - sums[g]) / (R - counts[g]))[ns]
        if not np.all(np.isfinite(l)):
            continue
        slopes.append(_stats.fit_line(ns, l).slope)
    slopes = np.array(slopes)
    se = math.sqrt((G - 1) / G * ((slopes - slopes.mean()) ** 2).sum()) if len(slopes) > 1 else float("inf")
    return -fit.slope, se, fit.r2


def estimate_direct(w0, lam: float, n_max: int, replicas: int, cfg: CylinderConfig | None = None,
                    seed: int = 0, n_min: int = 1, offsets: Sequence[int] | None = None,
                    pad: int = DEFAULT_PAD, block_size: int = 128, workers: int = 1) -> ExponentEstimate:
    """Slope estimate of xi from forward-simulated extensions.

    ``w0`` is a window or a list of ``k`` windows (union obstacle, torus
    offsets ``offsets``).  The standard error is a delete-one-group
    jackknife over 20 replica groups.
    """
    windows = [w0] if isinstance(w0, PathWindow) else list(w0)
    cfg = windows[0].cfg if cfg is None else cfg
    k = len(windows)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if not (0 <= n_min < n_max):
        raise ValueError("need 0 <= n_min < n_max")
    if lam == 0:
        return ExponentEstimate(0.0, k, 0.0, 0.0, (n_min, n_max), Method.DIRECT)
    Z = simulate_survival(windows, n_max, replicas, cfg, seed, offsets, pad, block_size, workers)
    tab = log_moment_table(Z, lam)
    xi, se, r2 = _slope_jackknife(tab, n_min, n_max)
    return ExponentEstimate(float(lam), k, float(xi), float(se), (n_min, n_max), Method.DIRECT,
                            extra={"table": tab, "r2": r2, "replicas": replicas, "seed": seed})


# ---------------------------------------------------------------------------
# weighted particle ensemble
# ---------------------------------------------------------------------------

@dataclass
class WeightedEnsemble:
    """A population of windows with log-weights.

    ``log_norms`` records ``log(sum w Z^lam / sum w)`` for every step taken.
    """

    windows: list
    logw: np.ndarray
    level: int = 0
    log_norms: list = field(default_factory=list)
    depth: int = 10
    n_resamples: int = 0

    def __post_init__(self):
        self.logw = np.asarray(self.logw, dtype=float)
        if len(self.windows) != len(self.logw):
            raise ValueError("one weight per particle is required")
        if not np.any(np.isfinite(self.logw)):
            raise ExtinctionError("all particle weights are zero")

    @classmethod
    def from_window(cls, w0: PathWindow, n: int, depth: int | None = None) -> "WeightedEnsemble":
        depth = w0.depth if depth is None else depth
        w = w0.truncated(depth)
        return cls([w] * n, np.zeros(n), 0, [], depth)

    @property
    def size(self) -> int:
        return len(self.windows)

    def weights(self) -> np.ndarray:
        m = np.max(self.logw)
        w = np.exp(self.logw - m)
        return w / w.sum()

    def ess(self) -> float:
        w = self.weights()
        return float(1.0 / np.sum(w * w))


def resample_step(ens: WeightedEnsemble, lam: float, cfg: CylinderConfig | None = None,
                  rng: np.random.Generator | None = None, threshold: float = 0.5,
                  pad: int = DEFAULT_PAD) -> WeightedEnsemble:
    """Grow every particle by one sampled segment, reweight by ``Z_1^lam``,
    resample multinomially if ESS < ``threshold * N``."""
    if rng is None:
        raise ValueError("an explicit random stream is required")
    N = ens.size
    cfg = ens.windows[0].cfg if cfg is None else cfg
    segs = sample_segments(cfg, N, rng)
    w = ens.weights()
    if lam == 0:
        new_logw = ens.logw.copy()
        log_norm = 0.0
    else:
        logz = one_step_log_ratio(ens.windows, segs, pad=pad)
        logz = np.where(np.isnan(logz), -np.inf, logz)
        inc = np.exp(lam * logz)
        num = math.fsum((w * inc).tolist())
        if num <= 0:
            raise ExtinctionError(f"all particles died at level {ens.level + 1}")
        log_norm = math.log(num)  # w already sums to one
        new_logw = ens.logw + lam * logz
    windows = [concat_arrays(wi, lv, cl, ens.depth) for wi, (lv, cl) in zip(ens.windows, segs)]
    out = WeightedEnsemble(windows, new_logw, ens.level + 1, ens.log_norms + [log_norm], ens.depth,
                           ens.n_resamples)
    if lam != 0 and out.ess() < threshold * N:
        idx = rng.choice(N, size=N, replace=True, p=out.weights())
        out.windows = [windows[i] for i in idx]
        out.logw = np.zeros(N)
        out.n_resamples += 1
    return out


def run_ensemble(w0: PathWindow, lam: float, N: int, particles: int, cfg: CylinderConfig | None = None,
                 seed: int = 0, depth: int | None = None, pad: int = DEFAULT_PAD, threshold: float = 0.5,
                 stream_key: tuple = (0,), callback=None, ens: WeightedEnsemble | None = None,
                 rng: np.random.Generator | None = None) -> tuple[WeightedEnsemble, np.random.Generator]:
    """Run ``N`` resampling steps; ``callback(step, ens)`` is called after each."""
    cfg = w0.cfg if cfg is None else cfg
    if ens is None:
        ens = WeightedEnsemble.from_window(w0, particles, depth)
    if rng is None:
        rng = make_stream(seed, *stream_key)
    for t in range(N):
        ens = resample_step(ens, lam, cfg, rng, threshold, pad)
        if callback is not None:
            callback(t + 1, ens)
    return ens, rng


def estimate_resample(w0: PathWindow, lam: float, N: int, particles: int, burn_in: int,
                      cfg: CylinderConfig | None = None, seed: int = 0, depth: int | None = None,
                      n_batches: int = 10, pad: int = DEFAULT_PAD, n_ensembles: int = 1,
                      workers: int = 1) -> ExponentEstimate:
    """xi = - mean per-step log normaliser after ``burn_in`` steps.

    With one ensemble the standard error is from batch means of the
    normaliser series; with several independent ensembles (stream keys
    ``(e,)``) it is the spread of the per-ensemble means.
    """
    cfg = w0.cfg if cfg is None else cfg
    if not (0 <= burn_in < N):
        raise ValueError("need 0 <= burn_in < N")
    if lam == 0:
        return ExponentEstimate(0.0, 1, 0.0, 0.0, (burn_in, N), Method.RESAMPLE)
    jobs = [(w0, lam, N, particles, cfg, seed, depth, pad, (e,)) for e in range(n_ensembles)]
    if workers > 1 and n_ensembles > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            series = list(ex.map(_ensemble_series, jobs))
    else:
        series = [_ensemble_series(j) for j in jobs]
    post = [np.asarray(s[burn_in:]) for s in series]
    if n_ensembles == 1:
        mean, se = _stats.batch_means(post[0], n_batches)
    else:
        means = np.array([_stats.fsum_mean(p) for p in post])
        mean = _stats.fsum_mean(means)
        se = float(means.std(ddof=1) / math.sqrt(len(means)))
    return ExponentEstimate(float(lam), 1, float(-mean), float(se), (burn_in, N), Method.RESAMPLE,
                            extra={"log_norms": series, "particles": particles, "seed": seed})


def save_ensemble(ens: WeightedEnsemble, path, rng: np.random.Generator | None = None) -> None:
    """Write an ensemble snapshot (JSON header line, then one window per block)."""
    from .paths import window_to_text
    head = {"level": ens.level, "depth": ens.depth, "n_resamples": ens.n_resamples,
            "log_norms": [float(x).hex() for x in ens.log_norms],
            "logw": [float(x).hex() for x in ens.logw],
            "rng": rng.bit_generator.state if rng is not None else None}
    with open(path, "w") as fh:
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for w in ens.windows:
            fh.write(window_to_text(w))
            fh.write("end\n")


def load_ensemble(path, cfg: CylinderConfig) -> tuple[WeightedEnsemble, np.random.Generator | None]:
    """Inverse of :func:`save_ensemble`; the random stream is restored when saved."""
    from .paths import window_from_text
    with open(path) as fh:
        head = json.loads(fh.readline())
        blocks = fh.read().split("end\n")
    windows = [window_from_text(b, cfg) for b in blocks if b.strip()]
    ens = WeightedEnsemble(windows, np.array([float.fromhex(x) for x in head["logw"]]), head["level"],
                           [float.fromhex(x) for x in head["log_norms"]], head["depth"], head["n_resamples"])
    rng = None
    if head.get("rng") is not None:
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = head["rng"]
    return ens, rng


def _ensemble_series(args):
    w0, lam, N, particles, cfg, seed, depth, pad, key = args
    ens, _ = run_ensemble(w0, lam, N, particles, cfg, seed, depth, pad, stream_key=key)
    return list(ens.log_norms)


# ---------------------------------------------------------------------------
# level-occupancy states and segment traces
# ---------------------------------------------------------------------------

class _MaskCodec:
    """Bitmask helpers for subsets of the level torus."""

    def __init__(self, cfg: CylinderConfig):
        C = cfg.n_cells
        if C > 16:
            raise BudgetError(f"{C} cells per level are too many for occupancy states")
        self.C = C
        nm = 1 << C
        self.bits = ((np.arange(nm)[:, None] >> np.arange(C)[None, :]) & 1).astype(bool)
        T = cfg.translation_table
        weights = 1 << np.arange(C)
        self.trans = np.zeros((nm, C), dtype=np.int64)
        for s in range(C):
            tgt = T[:, s]
            self.trans[:, s] = (self.bits * weights[tgt][None, :]).sum(axis=1)
        self.T = T
        self.neg = cfg.negation_table


@dataclass
class TraceTable:
    """Segments ``(0, 0) -> level 1`` of at most ``T_max`` steps, aggregated by
    (set of visited sites, end cell).  Prefixes that fill a whole level are
    counted in ``dead_mass`` (their survival ratio is 0); unfinished walks make
    up ``tail_mass``."""

    site_levels: list
    site_cells: list
    end: np.ndarray
    mass: np.ndarray
    min_level: np.ndarray
    rows: list                         # per trace: dict level -> bitmask (levels <= 0)
    dead_mass: float
    tail_mass: float
    T_max: int

    def __len__(self):
        return len(self.mass)


def trace_table(cfg: CylinderConfig, T_max: int, prune_dead: bool = True, budget: int = 2_000_000) -> TraceTable:
    C = cfg.n_cells
    f, b = cfg.forward, cfg.backward
    moves = cfg.lateral_moves
    cur = {(0, 0, frozenset([(0, 0)])): 1.0}
    done: dict = {}
    dead = 0.0
    for _ in range(T_max):
        nxt: dict = {}
        for (l, c, vis), m in cur.items():
            opts = [(l + 1, c, f), (l - 1, c, b)] + [(l, t, q) for t, q in moves[c]]
            for nl, nc, q in opts:
                nvis = vis | {(nl, nc)}
                if nl == 1:
                    key = (nvis, nc)
                    done[key] = done.get(key, 0.0) + m * q
                    continue
                if prune_dead and sum(1 for (a, _) in nvis if a == nl) == C:
                    dead += m * q
                    continue
                key = (nl, nc, nvis)
                nxt[key] = nxt.get(key, 0.0) + m * q
        cur = nxt
        if len(cur) > budget:
            raise BudgetError(f"segment enumeration exceeded {budget} partial traces")
    tail = math.fsum(cur.values())
    keys = sorted(done.keys(), key=lambda kv: (sorted(kv[0]), kv[1]))
    lvs, cls, ends, masses, mins, rows = [], [], [], [], [], []
    for vis, e in keys:
        pts = sorted(vis)
        lv = np.array([p[0] for p in pts], dtype=np.int64)
        cl = np.array([p[1] for p in pts], dtype=np.int64)
        lvs.append(lv)
        cls.append(cl)
        ends.append(e)
        masses.append(done[(vis, e)])
        mins.append(int(lv.min()))
        r: dict = {}
        for a, c in pts:
            if a <= 0:
                r[a] = r.get(a, 0) | (1 << c)
        rows.append(r)
    return TraceTable(lvs, cls, np.array(ends, dtype=np.int64), np.array(masses), np.array(mins, dtype=np.int64),
                      rows, dead, tail, T_max)


def _state_free(cfg, codec: _MaskCodec, state, B: int) -> np.ndarray:
    """Free mask for levels ``B .. 1`` of an occupancy state (rows top-first)."""
    rows, entries = state
    m = len(rows)
    nlev = 2 - B
    free = np.ones((nlev, cfg.n_cells), dtype=bool)
    for r, mask in enumerate(rows):
        lev = -r
        free[lev - B] = ~codec.bits[mask]
    tail_cell = entries[-1]
    lo = -m + 1
    if B < lo:
        free[: lo - B, tail_cell] = False
    return free


def _advance(codec: _MaskCodec, state, trace_rows: dict, end: int, keep: int | None):
    rows, entries = state
    m = len(rows)
    new_rows = [1 << end] + [rows[r] | trace_rows.get(-r, 0) for r in range(m)]
    new_entries = [end] + list(entries)
    if keep is not None:
        new_rows = new_rows[:keep]
        new_entries = new_entries[:keep]
    sh = codec.neg[end]
    return (tuple(int(codec.trans[r, sh]) for r in new_rows),
            tuple(int(codec.T[e, sh]) for e in new_entries))


def straight_state(m: int):
    return (tuple([1] * m), tuple([0] * m))


def _state_bottom(state, dipmax: int, pad: int) -> int:
    return -len(state[0]) + 1 - pad - dipmax


def _eval_states(cfg, codec, states, traces: TraceTable, pad: int, dipmax: int) -> np.ndarray:
    """``log Z_1`` for every (state, trace) pair; shape ``(S, T)``."""
    S, T = len(states), len(traces)
    if S == 0:
        return np.zeros((0, T))
    bots = np.array([_state_bottom(s, dipmax, pad) for s in states])
    B = int(bots.min())
    nlev = 2 - B
    C = cfg.n_cells
    free = np.ones((S, T + 1, nlev, C), dtype=bool)
    for i, s in enumerate(states):
        base = _state_free(cfg, codec, s, B)
        base[: bots[i] - B] = False
        free[i] = base[None]
    tid = np.concatenate([np.full(len(l), t) for t, l in enumerate(traces.site_levels)])
    tl = np.concatenate(traces.site_levels)
    tc = np.concatenate(traces.site_cells)
    ok = tl >= B
    free[:, tid[ok], tl[ok] - B, tc[ok]] = False
    flat = free.reshape(S * (T + 1), nlev, C)
    ch = level_chain(cfg, flat, start_idx=np.repeat(bots - B, T + 1))
    lm = ch.logmass.reshape(S, T + 1, nlev)
    num = lm[:, :T, 1 - B]
    den = lm[:, T, -B]
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(den)[:, None], num - den[:, None], -np.inf)


@dataclass
class TransferResult:
    eigenvalue: float
    xi: float
    memory: int
    T_max: int
    states: list
    K: np.ndarray                  # right eigenvector, normalised to mean 1
    left: np.ndarray               # left eigenvector (stationary law of the weighted forward chain)
    tail_mass: float
    dead_mass: float
    iterations: int
    band: tuple                    # (xi_lo, xi_hi) truncation band for this memory
    matrix: sp.csr_matrix = field(repr=False, default=None)

    @property
    def K_ratio(self) -> float:
        return float(self.K.max() / self.K.min())

    def K_of(self, state) -> float:
        idx = getattr(self, "_index", None)
        if idx is None:
            idx = {s: i for i, s in enumerate(self.states)}
            self._index = idx
        i = idx.get(state)
        return float(self.K[i]) if i is not None else float("nan")

    def table(self) -> list[dict]:
        return [{"rows": " ".join(str(r) for r in s[0]), "entries": " ".join(str(e) for e in s[1]),
                 "K": float(k), "pi": float(p)} for s, k, p in zip(self.states, self.K, self.left)]


def _power_iteration(M: sp.csr_matrix, tol: float, max_iter: int, transpose: bool = False):
    A = M.T.tocsr() if transpose else M
    n = A.shape[0]
    x = np.ones(n)
    lo = hi = 0.0
    for it in range(1, max_iter + 1):
        y = A @ x
        if not np.all(y > 0):
            # an aperiodicity / irreducibility defect: fall back to a lazy step
            y = 0.5 * (y + x * (y.max() if y.max() > 0 else 1.0))
        ratio = y / x
        lo, hi = float(ratio.min()), float(ratio.max())
        x = y / y.max()
        if hi - lo <= tol * hi:
            return 0.5 * (lo + hi), x, it, (lo, hi)
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations "
                           f"(Collatz-Wielandt bracket [{lo}, {hi}])")


def transfer_eigen(lam: float, memory: int, T_max: int, cfg: CylinderConfig, pad: int = DEFAULT_PAD,
                   tol: float = 1e-12, max_iter: int = 100_000, state_budget: int = 50_000,
                   chunk: int = 16) -> TransferResult:
    """Leading eigenpair of the memory-``m`` transfer matrix.

    States are the occupancy patterns (plus first-arrival cells) of the top
    ``memory`` levels in canonical position, completed by a straight tail
    below.  Transitions are the aggregated segment traces of at most
    ``T_max`` steps, weighted by ``mass * Z_1^lam``.  The matrix is built
    over states reachable from the straight line with ``Z_1 > 0``.

    The returned ``band`` brackets xi for this memory:
    the truncated spectral radius is a lower bound for the full one, and
    ``rho + tail_mass * K_max / K_min`` an (approximate) upper bound.
    """
    if memory < 1:
        raise ValueError("memory must be >= 1")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    codec = _MaskCodec(cfg)
    traces = trace_table(cfg, T_max)
    T = len(traces)
    dipmax = max(0, int(-(traces.min_level.min() + memory - 1)))
    init = straight_state(memory)
    index = {init: 0}
    states = [init]
    rows_i, cols_i, vals = [], [], []
    frontier = [init]
    while frontier:
        nxt = []
        for a in range(0, len(frontier), chunk):
            block = frontier[a:a + chunk]
            logz = _eval_states(cfg, codec, block, traces, pad, dipmax)
            for s, lz in zip(block, logz):
                i = index[s]
                live = np.flatnonzero(np.isfinite(lz))
                agg: dict = {}
                for t in live:
                    s2 = _advance(codec, s, traces.rows[t], int(traces.end[t]), memory)
                    j = index.get(s2)
                    if j is None:
                        j = len(states)
                        if j >= state_budget:
                            raise BudgetError(f"transfer state count exceeded {state_budget}")
                        index[s2] = j
                        states.append(s2)
                        nxt.append(s2)
                    wgt = traces.mass[t] * (math.exp(lam * lz[t]) if lam > 0 else 1.0)
                    agg[j] = agg.get(j, 0.0) + wgt
                for j, v in agg.items():
                    rows_i.append(i)
                    cols_i.append(j)
                    vals.append(v)
        frontier = nxt
    n = len(states)
    M = sp.csr_matrix((vals, (rows_i, cols_i)), shape=(n, n))
    if lam == 0:
        # mass lost to dead prefixes, killed transitions and the length cap
        # goes to an absorbing state; the matrix is then stochastic.
        lost = 1.0 - np.asarray(M.sum(axis=1)).ravel()
        M = sp.bmat([[M, sp.csr_matrix(lost[:, None])], [None, sp.csr_matrix(np.ones((1, 1)))]]).tocsr()
        K = np.ones(n)
        left = np.zeros(n)
        left[0] = 1.0
        return TransferResult(1.0, 0.0, memory, T_max, states, K, left, traces.tail_mass, traces.dead_mass,
                              0, (0.0, 0.0), M)
    rho, K, it, _ = _power_iteration(M, tol, max_iter)
    _, left, _, _ = _power_iteration(M, tol, max_iter, transpose=True)
    K = K / K.mean()
    left = left / left.sum()
    upper = rho + traces.tail_mass * K.max() / K.min()
    band = (-math.log(min(upper, 1.0)), -math.log(rho))
    return TransferResult(float(rho), float(-math.log(rho)), memory, T_max, states, K, left,
                          traces.tail_mass, traces.dead_mass, it, band, M)


def window_state(w: PathWindow, memory: int):
    """Project a window onto the occupancy state of its top ``memory`` levels."""
    rows = []
    entries = []
    for r in range(memory):
        lev = -r
        cells = w.cells[w.levels == lev]
        mask = 0
        for c in np.unique(cells):
            mask |= 1 << int(c)
        if lev < -w.depth:
            mask = 1 << w.start_cell  # completion tail
            entry = w.start_cell
        elif r < w.depth:
            lv, cl = w.segment_arrays(r)
            entry = int(cl[-1])
        else:
            entry = w.start_cell
        if mask == 0:
            mask = 1 << entry
        rows.append(mask)
        entries.append(entry)
    return tuple(rows), tuple(entries)


def transfer_estimate(lam: float, memory: int, T_max: int, cfg: CylinderConfig, **kw) -> ExponentEstimate:
    res = transfer_eigen(lam, memory, T_max, cfg, **kw)
    half = 0.5 * (res.band[1] - res.band[0])
    return ExponentEstimate(float(lam), 1, res.xi, 0.0, (memory, T_max), Method.TRANSFER,
                            extra={"result": res, "band_halfwidth": half})


# ---------------------------------------------------------------------------
# exact q_n on small cylinders
# ---------------------------------------------------------------------------

@dataclass
class QTable:
    """Exact (length-capped) ``q_n`` and ``q-bar_n`` (lower bound over the
    enumerated live sequences) for n = 1..n_max, sup over starting windows."""

    lam: float
    q: np.ndarray
    qbar: np.ndarray
    per_window_q: np.ndarray
    tail_bound: np.ndarray
    windows: list


def enumerate_q(windows: Sequence[PathWindow], lam: float, n_max: int, T_max: int,
                pad: int = DEFAULT_PAD, budget: int = 200_000) -> QTable:
    """``E^{Gamma_0}[Z_n^lam]`` and ``E^{Gamma_0}[Zbar_n^lam]`` by enumeration of
    trace sequences (segments of at most ``T_max`` steps), for each starting
    window, then the sup over windows.

    Sequences whose ``Z`` vanishes are dropped (they contribute nothing to
    ``q`` for ``lam > 0``); the ``q-bar`` sums therefore run over the same
    live sequences and form a lower bound of the capped ``q-bar``.
    ``tail_bound[n-1] = 1 - (1 - tail)^n`` bounds the mass missed by the cap.
    """
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    cfg = windows[0].cfg
    traces = trace_table(cfg, T_max)
    T = len(traces)
    C = cfg.n_cells
    per_q = np.zeros((len(windows), n_max))
    per_qb = np.zeros((len(windows), n_max))
    dip = int(-traces.min_level.min())
    for wi, w in enumerate(windows):
        b = min(w.default_bottom(pad), -n_max * 0 - dip - pad - w.depth)
        lv0, cl0 = w.obstacle_arrays(b)
        # layer: list of (site arrays, end cell, mass)
        layer = [(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), 0, 1.0)]
        for n in range(1, n_max + 1):
            if len(layer) * T > budget:
                raise BudgetError(f"enumeration of {len(layer) * T} sequences exceeds the budget {budget}")
            cand = []
            for el, ec, end, m in layer:
                for t in range(T):
                    sl = traces.site_levels[t] + (n - 1)
                    sc = cfg.translation_table[traces.site_cells[t], end]
                    cand.append((np.concatenate([el, sl]), np.concatenate([ec, sc]),
                                 int(cfg.translation_table[traces.end[t], end]), m * traces.mass[t]))
            nb = len(cand)
            bb = min(b, min(int(c[0].min()) for c in cand) - pad)
            nlev = n - bb + 1
            # rows: deep start (1 per candidate) + level-0 starts (C per candidate) + denominator (1)
            free = np.ones((nb * (C + 1) + 1, nlev, C), dtype=bool)
            m0 = lv0 >= bb
            free[:, lv0[m0] - bb, cl0[m0]] = False
            for i, (el, ec, _, _) in enumerate(cand):
                free[i * (C + 1):(i + 1) * (C + 1), el - bb, ec] = False
            sidx = np.zeros(free.shape[0], dtype=np.int64)
            start = np.ones((free.shape[0], C))
            for i in range(nb):
                for z in range(C):
                    r = i * (C + 1) + 1 + z
                    sidx[r] = -bb
                    start[r] = 0.0
                    start[r, z] = 1.0
            ch = level_chain(cfg, free, start_idx=sidx, start=start)
            den = ch.logmass[-1, -bb]
            if not np.isfinite(den):
                raise NotNiceError("starting window cannot be avoided")
            lm = ch.logmass[:-1, n - bb].reshape(nb, C + 1)
            logZ = lm[:, 0] - den
            zbar = np.exp(lm[:, 1:]).max(axis=1)
            masses = np.array([c[3] for c in cand])
            live = np.isfinite(logZ)
            per_q[wi, n - 1] = math.fsum((masses[live] * np.exp(lam * logZ[live])).tolist())
            per_qb[wi, n - 1] = math.fsum((masses[live] * zbar[live] ** lam).tolist())
            layer = [cand[i] for i in np.flatnonzero(live)]
    tail = traces.tail_mass
    tb = 1.0 - (1.0 - tail) ** np.arange(1, n_max + 1)
    return QTable(lam, per_q.max(axis=0), per_qb.max(axis=0), per_q, tb, list(windows))


@dataclass
class SubadditivityReport:
    checks: int
    violations: list
    max_excess: float
    band: tuple | None = None
    qbar_violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and not self.qbar_violations


def subadditivity_audit(q, qbar=None, stderr=None, slack: float = 3.0, rtol: float = 1e-10,
                        n_limit: int | None = None, xi_ref: float | None = None) -> SubadditivityReport:
    """Check ``log q_{n+m} <= log q_n + log q_m`` for all ``n + m <= n_limit``.

    ``q[i]`` is ``q_{i+1}``.  For Monte Carlo input give ``stderr`` (of
    ``log q``): a pair violates only beyond ``slack`` joint standard errors.
    For exact input a relative tolerance ``rtol`` absorbs roundoff.  With
    ``qbar`` the termwise inequality ``q_n <= qbar_n`` is also checked, and
    with ``xi_ref`` the band of ``q_n e^{xi n}`` is reported.
    """
    q = np.asarray(q, dtype=float)
    lq = np.log(q)
    nmax = len(q) if n_limit is None else min(n_limit, len(q))
    se = np.zeros_like(lq) if stderr is None else np.asarray(stderr, dtype=float)
    viol = []
    checks = 0
    worst = -np.inf
    for n in range(1, nmax):
        for m in range(1, nmax - n + 1):
            if n + m > nmax:
                continue
            checks += 1
            excess = lq[n + m - 1] - lq[n - 1] - lq[m - 1]
            tol = slack * math.sqrt(se[n + m - 1] ** 2 + se[n - 1] ** 2 + se[m - 1] ** 2) + rtol
            worst = max(worst, excess)
            if excess > tol:
                viol.append((n, m, float(excess)))
    qb_viol = []
    if qbar is not None:
        qbar = np.asarray(qbar, dtype=float)
        for i in range(min(len(q), len(qbar))):
            if q[i] > qbar[i] * (1 + rtol) + slack * se[i] * q[i]:
                qb_viol.append((i + 1, float(q[i]), float(qbar[i])))
    band = None
    if xi_ref is not None:
        r = q * np.exp(xi_ref * np.arange(1, len(q) + 1))
        band = (float(r.min()), float(r.max()))
    return SubadditivityReport(checks, viol, float(worst), band, qb_viol)


# ---------------------------------------------------------------------------
# lambda curve
# ---------------------------------------------------------------------------

@dataclass
class XiCurve:
    lambdas: np.ndarray
    xi: np.ndarray
    stderr: np.ndarray
    method: str
    monotone: bool
    cubic_rms: float
    noise_floor: float
    intercept: float
    intercept_se: float

    def rows(self):
        return [{"lambda": float(l), "xi_hat": float(x), "stderr": float(s), "method": self.method}
                for l, x, s in zip(self.lambdas, self.xi, self.stderr)]


def xi_curve(lambdas: Sequence[float], method: str, cfg: CylinderConfig, w0: PathWindow | None = None,
             seed: int = 0, **kw) -> XiCurve:
    """xi estimates over a lambda grid with smoothness and monotonicity diagnostics.

    ``method`` is ``"direct"``, ``"resample"`` or ``"transfer"``; extra
    keywords go to the estimator.  Diagnostics: RMS of residuals of local
    cubic fits (windows of five points) compared with the median standard
    error; monotonicity within two joint standard errors; the intercept of
    a cubic fit through the grid (the extrapolated value at lambda -> 0+).
    """
    lams = np.asarray(sorted(float(l) for l in lambdas))
    if np.any(lams <= 0):
        raise ValueError("grid must lie in (0, inf)")
    w0 = straight_window(cfg, kw.pop("depth", 10)) if w0 is None else w0
    xs, ses = [], []
    for i, lam in enumerate(lams):
        if method == "direct":
            est = estimate_direct(w0, lam, kw.get("n_max", 8), kw.get("replicas", 2000), cfg,
                                  seed=seed + i, n_min=kw.get("n_min", 2), pad=kw.get("pad", DEFAULT_PAD))
        elif method == "resample":
            est = estimate_resample(w0, lam, kw.get("N", 200), kw.get("particles", 1000), kw.get("burn_in", 50),
                                    cfg, seed=seed + i, pad=kw.get("pad", DEFAULT_PAD))
        elif method == "transfer":
            est = transfer_estimate(lam, kw.get("memory", 3), kw.get("T_max", 10), cfg)
            est.stderr = est.extra["band_halfwidth"]
        else:
            raise ValueError(f"unknown method {method!r}")
        xs.append(est.xi_hat)
        ses.append(est.stderr)
    xs, ses = np.array(xs), np.array(ses)
    mono = bool(np.all(np.diff(xs) >= -2 * np.sqrt(ses[1:] ** 2 + ses[:-1] ** 2) - 1e-12))
    resid = []
    for a in range(0, max(len(lams) - 4, 0)):
        sl = slice(a, a + 5)
        c = np.polyfit(lams[sl], xs[sl], 3)
        resid.extend((xs[sl] - np.polyval(c, lams[sl])).tolist())
    rms = float(np.sqrt(np.mean(np.square(resid)))) if resid else 0.0
    deg = min(3, len(lams) - 1)
    if deg >= 1:
        coef, cov = np.polyfit(lams, xs, deg, cov=True) if len(lams) > deg + 2 else (np.polyfit(lams, xs, deg), None)
        icpt = float(coef[-1])
        icpt_se = float(math.sqrt(cov[-1, -1])) if cov is not None else float("nan")
    else:
        icpt, icpt_se = float(xs[0]), float(ses[0])
    return XiCurve(lams, xs, ses, method, mono, rms, float(np.median(ses)), icpt, icpt_se)


# ---------------------------------------------------------------------------
# invariant measure checks
# ---------------------------------------------------------------------------

@dataclass
class InvariantReport:
    mean: float
    stderr: float
    target: float
    target_stderr: float
    z: float

    @property
    def ok(self) -> bool:
        return abs(self.mean - self.target) <= 3 * math.hypot(self.stderr, self.target_stderr)


def stationary_moment(ens: WeightedEnsemble, lam: float, rng: np.random.Generator, draws: int = 1,
                      pad: int = DEFAULT_PAD) -> tuple[float, np.ndarray]:
    """Weighted mean of ``Z_1^lam`` over fresh one-segment extensions of the
    particles; also returns the per-particle averages."""
    N = ens.size
    w = ens.weights()
    acc = np.zeros(N)
    for _ in range(draws):
        segs = sample_segments(ens.windows[0].cfg, N, rng)
        lz = one_step_log_ratio(ens.windows, segs, pad=pad)
        lz = np.where(np.isnan(lz), -np.inf, lz)
        acc += np.exp(lam * lz) if lam > 0 else 1.0
    acc /= draws
    return math.fsum((w * acc).tolist()), acc


def invariant_check(ensembles, lam: float, xi_ref: float, xi_ref_se: float = 0.0,
                    rng: np.random.Generator | None = None, draws: int = 4, pad: int = DEFAULT_PAD) -> InvariantReport:
    """Compare ``E^pi[Z_1^lam]`` over stationary ensembles with ``exp(-xi_ref)``.

    ``ensembles`` is one ensemble or a list of independent ones; with a list
    the standard error is the spread of the per-ensemble means, otherwise a
    weighted iid formula over particles.
    """
    if isinstance(ensembles, WeightedEnsemble):
        ensembles = [ensembles]
    if rng is None:
        raise ValueError("an explicit random stream is required")
    means = []
    per = None
    for ens in ensembles:
        m, per = stationary_moment(ens, lam, rng, draws, pad)
        means.append(m)
    means = np.array(means)
    if len(means) > 1:
        mean = _stats.fsum_mean(means)
        se = float(means.std(ddof=1) / math.sqrt(len(means)))
    else:
        w = ensembles[0].weights()
        mean = float(means[0])
        # effective sample size accounts for weight degeneracy
        se = float(math.sqrt(np.sum(w * (per - mean) ** 2) / max(ensembles[0].ess() - 1, 1)))
    target = math.exp(-xi_ref)
    tse = target * xi_ref_se
    zval = (mean - target) / math.hypot(se, tse) if math.hypot(se, tse) > 0 else (0.0 if mean == target else math.inf)
    return InvariantReport(mean, se, target, tse, zval)


def restriction_distribution(ens: WeightedEnsemble, k: int) -> dict:
    """Weighted law of the top-``k`` level occupancy state of the particles."""
    w = ens.weights()
    out: dict = {}
    for wi, q in zip(ens.windows, w):
        s = window_state(wi, k)
        out[s] = out.get(s, 0.0) + float(q)
    return out


def tv_distance(p: dict, q: dict) -> float:
    """``sum |p - q|`` over the union of supports."""
    keys = set(p) | set(q)
    return math.fsum(abs(p.get(s, 0.0) - q.get(s, 0.0)) for s in keys)


def transfer_restriction_curve(res: TransferResult, start, k: int, steps: int) -> np.ndarray:
    """Noise-free counterpart of :func:`restriction_tv_curve`.

    Propagates a point mass at occupancy state ``start`` through the
    memory-``m`` transfer matrix, normalising each step, and returns the TV
    distance of its top-``k`` restriction from that of the left eigenvector
    for times ``1..steps``.
    """
    if k > res.memory:
        raise ValueError("k must not exceed the transfer memory")
    idx = {s: i for i, s in enumerate(res.states)}
    if start not in idx:
        raise KeyError("start state is not among the transfer states")
    groups: dict = {}
    for i, s in enumerate(res.states):
        groups.setdefault((s[0][:k], s[1][:k]), []).append(i)
    gl = list(groups.values())
    M = res.matrix
    v = np.zeros(len(res.states))
    v[idx[start]] = 1.0
    out = []
    for _ in range(steps):
        v = M.T @ v
        v = v / v.sum()
        out.append(math.fsum(abs(v[g].sum() - res.left[g].sum()) for g in gl))
    return np.array(out)


@dataclass
class TVCurve:
    times: np.ndarray
    tv: np.ndarray
    floor: float
    rate: float
    r2: float
    fit_times: np.ndarray


def restriction_tv_curve(w0: PathWindow, lam: float, k: int, N: int, particles: int, cfg: CylinderConfig,
                         seed: int = 0, pad: int = DEFAULT_PAD, ref_from: int | None = None,
                         floor_factor: float = 2.0, replicas: int = 1) -> TVCurve:
    """TV distance between the top-``k`` restriction law at time ``t`` and a
    reference law pooled over late times of an independent ensemble, with
    an exponential fit over the times where the curve clears the noise floor.

    With ``replicas > 1`` the time-``t`` law is the average over that many
    independent ensembles (stream keys ``(0,)``, ``(3,)``, ``(4,)``, ...),
    which lowers the sampling-noise floor by about ``sqrt(replicas)``.
    The floor is the larger of the late-time median of the curve and the TV
    between two independent late-time pooled laws.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    ref_from = N // 2 if ref_from is None else ref_from
    snaps: dict = {}

    def rec_main(t, ens):
        cur = snaps.setdefault(t, {})
        for s, q in restriction_distribution(ens, k).items():
            cur[s] = cur.get(s, 0.0) + q / replicas

    for r in range(replicas):
        key = (0,) if r == 0 else (2 + r,)
        run_ensemble(w0, lam, N, particles, cfg, seed, pad=pad, stream_key=key, callback=rec_main)
    pools = []
    for key in ((1,), (2,)):
        pool: dict = {}
        cnt = [0]

        def rec(t, ens, pool=pool, cnt=cnt):
            if t > ref_from:
                for s, q in restriction_distribution(ens, k).items():
                    pool[s] = pool.get(s, 0.0) + q
                cnt[0] += 1

        run_ensemble(w0, lam, N, particles, cfg, seed, pad=pad, stream_key=key, callback=rec)
        pools.append({s: v / cnt[0] for s, v in pool.items()})
    ref = pools[0]
    times = np.array(sorted(snaps))
    tv = np.array([tv_distance(snaps[t], ref) for t in times])
    late = tv[times > ref_from]
    floor = max(float(np.median(late)) if len(late) else 0.0, tv_distance(pools[0], pools[1]))
    sel = tv > floor_factor * floor
    # keep the initial decaying run only
    if sel.any():
        last = np.argmax(~sel) if (~sel).any() else len(sel)
        sel = np.zeros_like(sel)
        sel[:last] = True
    ft = times[sel]
    if len(ft) >= 3:
        fit = _stats.fit_line(ft, np.log(tv[sel]))
        rate, r2 = -fit.slope, fit.r2
    else:
        rate, r2 = float("nan"), float("nan")
    return TVCurve(times, tv, floor, rate, r2, ft)


__all__ = [
    "Method", "ExponentEstimate", "upper_bound", "simulate_survival", "log_moment_table", "estimate_direct",
    "WeightedEnsemble", "save_ensemble", "load_ensemble", "resample_step", "run_ensemble", "estimate_resample", "TraceTable", "trace_table",
    "TransferResult", "transfer_eigen", "transfer_estimate", "window_state", "straight_state", "QTable",
    "enumerate_q", "SubadditivityReport", "subadditivity_audit", "XiCurve", "xi_curve", "InvariantReport",
    "invariant_check", "stationary_moment", "restriction_distribution", "tv_distance", "TVCurve",
    "restriction_tv_curve", "transfer_restriction_curve",
]

