"""Couplings: h-processes started at different sites, and pairs of weighted path chains.

* :func:`couple_hprocesses` runs two h-processes level by level and
  maximally couples their next-level arrival distributions; once they
  meet they move together.  :func:`hprocess_coupling_exact` computes the
  same failure probability exactly from the pair chain.
* :func:`couple_weighted_chains` grows two windows under the one-step
  weighted kernel ``M(gamma) Z_1^lam K(new)`` with shared proposals and
  shared acceptance uniforms (coupled rejection sampling), tracking the
  number ``sigma`` of most recent segments on which the chains agree.
* :func:`decoupling_fit`, :func:`tail_bound_check` and the dominating
  chain helpers measure the rates that drive exponential forgetting.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _stats
from .cylinder import CylinderConfig
from .errors import ConvergenceError, EmptyMeasureError, UndefinedStateError
from .harmonic import DEFAULT_PAD, _solve_h_free, Slab, one_step_log_ratio
from .paths import PathWindow, agreement_count, concat_arrays, cross_sections, in_V_k, sample_segments


# ---------------------------------------------------------------------------
# maximal coupling of two discrete distributions
# ---------------------------------------------------------------------------

def maximal_coupling(p: np.ndarray, q: np.ndarray, rng: np.random.Generator, size: int = 1):
    """Draw ``size`` pairs ``(X, Y)`` with ``X ~ p``, ``Y ~ q`` and
    ``P{X != Y} = sum|p - q| / 2``.  Residual draws are independent."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    ov = np.minimum(p, q)
    s = ov.sum()
    u = rng.random(size)
    same = u < s
    x = np.empty(size, dtype=np.int64)
    y = np.empty(size, dtype=np.int64)
    ns = int(same.sum())
    if ns:
        x[same] = y[same] = rng.choice(len(p), size=ns, p=ov / s)
    nd = size - ns
    if nd:
        rp, rq = p - ov, q - ov
        x[~same] = rng.choice(len(p), size=nd, p=rp / rp.sum())
        y[~same] = rng.choice(len(q), size=nd, p=rq / rq.sum())
    return x, y


def _sample_rows(K: np.ndarray, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample one column per row index from the stochastic rows ``K[rows]``."""
    cum = np.cumsum(K[rows], axis=1)
    cum[:, -1] = np.maximum(cum[:, -1], 1.0)
    u = rng.random(len(rows)) * cum[:, -1]
    return (u[:, None] >= cum).sum(axis=1)


# ---------------------------------------------------------------------------
# h-process coupling
# ---------------------------------------------------------------------------

@dataclass
class HCouplingSetup:
    """Level kernels of the h-process in the complement of a window."""

    kernels: list          # kernels[i]: arrival kernel from level from_level+i to the next
    from_level: int
    to_level: int
    connected: list        # per kernel level: is the free cross-section connected
    live: np.ndarray       # live cells at from_level

    @property
    def n_connected(self) -> int:
        return int(sum(self.connected))


def hprocess_setup(w: PathWindow, depth: int, target: int, pad: int = DEFAULT_PAD) -> HCouplingSetup:
    """Kernels from level ``-depth`` up to level ``target`` (``-depth < target <= 0``)."""
    cfg = w.cfg
    from_level = -depth
    if not (from_level < target <= 0):
        raise ValueError("need -depth < target <= 0")
    b = min(w.default_bottom(pad), from_level - pad)
    free = w.free_mask(b, 0)
    fld = _solve_h_free(cfg, Slab(b, 0, frozenset()), free, tol=1e-10)
    H, E = fld.array, fld.E
    kernels = []
    for lev in range(from_level, target):
        k = lev - b
        hj, hn = H[k], H[k + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            K = np.where(hj[:, None] > 0, E[k] * hn[None, :] / hj[:, None], 0.0)
        kernels.append(K)
    prof = cross_sections(w)
    conn = [bool(prof.indicator(lev)) for lev in range(from_level, target)]
    live = np.flatnonzero(free[from_level - b] & (H[from_level - b] > 0))
    if len(live) == 0:
        raise EmptyMeasureError(f"no live site on level {from_level}")
    return HCouplingSetup(kernels, from_level, target, conn, live)


@dataclass
class HCouplingResult:
    coupled: np.ndarray          # bool per replica: merged by the target level
    meet_level: np.ndarray       # level of first agreement (nan if never)
    end_a: np.ndarray            # arrival cells at the target level
    end_b: np.ndarray
    n_connected: int

    @property
    def failure_rate(self) -> float:
        return float(1.0 - self.coupled.mean())

    def failure_se(self) -> float:
        return _stats.binom_se(int((~self.coupled).sum()), len(self.coupled))


def couple_hprocesses_batch(w: PathWindow, depth: int, target: int, rng: np.random.Generator,
                            starts: tuple[int, int] | None = None, replicas: int = 1,
                            pad: int = DEFAULT_PAD, setup: HCouplingSetup | None = None) -> HCouplingResult:
    """Vectorised :func:`couple_hprocesses` over ``replicas`` independent pairs.

    ``starts`` are two cells on level ``-depth``; the default is the first
    two live cells there.
    """
    st = hprocess_setup(w, depth, target, pad) if setup is None else setup
    if starts is None:
        if len(st.live) < 2:
            starts = (int(st.live[0]), int(st.live[0]))
        else:
            starts = (int(st.live[0]), int(st.live[1]))
    za, zb = starts
    if za not in st.live or zb not in st.live:
        raise UndefinedStateError("start cells must be live free sites of the bottom level")
    x = np.full(replicas, za, dtype=np.int64)
    y = np.full(replicas, zb, dtype=np.int64)
    meet = np.full(replicas, np.nan)
    meet[x == y] = st.from_level
    for i, K in enumerate(st.kernels):
        lev = st.from_level + i + 1
        same = x == y
        if same.any():
            nx = _sample_rows(K, x[same], rng)
            x[same] = nx
            y[same] = nx
        diff = np.flatnonzero(~same)
        if len(diff):
            P, Q = K[x[diff]], K[y[diff]]
            ov = np.minimum(P, Q)
            s = ov.sum(axis=1)
            u = rng.random(len(diff))
            hit = u < s
            if hit.any():
                h = diff[hit]
                c = _sample_rows(ov[hit] / s[hit, None], np.arange(hit.sum()), rng)
                x[h] = c
                y[h] = c
                meet[h] = lev
            miss = ~hit
            if miss.any():
                m = diff[miss]
                rp = P[miss] - ov[miss]
                rq = Q[miss] - ov[miss]
                ar = np.arange(miss.sum())
                x[m] = _sample_rows(rp / rp.sum(axis=1, keepdims=True), ar, rng)
                y[m] = _sample_rows(rq / rq.sum(axis=1, keepdims=True), ar, rng)
    return HCouplingResult(x == y, meet, x, y, st.n_connected)


def couple_hprocesses(w: PathWindow, depth: int, target: int, cfg: CylinderConfig | None,
                      rng: np.random.Generator, starts: tuple[int, int] | None = None,
                      pad: int = DEFAULT_PAD):
    """One coupled pair; returns ``(coupled, meet_level or None)``."""
    r = couple_hprocesses_batch(w, depth, target, rng, starts, 1, pad)
    ml = r.meet_level[0]
    return bool(r.coupled[0]), (None if math.isnan(ml) else int(ml))


def hprocess_coupling_exact(setup: HCouplingSetup, starts: tuple[int, int]) -> dict:
    """Exact failure probability of the level-wise maximal coupling.

    Propagates the sub-probability of the uncoupled pair ``(x, y)``; also
    returns the per-level one-step failure maxima ``max_{x != y} TV/2`` and
    the exact TV between the two arrival laws at the target level.
    """
    C = setup.kernels[0].shape[0]
    za, zb = starts
    P = np.zeros((C, C))
    if za != zb:
        P[za, zb] = 1.0
    per_level = []
    la = np.zeros(C)
    lb = np.zeros(C)
    la[za] = 1.0
    lb[zb] = 1.0
    for K in setup.kernels:
        ov = np.minimum(K[:, None, :], K[None, :, :])          # (x, y, c)
        s = ov.sum(axis=-1)
        rx = K[:, None, :] - ov
        ry = K[None, :, :] - ov
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(1 - s > 1e-300, 1.0 / (1 - s), 0.0)
        newP = np.einsum("xy,xyc,xyd,xy->cd", P, rx, ry, scale)
        off = ~np.eye(C, dtype=bool)
        live_rows = K.sum(axis=1) > 0
        mask = off & live_rows[:, None] & live_rows[None, :]
        per_level.append(float((1 - s)[mask].max()) if mask.any() else 0.0)
        P = newP
        la = la @ K
        lb = lb @ K
    return {"failure": float(P.sum()), "per_level": per_level,
            "tv": float(np.abs(la - lb).sum()), "law_a": la, "law_b": lb}


# ---------------------------------------------------------------------------
# weighted chains
# ---------------------------------------------------------------------------

class Cause(str, enum.Enum):
    MISMATCH = "segment-mismatch"
    NOT_V = "not-in-V_k"


@dataclass
class SigmaTrace:
    sigma: list
    decouple_events: list = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.sigma, self.sigma[1:]):
            if b not in (0, a + 1):
                raise ValueError(f"sigma step {a} -> {b} is not allowed")

    def to_csv(self) -> str:
        causes = {s: c for s, c in self.decouple_events}
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["step", "sigma", "cause"])
        for n, s in enumerate(self.sigma):
            c = causes.get(n, "")
            wr.writerow([n, s, c.value if isinstance(c, Cause) else c])
        return buf.getvalue()


def _k_lookup(K, windows: Sequence[PathWindow]) -> np.ndarray:
    if K is None:
        return np.ones(len(windows))
    from .exponent import window_state
    out = np.array([K.K_of(window_state(w, K.memory)) for w in windows])
    return np.where(np.isfinite(out), out, 1.0)


def couple_weighted_chains(w: PathWindow | Sequence[PathWindow], w2: PathWindow | Sequence[PathWindow],
                           lam: float, N: int, delta: float = 0.25, cfg: CylinderConfig | None = None,
                           rng: np.random.Generator | None = None, K=None, depth: int = 10, batch: int = 8,
                           pad: int = DEFAULT_PAD, max_rounds: int = 10_000) -> list[SigmaTrace]:
    """Evolve coupled pairs of weighted chains for ``N`` steps.

    ``w``/``w2`` are single windows or equal-length lists (one pair per
    trace).  Each chain's next segment has law proportional to
    ``M(gamma) Z_1^lam K(new state)`` with ``K`` a :class:`TransferResult`
    (memory-``m`` approximation) or ``None`` for ``K = 1``.  Both chains
    rejection-sample from shared proposals and shared uniforms; they couple
    for one more step when they accept the same proposal.  When ``sigma > 0``
    and either window fails ``in_V_k`` the chains move independently and
    ``sigma`` resets with cause ``not-in-V_k``.
    """
    if rng is None:
        raise ValueError("an explicit random stream is required")
    A = [w] if isinstance(w, PathWindow) else list(w)
    B = [w2] if isinstance(w2, PathWindow) else list(w2)
    if len(A) != len(B):
        raise ValueError("need one partner per window")
    cfg = A[0].cfg if cfg is None else cfg
    A = [x.truncated(depth) for x in A]
    B = [x.truncated(depth) for x in B]
    R = len(A)
    sig = np.array([agreement_count(a, b) for a, b in zip(A, B)], dtype=np.int64)
    sig = np.minimum(sig, depth)
    traces = [SigmaTrace([int(s)]) for s in sig]
    Kmax = float(K.K.max()) if K is not None else 1.0

    def accept_prob(wins, segs):
        if lam == 0 and K is None:
            return np.ones(len(wins))
        lz = one_step_log_ratio(wins, segs, pad=pad)
        lz = np.where(np.isnan(lz), -np.inf, lz)
        z = np.exp(lam * lz) if lam > 0 else np.isfinite(lz).astype(float)
        if K is not None:
            new = [concat_arrays(x, lv, cl, max(K.memory, 1)) for x, (lv, cl) in zip(wins, segs)]
            z = z * _k_lookup(K, new) / Kmax
        return z

    for n in range(N):
        inV = np.ones(R, dtype=bool)
        for i in np.flatnonzero(sig > 0):
            kk = int(min(sig[i], depth))
            inV[i] = in_V_k(A[i], kk, delta) and in_V_k(B[i], kk, delta)
        shared = inV
        segA: list = [None] * R
        segB: list = [None] * R
        tagA = np.full(R, -1, dtype=np.int64)   # global proposal index of acceptance
        tagB = np.full(R, -1, dtype=np.int64)
        offset = 0
        rounds = 0
        while (tagA < 0).any() or (tagB < 0).any():
            rounds += 1
            if rounds > max_rounds:
                raise ConvergenceError("rejection sampler made no progress (all weights vanish)")
            pa = np.flatnonzero(tagA < 0)
            pb = np.flatnonzero(tagB < 0)
            # shared proposals serve both chains of a shared trace
            need = sorted(set(pa.tolist()) | set(pb.tolist()))
            prop = {}
            segs = sample_segments(cfg, len(need) * batch, rng)
            us = rng.random(len(need) * batch)
            for t, i in enumerate(need):
                prop[i] = (segs[t * batch:(t + 1) * batch], us[t * batch:(t + 1) * batch])
            # independent proposals for chain B of non-shared traces
            indep = [i for i in pb if not shared[i]]
            prop_b = {}
            if indep:
                sb = sample_segments(cfg, len(indep) * batch, rng)
                ub = rng.random(len(indep) * batch)
                for t, i in enumerate(indep):
                    prop_b[i] = (sb[t * batch:(t + 1) * batch], ub[t * batch:(t + 1) * batch])
            wa, sa, ia = [], [], []
            for i in pa:
                for bb, s in enumerate(prop[i][0]):
                    wa.append(A[i]); sa.append(s); ia.append((i, bb))
            wb, sbb, ib = [], [], []
            for i in pb:
                src = prop[i] if shared[i] else prop_b[i]
                for bb, s in enumerate(src[0]):
                    wb.append(B[i]); sbb.append(s); ib.append((i, bb))
            aa = accept_prob(wa, sa) if wa else np.zeros(0)
            ab = accept_prob(wb, sbb) if wb else np.zeros(0)
            for (i, bb), a in zip(ia, aa):
                if tagA[i] < 0 and prop[i][1][bb] < a:
                    tagA[i] = offset + bb
                    segA[i] = prop[i][0][bb]
            for (i, bb), a in zip(ib, ab):
                src = prop[i] if shared[i] else prop_b[i]
                if tagB[i] < 0 and src[1][bb] < a:
                    tagB[i] = offset + bb
                    segB[i] = src[0][bb]
            offset += batch
        for i in range(R):
            if shared[i] and tagA[i] == tagB[i]:
                sig[i] = sig[i] + 1
            else:
                cause = Cause.MISMATCH if shared[i] else Cause.NOT_V
                sig[i] = 0
                traces[i].decouple_events.append((n + 1, cause))
            traces[i].sigma.append(int(sig[i]))
            A[i] = concat_arrays(A[i], *segA[i], depth)
            B[i] = concat_arrays(B[i], *segB[i], depth)
    return traces


# ---------------------------------------------------------------------------
# rate fits
# ---------------------------------------------------------------------------

@dataclass
class HazardTable:
    k: np.ndarray
    at_risk: np.ndarray
    decoupled: np.ndarray

    @property
    def hazard(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.decoupled / self.at_risk

    def upper(self, z: float = 3.0) -> np.ndarray:
        return np.array([_stats.binom_upper(int(d), int(n), z) for d, n in zip(self.decoupled, self.at_risk)])


def hazard_table(traces: Sequence[SigmaTrace], k_max: int | None = None) -> HazardTable:
    """Counts of ``sigma_n = k`` and of ``sigma_{n+1} = 0`` given ``sigma_n = k``."""
    at, dec = {}, {}
    for tr in traces:
        for a, b in zip(tr.sigma, tr.sigma[1:]):
            at[a] = at.get(a, 0) + 1
            if b == 0:
                dec[a] = dec.get(a, 0) + 1
    ks = sorted(at)
    if k_max is not None:
        ks = [k for k in ks if k <= k_max]
    return HazardTable(np.array(ks), np.array([at[k] for k in ks]), np.array([dec.get(k, 0) for k in ks]))


@dataclass
class RateFit:
    rate: float
    log_const: float
    r2: float
    points: np.ndarray
    values: np.ndarray

    def to_json(self) -> str:
        return json.dumps({"rate": self.rate, "log_const": self.log_const, "r2": self.r2,
                           "points": self.points.tolist(), "values": self.values.tolist()}, sort_keys=True)


def _log_linear(x, y, w=None) -> RateFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        return RateFit(float("nan"), float("nan"), float("nan"), x, y)
    fit = _stats.fit_line(x, np.log(y), w)
    return RateFit(-fit.slope, fit.intercept, fit.r2, x, y)


def decoupling_fit(traces: Sequence[SigmaTrace], k_min: int = 1, min_events: int = 5) -> RateFit:
    """Log-linear fit of the decoupling hazard ``P{sigma_{n+1} = 0 | sigma_n = k}``
    over ``k >= k_min`` with at least ``min_events`` decouplings (weights:
    event counts)."""
    tab = hazard_table(traces)
    sel = (tab.k >= k_min) & (tab.decoupled >= min_events)
    return _log_linear(tab.k[sel], tab.hazard[sel], tab.decoupled[sel].astype(float))


def couple_step_floor(traces: Sequence[SigmaTrace]) -> dict:
    """Per-k estimates of ``P{sigma_{n+1} = k+1 | sigma_n = k}`` and their minimum."""
    tab = hazard_table(traces)
    stay = 1 - tab.hazard
    return {"k": tab.k.tolist(), "couple_prob": stay.tolist(), "b_hat": float(stay.min()) if len(stay) else float("nan")}


@dataclass
class TailReport:
    n: np.ndarray
    prob: np.ndarray
    stderr: np.ndarray
    fit: RateFit
    monotone: bool

    def to_json(self) -> str:
        return json.dumps({"n": self.n.tolist(), "prob": self.prob.tolist(), "stderr": self.stderr.tolist(),
                           "beta1": self.fit.rate, "r2": self.fit.r2, "monotone": self.monotone}, sort_keys=True)


def tail_bound_check(traces: Sequence[SigmaTrace], min_traces: int = 1000, n_fit_min: int = 1) -> TailReport:
    """Empirical ``P{sigma_{2n} < n}`` with a log-linear fit over the positive values."""
    if len(traces) < min_traces:
        raise ValueError(f"need at least {min_traces} traces, got {len(traces)}")
    L = min(len(t.sigma) for t in traces)
    S = np.array([t.sigma[:L] for t in traces])
    ns = np.arange(0, (L - 1) // 2 + 1)
    R = S.shape[0]
    cnt = np.array([(S[:, 2 * n] < n).sum() for n in ns])
    prob = cnt / R
    se = np.array([_stats.binom_se(int(c), R) for c in cnt])
    sel = (ns >= n_fit_min) & (cnt > 0)
    fit = _log_linear(ns[sel], prob[sel], cnt[sel].astype(float))
    mono = bool(np.all(np.diff(prob[ns >= 1]) <= 3 * np.sqrt(se[ns >= 1][1:] ** 2 + se[ns >= 1][:-1] ** 2)))
    return TailReport(ns, prob, se, fit, mono)


# ---------------------------------------------------------------------------
# dominating chain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DominatingChain:
    """Markov chain on ``0, 1, 2, ...`` that climbs from ``k`` with probability
    ``1 - exp(-alpha (k+1))`` and otherwise drops to 0."""

    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")

    def p_up(self, k) -> np.ndarray:
        return 1.0 - np.exp(-self.alpha * (np.asarray(k) + 1))

    def tail_exact(self, horizon: int, k_max: int | None = None) -> np.ndarray:
        """``P{s_n >= k}`` for ``n = 0..horizon`` and ``k = 0..k_max`` by forward recursion."""
        k_max = horizon if k_max is None else k_max
        dist = np.zeros(horizon + 2)
        dist[0] = 1.0
        out = np.zeros((horizon + 1, k_max + 1))
        ks = np.arange(horizon + 2)
        for n in range(horizon + 1):
            tail = np.cumsum(dist[::-1])[::-1]
            out[n] = tail[: k_max + 1] if k_max + 1 <= len(tail) else np.pad(tail, (0, k_max + 1 - len(tail)))
            up = dist * self.p_up(ks)
            new = np.zeros_like(dist)
            new[1:] = up[:-1]
            new[0] = (dist * (1 - self.p_up(ks))).sum()
            dist = new
        return out

    def tau_law(self, k_max: int) -> dict:
        """``P{tau = 1..k_max}`` and ``P{tau = inf}`` (truncated product) of the
        first return time to 0."""
        a = self.alpha
        p = [math.exp(-a)]
        prod = 1.0
        for k in range(1, k_max):
            prod *= 1 - math.exp(-k * a)
            p.append(math.exp(-a * (k + 1)) * prod)
        inf = 1.0
        j = 1
        while True:
            t = math.exp(-j * a)
            inf *= 1 - t
            if t < 1e-17:
                break
            j += 1
        return {"tau": np.array(p), "tau_inf": inf}


def dominating_chain_sim(alpha: float, horizon: int, replicas: int, rng: np.random.Generator) -> np.ndarray:
    """Simulate ``s_n``; returns the paths, shape ``(replicas, horizon+1)``."""
    ch = DominatingChain(alpha)
    s = np.zeros(replicas, dtype=np.int64)
    out = np.zeros((replicas, horizon + 1), dtype=np.int64)
    for n in range(horizon):
        up = rng.random(replicas) < ch.p_up(s)
        s = np.where(up, s + 1, 0)
        out[:, n + 1] = s
    return out


def tail_table(paths: np.ndarray, k_max: int) -> np.ndarray:
    """Empirical ``P{s_n >= k}`` from simulated paths; shape ``(n, k_max+1)``."""
    return np.stack([(paths >= k).mean(axis=0) for k in range(k_max + 1)], axis=1)


def calibrate_alpha(traces: Sequence[SigmaTrace], z: float = 3.0, k_max: int | None = None) -> float:
    """Largest ``alpha`` with ``hazard_k <= exp(-alpha (k+1))`` for every
    observed ``k``, using Wilson upper bounds for the hazards (the climb
    probability from 0 plays the role of ``b``)."""
    tab = hazard_table(traces, k_max)
    up = tab.upper(z)
    vals = [-math.log(u) / (k + 1) for k, u in zip(tab.k, up) if 0 < u < 1]
    if not vals or any(u >= 1 for u in up):
        raise ValueError("hazard bounds do not allow a positive alpha")
    return float(min(vals))


@dataclass
class DominationReport:
    alpha: float
    checks: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def domination_check(traces: Sequence[SigmaTrace], alpha: float, k_max: int | None = None,
                     slack: float = 3.0, shift: int = 2) -> DominationReport:
    """Check ``P{s_n >= k} <= P{sigma_{n+shift} >= k}`` for all tested ``(n, k)``,
    with the exact law of ``s_n`` and a ``slack``-sigma allowance for the
    empirical ``sigma`` tail."""
    L = min(len(t.sigma) for t in traces)
    S = np.array([t.sigma[:L] for t in traces])
    R = S.shape[0]
    horizon = L - 1 - shift
    k_max = horizon + 1 if k_max is None else k_max
    exact = DominatingChain(alpha).tail_exact(horizon, k_max)
    viol = []
    checks = 0
    for n in range(horizon + 1):
        col = S[:, n + shift]
        for k in range(k_max + 1):
            checks += 1
            emp = (col >= k).mean()
            se = math.sqrt(max(emp * (1 - emp), 1.0 / R) / R)
            if exact[n, k] > emp + slack * se:
                viol.append((n, k, float(exact[n, k]), float(emp)))
    return DominationReport(alpha, checks, viol)


def traces_to_csv(traces: Sequence[SigmaTrace]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["trace", "step", "sigma", "cause"])
    for t, tr in enumerate(traces):
        causes = dict(tr.decouple_events)
        for n, s in enumerate(tr.sigma):
            c = causes.get(n, "")
            wr.writerow([t, n, s, c.value if isinstance(c, Cause) else c])
    return buf.getvalue()


__all__ = [
    "maximal_coupling", "HCouplingSetup", "hprocess_setup", "HCouplingResult", "couple_hprocesses",
    "couple_hprocesses_batch", "hprocess_coupling_exact", "Cause", "SigmaTrace", "couple_weighted_chains",
    "HazardTable", "hazard_table", "RateFit", "decoupling_fit", "couple_step_floor", "TailReport",
    "tail_bound_check", "DominatingChain", "dominating_chain_sim", "tail_table", "calibrate_alpha",
    "DominationReport", "domination_check", "traces_to_csv",
]
