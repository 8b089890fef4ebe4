"""Geometry of the discrete cylinder Z x T_L^(d-1) and the biased walk on it.

A site is a pair ``(level, torus)`` where ``level`` is the Z coordinate and
``torus`` is a ``d-1`` tuple reduced mod ``L``.  Internally the torus is
flattened to a *cell index* in ``range(L**(d-1))`` (mixed radix, first
coordinate least significant); most of the numerical code works on
``(level, cell)`` integer pairs for speed.

The walk moves forward (level + 1) with probability ``p/d``, backward with
``(1-p)/d`` and along each of the ``d-1`` torus axes by +-1 with ``1/(2d)``
each.  On a torus of side ``L = 2`` the +1 and -1 moves land on the same
cell, and their probabilities are merged.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError


class Site(NamedTuple):
    """A lattice point of the cylinder."""

    level: int
    torus: tuple[int, ...]


@dataclass(frozen=True)
class CylinderConfig:
    """Cylinder shape ``Z x T_L^(d-1)`` and walk bias ``p``."""

    d: int
    L: int
    p: float

    def __post_init__(self):
        if isinstance(self.d, bool) or not isinstance(self.d, (int, np.integer)):
            raise ConfigError(f"d must be an integer, got {self.d!r}")
        if isinstance(self.L, bool) or not isinstance(self.L, (int, np.integer)):
            raise ConfigError(f"L must be an integer, got {self.L!r}")
        if self.d < 2:
            raise ConfigError(f"d must be >= 2 (the cross-section is empty for d=1), got {self.d}")
        if self.L < 2:
            raise ConfigError(f"L must be >= 2, got {self.L}")
        p = float(self.p)
        if not (0.5 < p < 1.0):
            raise ConfigError(f"p must lie in (1/2, 1), got {self.p!r}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "L", int(self.L))
        object.__setattr__(self, "p", p)

    # -- basic constants -------------------------------------------------
    @property
    def forward(self) -> float:
        """Probability of the step to level + 1."""
        return self.p / self.d

    @property
    def backward(self) -> float:
        """Probability of the step to level - 1."""
        return (1.0 - self.p) / self.d

    @property
    def n_cells(self) -> int:
        """Number of sites on one level, ``L**(d-1)``."""
        return self.L ** (self.d - 1)

    @property
    def ratio(self) -> float:
        """``(1-p)/p``, the gambler's-ruin ratio of the level coordinate."""
        return (1.0 - self.p) / self.p

    # -- cell indexing ---------------------------------------------------
    def cell_of(self, torus: Sequence[int]) -> int:
        if len(torus) != self.d - 1:
            raise ValueError(f"torus coordinate must have length {self.d - 1}, got {tuple(torus)!r}")
        c = 0
        for i, x in enumerate(torus):
            c += (int(x) % self.L) * self.L**i
        return c

    def torus_of(self, cell: int) -> tuple[int, ...]:
        cell = int(cell)
        out = []
        for _ in range(self.d - 1):
            out.append(cell % self.L)
            cell //= self.L
        return tuple(out)

    def site(self, level: int, torus: Sequence[int] | int = 0) -> Site:
        """Build a Site, reducing torus coordinates mod L.

        ``torus`` may be a tuple or a flat cell index.
        """
        if isinstance(torus, (int, np.integer)):
            return Site(int(level), self.torus_of(int(torus) % self.n_cells))
        if len(torus) != self.d - 1:
            raise ValueError(f"torus coordinate must have length {self.d - 1}")
        return Site(int(level), tuple(int(x) % self.L for x in torus))

    def validate_site(self, z: Site) -> None:
        if len(z.torus) != self.d - 1 or any(not (0 <= x < self.L) for x in z.torus):
            raise ValueError(f"invalid site {z!r} for {self}")

    # -- lateral structure ----------------------------------------------
    @cached_property
    def lateral_moves(self) -> tuple[tuple[tuple[int, float], ...], ...]:
        """Per cell: merged ``(target_cell, probability)`` lateral moves."""
        step = 1.0 / (2 * self.d)
        moves = []
        for c in range(self.n_cells):
            coords = self.torus_of(c)
            acc: dict[int, float] = {}
            for axis in range(self.d - 1):
                for sgn in (1, -1):
                    t = list(coords)
                    t[axis] = (t[axis] + sgn) % self.L
                    tc = self.cell_of(t)
                    acc[tc] = acc.get(tc, 0.0) + step
            moves.append(tuple(sorted(acc.items())))
        return tuple(moves)

    @cached_property
    def lateral_matrix(self) -> np.ndarray:
        """``C x C`` matrix of lateral transition probabilities (row sums ``(d-1)/d``)."""
        C = self.n_cells
        M = np.zeros((C, C))
        for c, mv in enumerate(self.lateral_moves):
            for t, q in mv:
                M[c, t] += q
        M.setflags(write=False)
        return M

    @cached_property
    def translation_table(self) -> np.ndarray:
        """``T[c, s]`` = cell of ``torus(c) + torus(s)`` (mod L)."""
        C = self.n_cells
        coords = np.array([self.torus_of(c) for c in range(C)], dtype=np.int64).reshape(C, self.d - 1)
        summed = (coords[:, None, :] + coords[None, :, :]) % self.L
        weights = self.L ** np.arange(self.d - 1)
        T = (summed * weights).sum(axis=-1)
        T.setflags(write=False)
        return T

    @cached_property
    def negation_table(self) -> np.ndarray:
        """``N[c]`` = cell of ``-torus(c)``."""
        C = self.n_cells
        out = np.array([self.cell_of([-x for x in self.torus_of(c)]) for c in range(C)], dtype=np.int64)
        out.setflags(write=False)
        return out

    @cached_property
    def _move_table(self):
        # cumulative distribution over moves, per cell: (dlevel, dcell-target)
        C = self.n_cells
        nmoves = 2 + max(len(m) for m in self.lateral_moves)
        dlev = np.zeros((C, nmoves), dtype=np.int64)
        tgt = np.zeros((C, nmoves), dtype=np.int64)
        cum = np.ones((C, nmoves))
        for c, mv in enumerate(self.lateral_moves):
            probs = [self.forward, self.backward] + [q for _, q in mv]
            dl = [1, -1] + [0] * len(mv)
            tg = [c, c] + [t for t, _ in mv]
            k = len(probs)
            dlev[c, :k] = dl
            tgt[c, :k] = tg
            # pad with the last real move so any roundoff overflow is harmless
            dlev[c, k:] = dl[-1]
            tgt[c, k:] = tg[-1]
            cum[c, :k] = np.cumsum(probs)
        cum[:, -1] = 1.0
        return dlev, tgt, cum


def neighbors(z: Site, cfg: CylinderConfig) -> list[tuple[Site, float]]:
    """One-step transition distribution from ``z`` (lateral duplicates merged)."""
    cfg.validate_site(z)
    c = cfg.cell_of(z.torus)
    out = [
        (Site(z.level + 1, z.torus), cfg.forward),
        (Site(z.level - 1, z.torus), cfg.backward),
    ]
    for t, q in cfg.lateral_moves[c]:
        out.append((Site(z.level, cfg.torus_of(t)), q))
    return out


def step_cells(levels: np.ndarray, cells: np.ndarray, cfg: CylinderConfig, u: np.ndarray):
    """Vectorised walk step driven by uniforms ``u`` in [0, 1).

    Returns new ``(levels, cells)`` arrays.
    """
    dlev, tgt, cum = cfg._move_table
    k = (u[:, None] >= cum[cells]).sum(axis=1)
    k = np.minimum(k, cum.shape[1] - 1)
    return levels + dlev[cells, k], tgt[cells, k]


def sample_step(z: Site, cfg: CylinderConfig, rng: np.random.Generator) -> Site:
    """Draw one step of the walk from ``z``."""
    cfg.validate_site(z)
    c = cfg.cell_of(z.torus)
    lv, cl = step_cells(np.array([z.level]), np.array([c]), cfg, rng.random(1))
    return Site(int(lv[0]), cfg.torus_of(int(cl[0])))


def first_passage_prob(n: int, cfg: CylinderConfig) -> float:
    """P{walk started at level 0 first steps to level 1 and reaches level n
    before returning to level 0}.

    This only involves the level coordinate, a lazy biased walk; the
    gambler's ruin formula with ``psi(x) = ((1-p)/p)**x`` gives
    ``(p/d) (psi(0) - psi(-1)) / (psi(n-1) - psi(-1))``.
    """
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ValueError(f"n must be an integer >= 1, got {n!r}")
    n = int(n)
    r = cfg.ratio
    # psi(x) - psi(-1) with psi(-1) = 1/r; rewrite as a ratio of finite sums
    # to stay accurate for large n: (1 - r) / (1 - r**n)
    return cfg.forward * (1.0 - r) / (1.0 - r**n)


# -- random streams ------------------------------------------------------

def make_stream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent stream for a given spawn key.

    Splitting rule: the stream with key ``(i, j, ...)`` is
    ``PCG64(SeedSequence(master_seed, spawn_key=(i, j, ...)))``, which is the
    same stream ``SeedSequence(master_seed).spawn`` would hand out as child
    ``i`` (then grandchild ``j``, ...).  Work is always split into blocks
    with fixed keys, so serial and parallel runs draw identical numbers.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def spawn_streams(master_seed: int, n: int) -> list[np.random.Generator]:
    """``n`` independent streams, stream ``i`` equal to ``make_stream(seed, i)``."""
    return [make_stream(master_seed, i) for i in range(n)]


def load_cylinder_config(path: str | Path) -> tuple[CylinderConfig, int]:
    """Read the ``[cylinder]`` table (d, L, p, seed) of a TOML config file."""
    from .config import read_toml

    data = read_toml(path)
    return cylinder_from_mapping(data.get("cylinder", {}))


def cylinder_from_mapping(block: dict) -> tuple[CylinderConfig, int]:
    missing = [k for k in ("d", "L", "p") if k not in block]
    if missing:
        raise ConfigError(f"[cylinder] block is missing {', '.join(missing)}")
    cfg = CylinderConfig(block["d"], block["L"], block["p"])
    seed = block.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not (0 <= seed < 2**64):
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return cfg, int(seed)


def gambler_limit(cfg: CylinderConfig) -> float:
    """Limit of ``first_passage_prob(n)`` as ``n -> inf``: ``(2p-1)/d``."""
    return (2 * cfg.p - 1) / cfg.d


__all__ = [
    "CylinderConfig",
    "Site",
    "neighbors",
    "sample_step",
    "step_cells",
    "first_passage_prob",
    "gambler_limit",
    "make_stream",
    "spawn_streams",
    "load_cylinder_config",
    "cylinder_from_mapping",
]

