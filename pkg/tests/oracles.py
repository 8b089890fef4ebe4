"""Independent reference computations used by the tests.

Nothing here calls the level recursion of ``cylex.harmonic``: everything
is a plain linear solve, time-stepped mass propagation or a breadth-first
search written from the walk's definition.
"""
from __future__ import annotations

import itertools
from collections import deque

import numpy as np


def walk_moves(cfg, level, cell):
    """Unmerged one-step moves of the walk: two level moves, 2(d-1) lateral."""
    out = [(level + 1, cell, cfg.p / cfg.d), (level - 1, cell, (1 - cfg.p) / cfg.d)]
    coords = list(cfg.torus_of(cell))
    for axis in range(cfg.d - 1):
        for sgn in (1, -1):
            t = list(coords)
            t[axis] = (t[axis] + sgn) % cfg.L
            out.append((level, cfg.cell_of(t), 1.0 / (2 * cfg.d)))
    return out


def first_passage_linear(n, cfg):
    """P{first step to level 1, then level n before level 0} from a dense
    absorbing-chain solve over all sites of levels 1..n-1."""
    C = cfg.n_cells
    if n == 1:
        return cfg.p / cfg.d
    idx = {(l, c): i for i, (l, c) in enumerate(itertools.product(range(1, n), range(C)))}
    A = np.eye(len(idx))
    rhs = np.zeros(len(idx))
    for (l, c), i in idx.items():
        for nl, nc, q in walk_moves(cfg, l, c):
            if nl == n:
                rhs[i] += q
            elif nl == 0:
                pass
            else:
                A[i, idx[(nl, nc)]] -= q
    x = np.linalg.solve(A, rhs)
    return cfg.p / cfg.d * x[idx[(1, 0)]]


def propagate_survival(cfg, free, start_level_idx, start, target_idx, steps=40):
    """Time-stepped mass propagation on a slab.

    ``free[j, c]`` marks available sites (index 0 = slab bottom); the walk
    dies on blocked sites and below the bottom.  Mass starts at
    ``start_level_idx`` with weights ``start``; returns ``(absorbed mass at
    target level, mass still alive after `steps`)``.
    """
    nlev, C = free.shape
    P = np.zeros((nlev, C))
    P[start_level_idx] = start
    hit = 0.0
    for _ in range(steps):
        Q = np.zeros_like(P)
        for j in range(nlev):
            for c in range(C):
                m = P[j, c]
                if m == 0.0:
                    continue
                for nl, nc, q in walk_moves(cfg, j, c):
                    if nl < 0 or nl >= nlev or not free[nl, nc]:
                        continue
                    if nl == target_idx:
                        hit += m * q
                    else:
                        Q[nl, nc] += m * q
        P = Q
    return hit, float(P.sum())


def bfs_components(cfg, free, vertical=True):
    """Label connected components of free sites with a breadth-first search."""
    nlev, C = free.shape
    lab = -np.ones((nlev, C), dtype=int)
    nxt = 0
    for j in range(nlev):
        for c in range(C):
            if not free[j, c] or lab[j, c] >= 0:
                continue
            dq = deque([(j, c)])
            lab[j, c] = nxt
            while dq:
                a, b = dq.popleft()
                nb = [(a, t) for (_, t, _) in walk_moves(cfg, a, b)[2:]]
                if vertical:
                    nb += [(a + 1, b), (a - 1, b)]
                for x, y in nb:
                    if 0 <= x < nlev and free[x, y] and lab[x, y] < 0:
                        lab[x, y] = nxt
                        dq.append((x, y))
            nxt += 1
    return lab
