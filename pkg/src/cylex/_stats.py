"""Small statistics helpers: line fits, jackknife, batch means, binomial bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def fsum_mean(x) -> float:
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        return float("nan")
    return math.fsum(x.tolist()) / x.size


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r2: float
    slope_se: float

    def predict(self, x):
        return self.intercept + self.slope * np.asarray(x, dtype=float)


def fit_line(x, y, w=None) -> LineFit:
    """(Weighted) least-squares line with R^2 and the slope standard error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points to fit a line")
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    W = w.sum()
    xm = (w * x).sum() / W
    ym = (w * y).sum() / W
    sxx = (w * (x - xm) ** 2).sum()
    if sxx == 0:
        raise ValueError("x values are all equal")
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    icpt = ym - slope * xm
    resid = y - (icpt + slope * x)
    sst = (w * (y - ym) ** 2).sum()
    sse = (w * resid**2).sum()
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    dof = max(x.size - 2, 1)
    se = math.sqrt(sse / dof / sxx) if x.size > 2 else float("nan")
    return LineFit(float(slope), float(icpt), float(r2), se)


def jackknife(groups_values, estimator) -> tuple[float, float]:
    """Delete-one-group jackknife.

    ``groups_values`` is a list of per-group data (anything ``estimator``
    accepts as a list); returns ``(full estimate, standard error)``.
    """
    g = len(groups_values)
    full = estimator(groups_values)
    if g < 2:
        return full, float("nan")
    loo = np.array([estimator(groups_values[:i] + groups_values[i + 1:]) for i in range(g)])
    m = loo.mean()
    se = math.sqrt((g - 1) / g * ((loo - m) ** 2).sum())
    return full, se


def batch_means(series, n_batches: int = 10) -> tuple[float, float]:
    """Mean and batch-means standard error of a correlated series."""
    s = np.asarray(series, dtype=float)
    n = s.size
    if n == 0:
        return float("nan"), float("nan")
    nb = min(n_batches, n)
    size = n // nb
    s = s[: size * nb]
    means = s.reshape(nb, size).mean(axis=1)
    mean = fsum_mean(s)
    if nb < 2:
        return mean, float("nan")
    return mean, float(means.std(ddof=1) / math.sqrt(nb))


def binom_upper(k: int, n: int, z: float = 3.0) -> float:
    """Wilson upper bound for a binomial proportion."""
    if n <= 0:
        return 1.0
    ph = k / n
    den = 1 + z * z / n
    centre = ph + z * z / (2 * n)
    half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n))
    return min(1.0, (centre + half) / den)


def binom_se(k: int, n: int) -> float:
    if n <= 0:
        return float("nan")
    ph = k / n
    return math.sqrt(max(ph * (1 - ph), 0.0) / n)
