"""Friedman test and Nemenyi critical differences over result tables.

Given an N-blocks x K-treatments score table, the Friedman statistic is
computed from per-block average ranks (rank 1 = largest score, ties get
midranks) as chi2_r = [12N / (K(K+1))] * sum_j (Rbar_j - (K+1)/2)^2 and
referred to the chi-square upper tail with K-1 degrees of freedom.  The
Nemenyi critical difference CD = q_alpha(K) * sqrt(K(K+1) / (6N)) uses
the embedded studentized-range-based table for K = 2..10.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


@dataclass
class ResultTable:
    """Pivoted scores: one row per block, one column per treatment."""

    blocks: list[tuple]
    treatments: list[str]
    scores: np.ndarray

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        n, k = self.scores.shape if self.scores.ndim == 2 else (0, 0)
        if n != len(self.blocks) or k != len(self.treatments):
            raise ValueError(
                f"scores shape {self.scores.shape} does not match "
                f"{len(self.blocks)} blocks x {len(self.treatments)} treatments")
        if n < 2 or k < 2:
            raise ValueError(f"need at least 2 blocks and 2 treatments, got {n}x{k}")
        if not np.isfinite(self.scores).all():
            raise ValueError("scores contain non-finite entries")


@dataclass
class TestReport:
    chi2_r: float
    p_value: float
    mean_ranks: dict[str, float]
    cd: float
    alpha: float
    n_blocks: int
    significant: dict[tuple[str, str], bool] = field(default_factory=dict)


# Two-tailed Nemenyi critical values q_alpha(k) for k = 2..10
# (studentized range / sqrt(2); the standard benchmark-comparison table).
_Q_TABLE = {
    0.05: (1.959964, 2.343701, 2.569032, 2.727774, 2.849705,
           2.948320, 3.030879, 3.101730, 3.163684),
    0.10: (1.644854, 2.052293, 2.291341, 2.459516, 2.588521,
           2.692732, 2.779884, 2.854606, 2.920063),
}


def rank_blocks(scores: np.ndarray) -> np.ndarray:
    """Per-row average ranks with 1 = largest score (midranks on ties)."""
    return np.vstack([rankdata(-row, method="average") for row in scores])


def friedman(table: ResultTable) -> tuple[float, float, np.ndarray]:
    """Friedman test over the table; returns (chi2_r, p_value, mean_ranks).

    Ties within a block receive average ranks.  The statistic is the
    plain midrank form above; its chi-square reference has K-1 degrees
    of freedom.
    """
    scores = table.scores
    n, k = scores.shape
    ranks = rank_blocks(scores)
    rbar = ranks.mean(axis=0)
    chi2 = 12.0 * n / (k * (k + 1)) * float(((rbar - (k + 1) / 2.0) ** 2).sum())
    p = chi2_sf(chi2, k - 1)
    return chi2, p, rbar


def nemenyi_cd(k: int, n: int, alpha: float = 0.05) -> float:
    """Critical mean-rank difference for pairwise post-hoc comparison."""
    key = round(float(alpha), 2)
    if key not in _Q_TABLE:
        raise ValueError(f"alpha must be 0.05 or 0.10, got {alpha}")
    if not 2 <= k <= 10:
        raise ValueError(f"k must be in 2..10, got {k}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    q = _Q_TABLE[key][k - 2]
    return q * math.sqrt(k * (k + 1) / (6.0 * n))


def chi2_sf(x: float, df: int) -> float:
    """Chi-square upper-tail probability via the regularized upper
    incomplete gamma function Q(df/2, x/2); absolute error below 1e-8."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    return _upper_gamma_reg(df / 2.0, x / 2.0)


def _upper_gamma_reg(a: float, x: float) -> float:
    """Q(a, x) = Gamma(a, x) / Gamma(a) by series (x < a+1) or
    Lentz continued fraction (x >= a+1)."""
    if x <= 0.0:
        return 1.0
    log_prefix = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1.0:
        # P(a, x) series: x^a e^-x / Gamma(a) * sum x^n / (a(a+1)...(a+n))
        ap = a
        term = 1.0 / a
        s = term
        for _ in range(1000):
            ap += 1.0
            term *= x / ap
            s += term
            if abs(term) < abs(s) * 1e-17:
                break
        return 1.0 - math.exp(log_prefix) * s
    # modified Lentz for the continued fraction of Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b if b != 0 else 1.0 / tiny
    h = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-17:
            break
    return math.exp(log_prefix) * h


def analyze(table: ResultTable, alpha: float = 0.05) -> TestReport:
    """Friedman + Nemenyi in one report, with pairwise significance flags."""
    chi2, p, rbar = friedman(table)
    n, k = table.scores.shape
    cd = nemenyi_cd(k, n, alpha)
    ranks = {t: float(r) for t, r in zip(table.treatments, rbar)}
    sig = {}
    for i, ti in enumerate(table.treatments):
        for j in range(i + 1, k):
            tj = table.treatments[j]
            sig[(ti, tj)] = bool(abs(rbar[i] - rbar[j]) > cd)
    return TestReport(chi2, p, ranks, cd, alpha, n, sig)
