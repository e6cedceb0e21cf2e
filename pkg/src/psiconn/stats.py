"""Friedman and Wilcoxon signed-rank tests with Bonferroni correction.

Both tests use midranks for ties and the usual tie-corrected variances. Small
problems get exact permutation p-values; larger ones fall back to the
chi-square and normal approximations.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from itertools import combinations, permutations

import numpy as np
from scipy.special import erfc, gammaincc
from scipy.stats import rankdata

from .exceptions import DegenerateInputError

STAR_LEVELS = (0.05, 0.01, 0.001)
EXACT_FRIEDMAN_LIMIT = 10 ** 6
EXACT_WILCOXON_MAX_N = 12


@dataclass
class TestResult:
    test: str
    statistic: float
    p_value: float
    z_value: float | None = None
    adjusted_p: float | None = None
    method: str = "asymptotic"
    n: int = 0

    def to_dict(self):
        d = asdict(self)
        p = self.adjusted_p if self.adjusted_p is not None else self.p_value
        d["significant"] = {str(a): bool(p <= a) for a in STAR_LEVELS}
        d["stars"] = stars(p)
        return d


def stars(p):
    """``"*"``, ``"**"`` or ``"***"`` for p at or below 0.05, 0.01, 0.001."""
    return "*" * sum(p <= a for a in STAR_LEVELS)


def chi_square_sf(x, df):
    """Upper tail of the chi-square distribution."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if x < 0:
        raise ValueError("x must be >= 0")
    return float(gammaincc(df / 2.0, x / 2.0))


def normal_sf(z):
    """Upper tail of the standard normal distribution."""
    return float(0.5 * erfc(z / math.sqrt(2.0)))


def bonferroni(p_values):
    """``min(1, p * m)`` for each of the ``m`` p-values."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size and (np.any(p < 0) or np.any(p > 1) or not np.isfinite(p).all()):
        raise ValueError("p-values must lie in [0, 1]")
    return [float(v) for v in np.minimum(1.0, p * p.size)]


# --------------------------------------------------------------------------
# Friedman

def _check_samples(samples):
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected [n_blocks, k_treatments], got shape {X.shape}")
    n, k = X.shape
    if n < 2 or k < 2:
        raise ValueError("need at least two blocks and two treatments")
    if not np.isfinite(X).all():
        raise ValueError("samples contain non-finite values")
    return X


def _friedman_core(R):
    """Tie-corrected statistic from a matrix of within-block midranks."""
    n, k = R.shape
    col = R.sum(axis=0)
    ss = float(np.sum((col - n * (k + 1) / 2.0) ** 2))
    denom = float(np.sum(R ** 2)) - n * k * (k + 1) ** 2 / 4.0
    return ss, denom


def friedman_statistic(samples):
    R = rankdata(_check_samples(samples), axis=1)
    ss, denom = _friedman_core(R)
    if denom <= 0:
        raise DegenerateInputError("every block is tied; Friedman statistic undefined")
    return (R.shape[1] - 1) * ss / denom


def _friedman_exact_p(R, ss_obs):
    """P(SS >= observed) with each block's ranks permuted uniformly."""
    n, k = R.shape
    twice = np.rint(2 * R).astype(np.int64)
    dist = {(0,) * k: 1}
    total = 1
    for row in twice:
        perms = sorted(set(permutations(row.tolist())))
        nxt = defaultdict(int)
        for sums, c in dist.items():
            for p in perms:
                nxt[tuple(s + v for s, v in zip(sums, p))] += c
        dist = nxt
        total *= len(perms)
    centre = n * (k + 1)                   # doubled
    target = 4 * ss_obs
    hits = 0
    for sums, c in dist.items():
        ss2 = sum((s - centre) ** 2 for s in sums)
        if ss2 >= target - 1e-9 * max(1.0, target):
            hits += c
    return hits / total


def friedman(samples, method="auto"):
    """Friedman test for ``k`` related treatments over ``n`` blocks.

    Parameters
    ----------
    samples : array-like of shape (n_blocks, k_treatments)
    method : {"auto", "exact", "asymptotic"}
        ``"auto"`` is exact when ``(k!)**n <= 1e6``.

    Returns
    -------
    TestResult
    """
    if method not in ("auto", "exact", "asymptotic"):
        raise ValueError(f"unknown method {method!r}")
    X = _check_samples(samples)
    n, k = X.shape
    R = rankdata(X, axis=1)
    ss, denom = _friedman_core(R)
    if denom <= 0:
        raise DegenerateInputError("every block is tied; Friedman statistic undefined")
    stat = (k - 1) * ss / denom
    if method == "auto":
        method = "exact" if math.factorial(k) ** n <= EXACT_FRIEDMAN_LIMIT else "asymptotic"
    if method == "exact":
        p = _friedman_exact_p(R, ss)
    else:
        p = chi_square_sf(stat, k - 1)
    return TestResult("friedman", float(stat), float(min(1.0, p)), method=method, n=n)


# --------------------------------------------------------------------------
# Wilcoxon

def _signed_ranks(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("samples contain non-finite values")
    d = y - x
    d = d[d != 0]
    if d.size == 0:
        raise DegenerateInputError("all paired differences are zero")
    return d, rankdata(np.abs(d))


def _wilcoxon_exact_p(ranks, w_plus):
    """Two-sided P(|W+ - mean| >= |observed - mean|) over all sign patterns."""
    twice = np.rint(2 * ranks).astype(np.int64)
    counts = np.zeros(int(twice.sum()) + 1, dtype=np.float64)
    counts[0] = 1
    for r in twice:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r] if r else counts
        counts = counts + shifted
    counts /= counts.sum()
    centre = twice.sum() / 2.0
    dev = abs(2 * w_plus - centre)
    vals = np.abs(np.arange(counts.size) - centre)
    return float(counts[vals >= dev - 1e-9].sum())


def wilcoxon_signed_rank(x, y, method="auto"):
    """Wilcoxon signed-rank test of ``y - x``.

    The statistic is ``min(W+, W-)``. ``z_value`` is the tie-corrected normal
    score of ``W+`` (positive when ``y`` tends to exceed ``x``). The two-sided
    p-value is exact for at most 12 nonzero differences under ``"auto"``;
    otherwise it uses the normal tail with a 0.5 continuity correction.
    """
    if method not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown method {method!r}")
    d, r = _signed_ranks(x, y)
    n = d.size
    w_plus = float(r[d > 0].sum())
    w_minus = float(r[d < 0].sum())
    mean = n * (n + 1) / 4.0
    _, t = np.unique(r, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(t ** 3 - t)) / 48.0
    z = (w_plus - mean) / math.sqrt(var)
    if method == "auto":
        method = "exact" if n <= EXACT_WILCOXON_MAX_N else "approx"
    if method == "exact":
        p = _wilcoxon_exact_p(r, w_plus)
    else:
        # continuity-corrected tail
        p = 2.0 * normal_sf(max(0.0, abs(w_plus - mean) - 0.5) / math.sqrt(var))
    return TestResult("wilcoxon", min(w_plus, w_minus), float(min(1.0, p)),
                      z_value=float(z), method=method, n=n)


def posthoc(samples, labels=None, method="auto"):
    """Bonferroni-corrected Wilcoxon tests for every pair of treatments."""
    X = _check_samples(samples)
    k = X.shape[1]
    labels = list(labels) if labels is not None else [str(j) for j in range(k)]
    out = {}
    for a, b in combinations(range(k), 2):
        try:
            out[(labels[a], labels[b])] = wilcoxon_signed_rank(X[:, a], X[:, b], method)
        except DegenerateInputError:
            out[(labels[a], labels[b])] = TestResult("wilcoxon", 0.0, 1.0, 0.0,
                                                     method="degenerate", n=0)
    adj = bonferroni([res.p_value for res in out.values()])
    for res, p in zip(out.values(), adj):
        res.adjusted_p = p
    return out
