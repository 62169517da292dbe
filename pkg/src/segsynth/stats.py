"""Rank-based significance tests: Wilcoxon signed-rank, Bonferroni, Friedman.

No external statistics dependency: the chi-square tail is evaluated through
the regularized upper incomplete gamma function (series / continued
fraction), and the exact Wilcoxon null distribution through subset-sum
counting over the ranks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TestResult",
    "wilcoxon_signed_rank",
    "bonferroni",
    "friedman",
    "chi2_sf",
]

_EXACT_LIMIT = 25


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n_effective: int
    method: str  # "exact", "normal_approx" or "chi_square"


def _normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _midranks(values: np.ndarray) -> np.ndarray:
    """Average ranks (1-based) with ties sharing their mean rank."""
    uniq, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts).astype(np.float64)
    starts = ends - counts + 1.0
    mid = (starts + ends) / 2.0
    return mid[inverse]


def wilcoxon_signed_rank(x, y) -> TestResult:
    """Two-sided paired Wilcoxon signed-rank test.

    Zero differences are dropped; |differences| are mid-ranked. The statistic
    is W = min(W+, W-). The null distribution is exact for n <= 25 without
    ties, otherwise a tie-corrected normal approximation with continuity
    correction is used. All differences zero degenerates to p = 1.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("paired samples must be 1-D arrays of equal length")
    if x.size == 0:
        raise ValueError("paired samples are empty")
    d = x - y
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return TestResult(statistic=0.0, p_value=1.0, n_effective=0, method="exact")

    abs_d = np.abs(d)
    ranks = _midranks(abs_d)
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    has_ties = np.unique(abs_d).size < n

    if n <= _EXACT_LIMIT and not has_ties:
        # Subset-sum counts of the integer ranks 1..n; float64 is exact here
        # since every count is below 2^53.
        max_sum = n * (n + 1) // 2
        counts = np.zeros(max_sum + 1, dtype=np.float64)
        counts[0] = 1.0
        for r in range(1, n + 1):
            counts[r:] += counts[:-r]
        cdf = counts[: int(round(w)) + 1].sum() / float(2**n)
        p = min(1.0, 2.0 * cdf)
        return TestResult(statistic=w, p_value=p, n_effective=n, method="exact")

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(abs_d, return_counts=True)
    tie_term = float(((tie_counts**3) - tie_counts).sum()) / 48.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    if var <= 0.0:
        return TestResult(statistic=w, p_value=1.0, n_effective=n, method="normal_approx")
    z = (w - mean + 0.5) / math.sqrt(var)
    p = min(1.0, 2.0 * _normal_cdf(z))
    return TestResult(statistic=w, p_value=p, n_effective=n, method="normal_approx")


def bonferroni(p_values, alpha: float = 0.05):
    """Adjusted p = min(1, m*p); significant iff adjusted p < alpha.

    Returns a list of (adjusted_p, significant) in input order.
    """
    p_values = [float(p) for p in p_values]
    m = len(p_values)
    out = []
    for p in p_values:
        adj = min(1.0, m * p)
        out.append((adj, adj < alpha))
    return out


def friedman(scores) -> TestResult:
    """Friedman chi-square test over an (n subjects x k treatments) table.

    Rows are mid-ranked; the tie-corrected statistic is referred to a
    chi-square distribution with k-1 degrees of freedom.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("scores must be a 2-D subjects x treatments array")
    n, k = scores.shape
    if n < 2 or k < 2:
        raise ValueError(f"need at least 2 subjects and 2 treatments, got {n}x{k}")
    if not np.isfinite(scores).all():
        raise ValueError("scores contain missing cells; drop incomplete subjects first")

    ranks = np.empty_like(scores)
    tie_sum = 0.0
    for i in range(n):
        ranks[i] = _midranks(scores[i])
        _, counts = np.unique(scores[i], return_counts=True)
        tie_sum += float(((counts**3) - counts).sum())

    rank_sums = ranks.sum(axis=0)
    chi2 = 12.0 / (n * k * (k + 1)) * float((rank_sums**2).sum()) - 3.0 * n * (k + 1)
    correction = 1.0 - tie_sum / (n * k * (k * k - 1))
    if correction <= 0.0:
        # Every row fully tied: no information, degenerate to p = 1.
        return TestResult(statistic=0.0, p_value=1.0, n_effective=n, method="chi_square")
    chi2 /= correction
    chi2 = max(chi2, 0.0)
    p = chi2_sf(chi2, k - 1)
    return TestResult(statistic=chi2, p_value=p, n_effective=n, method="chi_square")


def chi2_sf(x: float, df: int) -> float:
    """Chi-square survival function, P(X > x) with df degrees of freedom."""
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if x <= 0.0:
        return 1.0
    return _upper_gamma_regularized(df / 2.0, x / 2.0)


def _upper_gamma_regularized(a: float, x: float) -> float:
    # Q(a, x); series for the lower function when x < a+1, Lentz continued
    # fraction otherwise. Converges to ~1e-15 relative.
    if x < 0.0 or a <= 0.0:
        raise ValueError("invalid incomplete gamma arguments")
    if x == 0.0:
        return 1.0
    log_pre = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        denom = a
        for _ in range(1000):
            denom += 1.0
            term *= x / denom
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        p = total * math.exp(log_pre)
        return min(1.0, max(0.0, 1.0 - p))
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
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
        if abs(delta - 1.0) < 1e-16:
            break
    return min(1.0, max(0.0, math.exp(log_pre) * h))
