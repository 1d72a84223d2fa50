"""Two-sided Mann-Whitney U test and Holm-Bonferroni step-down correction.

The U statistic always comes from midrank sums. The p-value is exact (full
enumeration of rank assignments) for small tie-free samples, otherwise the
normal approximation with tie and continuity corrections is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, groupby

import numpy as np

EXACT_LIMIT = 16  # enumerate C(n, n_a) rank subsets up to n_a + n_b of 16


@dataclass
class MannWhitneyResult:
    u: float          # U statistic of the first sample
    p_value: float    # two-sided
    exact: bool


@dataclass
class ComparisonReport:
    method_a: str
    method_b: str
    n_a: int
    n_b: int
    u: float
    p_value: float
    exact: bool
    p_adjusted: float = 1.0
    reject: bool = False


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    pos = 1
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_rank = (pos + pos + (j - i)) / 2.0
        for idx in order[i:j + 1]:
            ranks[idx] = mean_rank
        pos += j - i + 1
        i = j + 1
    return ranks


def mann_whitney_u(a, b) -> MannWhitneyResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    n_a, n_b = a.size, b.size
    combined = np.concatenate([a, b])
    ranks = _midranks(combined)
    r_a = ranks[:n_a].sum()
    u_a = r_a - n_a * (n_a + 1) / 2.0
    has_ties = len(np.unique(combined)) < combined.size
    if n_a + n_b <= EXACT_LIMIT and not has_ties:
        return MannWhitneyResult(u_a, _exact_p(u_a, n_a, n_b), exact=True)
    return MannWhitneyResult(u_a, _normal_p(u_a, n_a, n_b, combined), exact=False)


def _exact_p(u_obs, n_a, n_b):
    """Two-sided p by enumerating every assignment of ranks to the first
    sample; counts outcomes at least as extreme on either tail."""
    base = n_a * (n_a + 1) // 2
    u_values = [sum(c) - base for c in combinations(range(1, n_a + n_b + 1), n_a)]
    total = len(u_values)
    lo = min(u_obs, n_a * n_b - u_obs)
    hi = n_a * n_b - lo
    if lo == hi:
        return 1.0
    count = sum(1 for u in u_values if u <= lo or u >= hi)
    return min(1.0, count / total)


def _normal_p(u_a, n_a, n_b, combined):
    """Normal approximation with midrank tie correction and a 0.5 continuity
    correction toward the mean."""
    n = n_a + n_b
    arr = np.sort(combined)
    tie_term = sum(
        (lambda t: t ** 3 - t)(len(list(g))) for _, g in groupby(arr))
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0.0:
        return 1.0  # every value tied
    mean = n_a * n_b / 2.0
    d = u_a - mean
    if d > 0:
        d -= 0.5
    elif d < 0:
        d += 0.5
    z = d / math.sqrt(var)
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


@dataclass
class HolmResult:
    reject: list[bool]        # in input order
    p_adjusted: list[float]   # in input order


def holm_bonferroni(p_values, alpha: float) -> HolmResult:
    """Step-down Holm procedure: walk the sorted p-values, rejecting while
    p_(i) <= alpha / (m - i + 1), stopping at the first failure. Adjusted
    p-values are the running maximum of min(1, (m - i + 1) * p_(i))."""
    p = list(p_values)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    for v in p:
        if not 0.0 < v <= 1.0:
            raise ValueError(f"p-values must be in (0, 1], got {v}")
    m = len(p)
    order = np.argsort(p, kind="stable")
    reject = [False] * m
    adjusted = [1.0] * m
    running_adj = 0.0
    rejecting = True
    for i, idx in enumerate(order):
        scale = m - i
        running_adj = max(running_adj, min(1.0, scale * p[idx]))
        adjusted[idx] = running_adj
        if rejecting and p[idx] <= alpha / scale:
            reject[idx] = True
        else:
            rejecting = False
    return HolmResult(reject=reject, p_adjusted=adjusted)
