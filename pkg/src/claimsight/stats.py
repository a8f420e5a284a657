"""Evaluation statistics: AUC, confidence intervals, and paired tests.

The AUC confidence interval follows the distribution-independent
construction driven by error rate and class counts: conditioned on a fixed
number of misclassifications k over m positives and n negatives, the AUC of
a threshold classifier with x false negatives and k-x false positives is

    A(x) = 1 - (x*n + (k-x)*m - x*(k-x)) / (m*n)

and, with all k-error classifications equally likely, x follows the
hypergeometric law. The interval is centered on the observed AUC with the
model's standard deviation at the error count whose expected AUC matches
the observation (interpolated between integer error counts).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from scipy.stats import chi2, norm, t as t_dist


def auc(scores: list[tuple[float, int]]) -> float:
    """Probability that a random positive outranks a random negative, ties
    counted one half. Equals exhaustive pairwise counting exactly.
    """
    values = np.asarray([s for s, _ in scores], dtype=np.float64)
    labels = np.asarray([y for _, y in scores], dtype=np.int64)
    m = int((labels == 1).sum())
    n = int((labels == 0).sum())
    if m == 0 or n == 0:
        raise ValueError("AUC requires both classes present")
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < sorted_vals.size:
        j = i
        while j + 1 < sorted_vals.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        # average rank over the tie group; ranks are 1-based
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - m * (m + 1) / 2.0) / (m * n)


@dataclass(frozen=True)
class AucWithCi:
    auc: float
    ci_low: float
    ci_high: float
    m: int
    n: int
    level: float = 0.95

    def __post_init__(self):
        if not (self.ci_low <= self.auc <= self.ci_high):
            raise ValueError("interval must contain the point estimate")


def _auc_moments_given_errors(m: int, n: int, k: int) -> tuple[float, float]:
    """(E[A], Var[A]) over all classifications with exactly k errors."""
    if k == 0:
        return 1.0, 0.0
    x_lo = max(0, k - n)
    x_hi = min(k, m)
    x = np.arange(x_lo, x_hi + 1, dtype=np.float64)
    # hypergeometric pmf in log space for numerical range
    logp = (
        gammaln(m + 1)
        - gammaln(x + 1)
        - gammaln(m - x + 1)
        + gammaln(n + 1)
        - gammaln(k - x + 1)
        - gammaln(n - (k - x) + 1)
        - (gammaln(m + n + 1) - gammaln(k + 1) - gammaln(m + n - k + 1))
    )
    p = np.exp(logp - logp.max())
    p /= p.sum()
    a = 1.0 - (x * n + (k - x) * m - x * (k - x)) / (m * n)
    mean = float(p @ a)
    var = float(p @ (a - mean) ** 2)
    return mean, var


def _auc_sd_for_observed(auc_value: float, m: int, n: int) -> float:
    """Model standard deviation at the (real-valued) error count whose
    expected AUC equals the observed one."""
    k_max = m + n
    mean_lo, var_lo = _auc_moments_given_errors(m, n, 0)
    if auc_value >= mean_lo:
        return math.sqrt(var_lo)
    # bisection over integer error counts; E[A|k] decreases in k
    lo, hi = 0, k_max
    mean_hi, var_hi = _auc_moments_given_errors(m, n, k_max)
    if auc_value <= mean_hi:
        return math.sqrt(var_hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        mean_mid, _ = _auc_moments_given_errors(m, n, mid)
        if mean_mid >= auc_value:
            lo = mid
        else:
            hi = mid
    mean_a, var_a = _auc_moments_given_errors(m, n, lo)
    mean_b, var_b = _auc_moments_given_errors(m, n, hi)
    if mean_a == mean_b:
        return math.sqrt(var_a)
    frac = (mean_a - auc_value) / (mean_a - mean_b)
    return math.sqrt(var_a + frac * (var_b - var_a))


def auc_ci(auc_value: float, m: int, n: int, level: float = 0.95) -> AucWithCi:
    """Distribution-independent AUC confidence interval from error rate and
    class counts, clamped to [0, 1]."""
    if m < 1 or n < 1:
        raise ValueError(f"degenerate class counts m={m}, n={n}")
    if not (0.0 <= auc_value <= 1.0):
        raise ValueError(f"auc {auc_value} outside [0, 1]")
    sd = _auc_sd_for_observed(auc_value, m, n)
    z = float(norm.ppf(0.5 + level / 2.0))
    return AucWithCi(
        auc=float(auc_value),
        ci_low=float(max(0.0, auc_value - z * sd)),
        ci_high=float(min(1.0, auc_value + z * sd)),
        m=m,
        n=n,
        level=level,
    )


def wilson_interval(successes: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= successes <= n:
        raise ValueError(f"successes {successes} outside [0, {n}]")
    z = float(norm.ppf(0.5 + level / 2.0))
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    margin = (z / denom) * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n))
    # the interval is closed at the boundary when every/no trial succeeded
    low = 0.0 if successes == 0 else max(0.0, center - margin)
    high = 1.0 if successes == n else min(1.0, center + margin)
    return low, high


def mcnemar(b: int, c: int) -> tuple[float, float]:
    """McNemar chi-squared statistic and p-value from discordant counts."""
    if b < 0 or c < 0 or b + c < 1:
        raise ValueError("McNemar requires b + c >= 1")
    stat = (b - c) ** 2 / (b + c)
    p = float(chi2.sf(stat, df=1))
    return float(stat), p


def paired_t(diffs: list[float]) -> tuple[float, float]:
    """Two-sided paired t-test on a list of paired differences."""
    arr = np.asarray(diffs, dtype=np.float64)
    if arr.size < 2:
        raise ValueError("paired t-test needs at least 2 differences")
    sd = float(arr.std(ddof=1))
    if sd == 0.0:
        raise ValueError("paired t-test undefined for zero-variance differences")
    n = arr.size
    stat = float(arr.mean() / (sd / math.sqrt(n)))
    p = float(2.0 * t_dist.sf(abs(stat), df=n - 1))
    return stat, p


def accuracy_with_ci(correct: int, total: int, level: float = 0.95) -> tuple[float, float, float]:
    low, high = wilson_interval(correct, total, level)
    return correct / total, low, high


def macro_ovr_auc(probs: np.ndarray, labels: np.ndarray, classes: tuple[int, ...]) -> float:
    """Macro-averaged one-vs-rest AUC for a multiclass probability matrix."""
    aucs = []
    for k, cls in enumerate(classes):
        y = (labels == cls).astype(int)
        if y.all() or not y.any():
            continue
        aucs.append(auc(list(zip(probs[:, k].tolist(), y.tolist()))))
    if not aucs:
        raise ValueError("no class with both outcomes present")
    return float(np.mean(aucs))
