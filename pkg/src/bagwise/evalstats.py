"""Agreement, prevalence, ICC, Friedman/Nemenyi ranking and label stability."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .bagcore import BagwiseError, ExtentInterval


@dataclass(frozen=True)
class RatingTable:
    """Categorical ratings per case: cases[k] is the multiset of labels for case k."""

    cases: tuple[tuple, ...]

    def __post_init__(self):
        object.__setattr__(self, "cases",
                           tuple(tuple(case) for case in self.cases))

    @property
    def labels(self) -> tuple:
        seen = []
        for case in self.cases:
            for label in case:
                if label not in seen:
                    seen.append(label)
        return tuple(seen)

    def count(self, case_idx: int, label) -> int:
        return sum(1 for l in self.cases[case_idx] if l == label)


def specific_agreement(table: RatingTable, c) -> float:
    """Chance-uncorrected agreement on one label over all cases.

    sum_k n_ck (n_ck - 1) / sum_k n_ck (n_k - 1). Undefined (raises) when no
    case carries a rating of c.
    """
    num = den = 0
    for k, case in enumerate(table.cases):
        n_k = len(case)
        n_ck = table.count(k, c)
        num += n_ck * (n_ck - 1)
        den += n_ck * (n_k - 1)
    if den == 0:
        raise BagwiseError(f"specific agreement undefined: no ratings of {c!r}")
    return num / den


def overall_agreement(table: RatingTable) -> float:
    """Agreement across all labels: sum_ck n_ck(n_ck-1) / sum_k n_k(n_k-1)."""
    num = den = 0
    for k, case in enumerate(table.cases):
        n_k = len(case)
        if n_k < 2:
            raise BagwiseError(f"case {k} has fewer than 2 ratings")
        den += n_k * (n_k - 1)
        for label in set(case):
            n_ck = table.count(k, label)
            num += n_ck * (n_ck - 1)
    return num / den


def prevalence(table: RatingTable, c) -> float:
    """Proportion of all ratings that assign label c."""
    total = sum(len(case) for case in table.cases)
    if total == 0:
        raise BagwiseError("prevalence: empty rating table")
    hits = sum(table.count(k, c) for k in range(len(table.cases)))
    return hits / total


def bootstrap_ci(statistic, table: RatingTable, n_boot: int, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile confidence interval over case-resampled replicates."""
    if n_boot < 100:
        raise BagwiseError("bootstrap_ci: n_boot must be >= 100")
    rng = np.random.default_rng(seed)
    n = len(table.cases)
    values = []
    skipped = 0
    for _ in range(n_boot):
        idx = rng.integers(0, n, size=n)
        replicate = RatingTable(tuple(table.cases[i] for i in idx))
        try:
            values.append(statistic(replicate))
        except BagwiseError:
            skipped += 1
    if skipped > 0.1 * n_boot:
        warnings.warn(f"bootstrap_ci: statistic undefined on {skipped}/{n_boot} replicates")
    if not values:
        raise BagwiseError("bootstrap_ci: statistic undefined on every replicate")
    lo = (1.0 - level) / 2.0
    return (float(np.quantile(values, lo)), float(np.quantile(values, 1.0 - lo)))


@dataclass(frozen=True)
class IccResult:
    icc: float
    model: str = "two-way, absolute agreement, single rater"


def icc_two_way_agreement(ratings) -> IccResult:
    """ICC(A,1) from two-way ANOVA mean squares.

    ratings is a cases x raters matrix with no missing cells:
    (MSR - MSE) / (MSR + (k-1) MSE + (k/n)(MSC - MSE)).
    """
    R = np.asarray(ratings, dtype=float)
    if R.ndim != 2 or R.shape[0] < 2 or R.shape[1] < 2:
        raise BagwiseError("icc needs at least 2 cases and 2 raters")
    n, k = R.shape
    grand = R.mean()
    row_means = R.mean(axis=1)
    col_means = R.mean(axis=0)
    ss_rows = k * np.sum((row_means - grand) ** 2)
    ss_cols = n * np.sum((col_means - grand) ** 2)
    ss_total = np.sum((R - grand) ** 2)
    ss_err = ss_total - ss_rows - ss_cols
    msr = ss_rows / (n - 1)
    msc = ss_cols / (k - 1)
    mse = ss_err / ((n - 1) * (k - 1))
    den = msr + (k - 1) * mse + (k / n) * (msc - mse)
    if den == 0:
        if np.all(R == R[:, [0]]):
            return IccResult(1.0)
        raise BagwiseError("ICC undefined: zero total variance")
    return IccResult(float((msr - mse) / den))


def rank_errors(abs_errors) -> np.ndarray:
    """Per-sample ranks of classifier errors; 1 = smallest; ties get average ranks."""
    E = np.asarray(abs_errors, dtype=float)
    if not np.all(np.isfinite(E)):
        raise BagwiseError("rank_errors: non-finite entries")
    return np.apply_along_axis(stats.rankdata, 1, E)


def friedman_test(ranks) -> tuple[float, float]:
    """Chi-square Friedman statistic and p-value from an n x K rank matrix."""
    R = np.asarray(ranks, dtype=float)
    n, K = R.shape
    if n < 2 or K < 2:
        raise BagwiseError("friedman_test: need n >= 2 samples and K >= 2 classifiers")
    mean_ranks = R.mean(axis=0)
    statistic = 12.0 * n / (K * (K + 1)) * (np.sum(mean_ranks ** 2) - K * (K + 1) ** 2 / 4.0)
    statistic = max(statistic, 0.0)
    p = float(stats.chi2.sf(statistic, K - 1))
    return float(statistic), p


# Critical values q_alpha for the Nemenyi test, K = 2..20 classifiers
# (studentized range at infinite df divided by sqrt(2), 3 decimals).
NEMENYI_Q = {
    0.05: {2: 1.960, 3: 2.343, 4: 2.569, 5: 2.728, 6: 2.850, 7: 2.948,
           8: 3.031, 9: 3.102, 10: 3.164, 11: 3.219, 12: 3.268, 13: 3.313,
           14: 3.354, 15: 3.391, 16: 3.426, 17: 3.458, 18: 3.489, 19: 3.517,
           20: 3.544},
    0.10: {2: 1.645, 3: 2.052, 4: 2.291, 5: 2.460, 6: 2.589, 7: 2.693,
           8: 2.780, 9: 2.855, 10: 2.920, 11: 2.978, 12: 3.030, 13: 3.077,
           14: 3.120, 15: 3.159, 16: 3.196, 17: 3.230, 18: 3.261, 19: 3.291,
           20: 3.319},
    0.01: {2: 2.576, 3: 2.913, 4: 3.113, 5: 3.255, 6: 3.364, 7: 3.452,
           8: 3.526, 9: 3.590, 10: 3.646, 11: 3.696, 12: 3.741, 13: 3.781,
           14: 3.818, 15: 3.853, 16: 3.884, 17: 3.914, 18: 3.941, 19: 3.967,
           20: 3.992},
}


@dataclass(frozen=True)
class RankTestResult:
    friedman_statistic: float
    p_value: float
    mean_ranks: np.ndarray
    significant: np.ndarray       # K x K boolean, symmetric, zero diagonal
    critical_difference: float
    groups: tuple[tuple[int, ...], ...]   # runs over the rank-sorted order

    def __post_init__(self):
        object.__setattr__(self, "mean_ranks", np.asarray(self.mean_ranks, dtype=float))
        object.__setattr__(self, "significant", np.asarray(self.significant, dtype=bool))


def nemenyi_test(ranks, alpha: float = 0.05) -> RankTestResult:
    """Pairwise rank comparison with the Nemenyi critical difference.

    Pair (i, j) differs significantly iff |mean_rank_i - mean_rank_j| > CD
    with CD = q_alpha * sqrt(K(K+1)/(6n)). groups lists the maximal runs of
    mutually non-significant classifiers over the rank-sorted order.
    """
    R = np.asarray(ranks, dtype=float)
    n, K = R.shape
    try:
        q_table = NEMENYI_Q[alpha]
    except KeyError:
        raise BagwiseError(f"no Nemenyi q-table for alpha={alpha}") from None
    if K not in q_table:
        raise BagwiseError(f"Nemenyi q-table covers 2..20 classifiers, got {K}")
    statistic, p = friedman_test(R)
    mean_ranks = R.mean(axis=0)
    cd = q_table[K] * np.sqrt(K * (K + 1) / (6.0 * n))
    diff = np.abs(mean_ranks[:, None] - mean_ranks[None, :])
    significant = diff > cd
    np.fill_diagonal(significant, False)

    order = np.argsort(mean_ranks, kind="stable")
    groups = []
    prev_end = -1
    for start in range(K):
        end = start
        while end + 1 < K and (mean_ranks[order[end + 1]]
                               - mean_ranks[order[start]]) <= cd:
            end += 1
        if end > prev_end:     # skip runs contained in an earlier one
            groups.append(tuple(int(order[i]) for i in range(start, end + 1)))
            prev_end = end
    return RankTestResult(statistic, p, mean_ranks, significant, float(cd),
                          tuple(groups))


def extent_to_interval(extent: float) -> ExtentInterval:
    """Map a predicted extent proportion to one of the six categories."""
    return ExtentInterval.from_extent(extent)


def stability_report(bag_intervals, instance_labels=None) -> dict:
    """Agreement between replications treated as raters.

    bag_intervals: per replication, dict bag_id -> ExtentInterval (all
    replications must cover the same bags). instance_labels: optional per
    replication dict instance_id -> {0,1}; reported as agreement on the
    positive (E) and negative (NE) binary label.
    """
    keysets = [set(d) for d in bag_intervals]
    if any(ks != keysets[0] for ks in keysets):
        raise BagwiseError("stability_report: replications cover different bags")
    bag_ids = sorted(keysets[0])
    table = RatingTable(tuple(tuple(rep[b] for rep in bag_intervals) for b in bag_ids))
    report = {"overall": overall_agreement(table), "per_interval": {}}
    for iv in ExtentInterval:
        try:
            report["per_interval"][iv.label] = specific_agreement(table, iv)
        except BagwiseError:
            report["per_interval"][iv.label] = None
    if instance_labels is not None:
        ikeys = [set(d) for d in instance_labels]
        if any(ks != ikeys[0] for ks in ikeys):
            raise BagwiseError("stability_report: replications cover different instances")
        ids = sorted(ikeys[0])
        itable = RatingTable(tuple(tuple(rep[i] for rep in instance_labels)
                                   for i in ids))
        for key, label in (("E", 1), ("NE", 0)):
            try:
                report[key] = specific_agreement(itable, label)
            except BagwiseError:
                report[key] = None
    return report
