"""Agreement, ICC and rank-test statistics against independent oracles."""

import itertools

import numpy as np
import pytest
from scipy import stats

from bagwise.bagcore import BagwiseError, ExtentInterval
from bagwise.evalstats import (
    NEMENYI_Q,
    RatingTable,
    bootstrap_ci,
    extent_to_interval,
    friedman_test,
    icc_two_way_agreement,
    nemenyi_test,
    overall_agreement,
    prevalence,
    rank_errors,
    specific_agreement,
    stability_report,
)

# ---------------------------------------------------------------------------
# oracles


def pairs_agreement_oracle(cases, label=None):
    """Agreement as the fraction of concordant ordered rating pairs.

    With label given: of all ordered pairs containing at least one rating of
    that label, the fraction whose partner matches (the definition behind
    the specific-agreement formula, evaluated pair by pair).
    """
    num = den = 0
    for case in cases:
        for i, a in enumerate(case):
            for j, b in enumerate(case):
                if i == j:
                    continue
                if label is None:
                    den += 1
                    num += a == b
                elif a == label:
                    den += 1
                    num += b == label
    if den == 0:
        raise ZeroDivisionError
    return num / den


def icc_anova_oracle(R):
    """ICC(A,1) via explicitly fitted two-way ANOVA effects."""
    R = np.asarray(R, dtype=float)
    n, k = R.shape
    grand = R.mean()
    rows = R.mean(axis=1) - grand
    cols = R.mean(axis=0) - grand
    resid = R - grand - rows[:, None] - cols[None, :]
    msr = k * (rows @ rows) / (n - 1)
    msc = n * (cols @ cols) / (k - 1)
    mse = (resid ** 2).sum() / ((n - 1) * (k - 1))
    return (msr - mse) / (msr + (k - 1) * mse + k * (msc - mse) / n)


def friedman_permutation_pvalue(errors, n_shuffles=10_000, seed=0):
    """Permutation oracle: reshuffle each sample's errors across classifiers."""
    E = np.asarray(errors, dtype=float)
    stat_obs, _ = friedman_test(rank_errors(E))
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_shuffles):
        perm = np.stack([rng.permutation(row) for row in E])
        stat, _ = friedman_test(rank_errors(perm))
        hits += stat >= stat_obs - 1e-12
    return hits / n_shuffles


def random_table(rng, n_cases, n_raters, n_labels):
    return RatingTable(tuple(
        tuple(int(rng.integers(n_labels)) for _ in range(n_raters))
        for _ in range(n_cases)))


# ---------------------------------------------------------------------------


class TestAgreement:
    def test_two_rater_overall_equals_accuracy(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            table = random_table(rng, int(rng.integers(2, 30)), 2, 3)
            acc = np.mean([case[0] == case[1] for case in table.cases])
            assert overall_agreement(table) == pytest.approx(acc, abs=1e-12)

    def test_two_rater_specific_equals_jaccard(self):
        # for two raters and a binary label, specific agreement on label c is
        # 2a / (2a + b + c): the Jaccard-style positive agreement
        rng = np.random.default_rng(1)
        checked = 0
        for _ in range(200):
            table = random_table(rng, int(rng.integers(2, 30)), 2, 2)
            both = sum(case == (1, 1) for case in table.cases)
            one = sum(sum(case) == 1 for case in table.cases)
            if both + one == 0:
                continue
            expected = 2 * both / (2 * both + one)
            assert specific_agreement(table, 1) == pytest.approx(expected, abs=1e-12)
            checked += 1
        assert checked > 150

    def test_matches_pairwise_oracle_multirater(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            table = random_table(rng, int(rng.integers(2, 15)), 3, 3)
            assert overall_agreement(table) == pytest.approx(
                pairs_agreement_oracle(table.cases), abs=1e-12)
            for label in table.labels:
                try:
                    expected = pairs_agreement_oracle(table.cases, label)
                except ZeroDivisionError:
                    continue
                assert specific_agreement(table, label) == pytest.approx(
                    expected, abs=1e-12)

    def test_three_rater_partial_agreement_hand_case(self):
        # one case rated (A, A, B): 6 ordered pairs, 2 agree -> 1/3 overall;
        # specific on A: 4 ordered pairs with first = A, 2 match -> 1/2
        table = RatingTable((("A", "A", "B"),))
        assert overall_agreement(table) == pytest.approx(1 / 3)
        assert specific_agreement(table, "A") == pytest.approx(1 / 2)
        assert specific_agreement(table, "B") == pytest.approx(0.0)

    def test_prevalence(self):
        table = RatingTable((("A", "B"), ("A", "A")))
        assert prevalence(table, "A") == pytest.approx(0.75)
        assert prevalence(table, "B") == pytest.approx(0.25)

    def test_undefined_specific_agreement_raises(self):
        table = RatingTable((("A", "A"),))
        with pytest.raises(BagwiseError):
            specific_agreement(table, "Z")

    def test_bootstrap_ci_brackets_point_estimate(self):
        rng = np.random.default_rng(3)
        table = random_table(rng, 40, 2, 2)
        lo, hi = bootstrap_ci(overall_agreement, table, n_boot=500, seed=4)
        point = overall_agreement(table)
        assert lo <= point <= hi
        assert bootstrap_ci(overall_agreement, table, 500, seed=4) == (lo, hi)


class TestIcc:
    def test_matches_anova_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(3, 20))
            k = int(rng.integers(2, 6))
            R = rng.standard_normal((n, k)) * rng.uniform(0.5, 3.0)
            got = icc_two_way_agreement(R).icc
            assert got == pytest.approx(icc_anova_oracle(R), abs=1e-10)

    def test_identical_ratings_give_one(self):
        col = np.arange(6, dtype=float)
        R = np.stack([col, col], axis=1)
        assert icc_two_way_agreement(R).icc == pytest.approx(1.0)

    def test_constant_offset_below_one(self):
        col = np.arange(6, dtype=float)
        R = np.stack([col, col + 1.0], axis=1)
        assert icc_two_way_agreement(R).icc < 1.0

    def test_shape_validation(self):
        with pytest.raises(BagwiseError):
            icc_two_way_agreement(np.zeros((1, 2)))
        with pytest.raises(BagwiseError):
            icc_two_way_agreement(np.zeros(5))


class TestFriedmanNemenyi:
    def test_statistic_matches_closed_formula(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            n = int(rng.integers(2, 25))
            K = int(rng.integers(2, 8))
            ranks = np.stack([rng.permutation(K) + 1.0 for _ in range(n)])
            stat, _ = friedman_test(ranks)
            mean_r = ranks.mean(axis=0)
            expected = (12.0 * n / (K * (K + 1))
                        * (np.sum(mean_r ** 2) - K * (K + 1) ** 2 / 4.0))
            assert stat == pytest.approx(expected, abs=1e-10)

    def test_statistic_matches_scipy_without_ties(self):
        rng = np.random.default_rng(7)
        E = rng.standard_normal((15, 4))
        stat, p = friedman_test(rank_errors(E))
        ref = stats.friedmanchisquare(*E.T)
        assert stat == pytest.approx(ref.statistic, abs=1e-10)
        assert p == pytest.approx(ref.pvalue, abs=1e-12)

    @pytest.mark.parametrize("n,K,shift", [(12, 3, 1.2), (12, 4, 0.8), (10, 5, 0.7)])
    def test_pvalue_near_permutation_oracle(self, n, K, shift):
        # the chi-square approximation is only accurate in the rejection
        # regime at these sample sizes; near the null it is conservative by
        # far more than 0.02, so the comparison targets detectable effects
        rng = np.random.default_rng(hash((n, K)) % 2 ** 31)
        E = rng.standard_normal((n, K)) + shift * np.arange(K)
        _, p = friedman_test(rank_errors(E))
        p_perm = friedman_permutation_pvalue(E, n_shuffles=10_000, seed=11)
        assert abs(p - p_perm) < 0.02

    def test_always_first_classifier_rejects(self):
        # one classifier of K=3 always ranks first over n=20 samples
        rng = np.random.default_rng(12)
        E = np.column_stack([rng.uniform(0.0, 0.1, 20),
                             rng.uniform(0.2, 1.0, 20),
                             rng.uniform(0.2, 1.0, 20)])
        _, p = friedman_test(rank_errors(E))
        assert p < 0.001
        assert friedman_permutation_pvalue(E, 10_000, seed=13) < 0.001

    def test_critical_difference_hand_value(self):
        # K = 9 classifiers over n = 600 samples at alpha = 0.05
        rng = np.random.default_rng(8)
        ranks = np.stack([rng.permutation(9) + 1.0 for _ in range(600)])
        result = nemenyi_test(ranks, alpha=0.05)
        expected = 3.102 * np.sqrt(9 * 10 / (6.0 * 600))
        assert result.critical_difference == pytest.approx(expected, abs=1e-9)

    def test_q_table_matches_studentized_range(self):
        # embedded critical values = q_{alpha,K,inf-df} / sqrt(2), 3 decimals
        for alpha, row in NEMENYI_Q.items():
            for K in (2, 5, 9, 15, 20):
                ref = stats.studentized_range.ppf(1 - alpha, K, 1e7) / np.sqrt(2)
                assert row[K] == pytest.approx(ref, abs=2e-3)

    def test_significance_matrix_and_groups(self):
        # classifiers 0 and 1 swap first place; classifier 2 is always last
        ranks = np.vstack([np.tile([1.0, 2.0, 3.0], (100, 1)),
                           np.tile([2.0, 1.0, 3.0], (100, 1))])
        res = nemenyi_test(ranks)
        assert res.significant[0, 2] and res.significant[2, 0]
        assert not res.significant[0, 1]
        assert not res.significant.diagonal().any()
        assert (0, 1) in res.groups and (2,) in res.groups

    def test_groups_are_maximal_runs(self):
        ranks = np.tile([1.0, 1.3, 2.6, 2.9], (100, 1))
        res = nemenyi_test(ranks)
        for g in res.groups:
            assert list(g) == sorted(g)
        flat = [i for g in res.groups for i in g]
        assert set(flat) == {0, 1, 2, 3}

    def test_rejects_unknown_alpha_and_large_k(self):
        ranks = np.tile(np.arange(3, dtype=float) + 1, (5, 1))
        with pytest.raises(BagwiseError):
            nemenyi_test(ranks, alpha=0.2)
        ranks = np.tile(np.arange(25, dtype=float) + 1, (5, 1))
        with pytest.raises(BagwiseError):
            nemenyi_test(ranks)

    def test_rank_errors_average_ties(self):
        r = rank_errors([[0.1, 0.1, 0.5]])
        assert r.tolist() == [[1.5, 1.5, 3.0]]


class TestStability:
    def test_report_structure_and_values(self):
        reps = [
            {"a": ExtentInterval.P0, "b": ExtentInterval.P1_5},
            {"a": ExtentInterval.P0, "b": ExtentInterval.P6_25},
        ]
        inst = [{"x": 1, "y": 0}, {"x": 1, "y": 1}]
        rep = stability_report(reps, inst)
        assert rep["overall"] == pytest.approx(0.5)
        assert rep["per_interval"]["0"] == pytest.approx(1.0)
        assert rep["per_interval"]["1-5"] == pytest.approx(0.0)
        assert rep["per_interval"]["26-50"] is None
        assert rep["E"] == pytest.approx(2 / 3)
        assert rep["NE"] == pytest.approx(0.0)

    def test_mismatched_keys_rejected(self):
        with pytest.raises(BagwiseError):
            stability_report([{"a": ExtentInterval.P0}, {"b": ExtentInterval.P0}])

    def test_extent_to_interval(self):
        assert extent_to_interval(0.0) is ExtentInterval.P0
        assert extent_to_interval(0.3) is ExtentInterval.P26_50
