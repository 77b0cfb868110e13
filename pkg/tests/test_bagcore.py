"""Core bag operators, interval mapping and CSV round trips."""

import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bagwise.bagcore import (
    Bag,
    BagDataset,
    BagwiseError,
    ExtentInterval,
    Instance,
    RaterAssessment,
    attach_labels,
    binarize_extent,
    combine_raters,
    interval_midpoint,
    load_bags_csv,
    load_labels_csv,
    load_rater_assessments_csv,
    save_bags_csv,
    save_extent_labels_csv,
    save_rater_labels_csv,
    split_dataset,
    theta_max,
    theta_mean,
    threshold_instances,
)


def make_bag(bag_id, X, **kw):
    insts = tuple(Instance(f"{bag_id}:i{j}", X[j]) for j in range(len(X)))
    return Bag(bag_id, insts, **kw)


def make_dataset(n_bags=5, n_inst=4, d=3, seed=0):
    rng = np.random.default_rng(seed)
    bags = tuple(make_bag(f"b{i}", rng.standard_normal((n_inst, d)))
                 for i in range(n_bags))
    return BagDataset(bags, d)


class TestOperators:
    def test_exhaustive_vs_bruteforce(self):
        # all binary vectors of length 1..10
        for n in range(1, 11):
            for bits in itertools.product((0, 1), repeat=n):
                assert theta_max(bits) == (1 if any(bits) else 0)
                assert theta_mean(bits) == sum(bits) / n

    def test_rejects_empty_and_nonbinary(self):
        for fn in (theta_max, theta_mean):
            with pytest.raises(BagwiseError):
                fn([])
            with pytest.raises(BagwiseError):
                fn([0, 2])

    def test_worked_midpoint_example(self):
        # two raters scoring 6-25% and 1-5% fuse to (15.5 + 3)/2 = 9.25%
        fused = combine_raters([ExtentInterval.P6_25, ExtentInterval.P1_5])
        assert fused == pytest.approx(0.0925, abs=0)
        assert interval_midpoint(ExtentInterval.P6_25) == 15.5
        assert interval_midpoint(ExtentInterval.P1_5) == 3.0

    def test_midpoints(self):
        expected = {"0": 0.0, "1-5": 3.0, "6-25": 15.5,
                    "26-50": 38.0, "51-75": 63.0, "76-100": 88.0}
        for iv in ExtentInterval:
            assert iv.midpoint_percent == expected[iv.label]

    def test_binarize(self):
        assert binarize_extent(0.0) == 0
        assert binarize_extent(1e-9) == 1
        assert binarize_extent(1.0) == 1
        with pytest.raises(BagwiseError):
            binarize_extent(1.5)

    def test_threshold_strict(self):
        out = threshold_instances([0.5, 0.5000001, 0.49], 0.5)
        assert out.tolist() == [0, 1, 0]


class TestExtentInterval:
    def test_from_extent_boundaries(self):
        assert ExtentInterval.from_extent(0.0) is ExtentInterval.P0
        assert ExtentInterval.from_extent(1e-6) is ExtentInterval.P1_5
        assert ExtentInterval.from_extent(0.055) is ExtentInterval.P1_5
        assert ExtentInterval.from_extent(0.0551) is ExtentInterval.P6_25
        assert ExtentInterval.from_extent(0.255) is ExtentInterval.P6_25
        assert ExtentInterval.from_extent(0.505) is ExtentInterval.P26_50
        assert ExtentInterval.from_extent(0.755) is ExtentInterval.P51_75
        assert ExtentInterval.from_extent(1.0) is ExtentInterval.P76_100

    def test_label_round_trip(self):
        for iv in ExtentInterval:
            assert ExtentInterval.from_label(iv.label) is iv
        with pytest.raises(BagwiseError):
            ExtentInterval.from_label("2-7")

    @given(st.floats(min_value=0.0, max_value=1.0))
    def test_from_extent_total_on_unit_interval(self, x):
        assert isinstance(ExtentInterval.from_extent(x), ExtentInterval)


class TestBagModel:
    def test_bag_validation(self):
        X = np.zeros((2, 3))
        with pytest.raises(BagwiseError):
            Bag("b", ())
        with pytest.raises(BagwiseError):
            make_bag("b", X, extent=0.5, binary_label=0)
        b = make_bag("b", X, extent=0.5, binary_label=1)
        assert len(b) == 2
        assert b.feature_matrix.shape == (2, 3)

    def test_duplicate_ids_rejected(self):
        X = np.zeros((2, 3))
        insts = (Instance("i", X[0]), Instance("i", X[1]))
        with pytest.raises(BagwiseError):
            Bag("b", insts)
        bags = (make_bag("b", X), make_bag("b", X))
        with pytest.raises(BagwiseError):
            BagDataset(bags, 3)

    def test_feature_dim_checked(self):
        with pytest.raises(BagwiseError):
            BagDataset((make_bag("b", np.zeros((1, 3))),), 4)

    def test_nonfinite_features_rejected(self):
        with pytest.raises(BagwiseError):
            Instance("i", [1.0, np.nan])

    def test_attach_labels(self):
        ds = make_dataset(3)
        out = attach_labels(ds, {"b0": 0.0, "b2": 0.5})
        assert out.bag("b0").extent == 0.0
        assert out.bag("b0").binary_label == 0
        assert out.bag("b1").extent is None
        assert out.bag("b2").binary_label == 1


class TestSplits:
    def test_disjoint_and_sized(self):
        ds = make_dataset(20, n_inst=2)
        plans = split_dataset(ds, 3, 4, 2, seed=5)
        used = []
        for p in plans:
            assert len(p.train_ids) == 4 and len(p.test_ids) == 2
            assert not set(p.train_ids) & set(p.test_ids)
            used.extend(p.train_ids + p.test_ids)
        assert len(used) == len(set(used)) == 18

    def test_deterministic(self):
        ds = make_dataset(20, n_inst=2)
        a = split_dataset(ds, 2, 5, 3, seed=5)
        b = split_dataset(ds, 2, 5, 3, seed=5)
        assert a == b
        c = split_dataset(ds, 2, 5, 3, seed=6)
        assert a != c

    def test_insufficient_bags(self):
        ds = make_dataset(5, n_inst=2)
        with pytest.raises(BagwiseError):
            split_dataset(ds, 2, 2, 1, seed=0)


class TestCsvIO:
    def test_bags_round_trip(self, tmp_path):
        ds = make_dataset(4, n_inst=3, d=5, seed=2)
        path = tmp_path / "bags.csv"
        save_bags_csv(ds, path)
        back = load_bags_csv(path)
        assert back.feature_dim == 5
        assert [b.id for b in back.bags] == [b.id for b in ds.bags]
        for a, b in zip(ds.bags, back.bags):
            np.testing.assert_array_equal(a.feature_matrix, b.feature_matrix)

    def test_extent_labels_round_trip(self, tmp_path):
        path = tmp_path / "labels.csv"
        extents = {"a": 0.25, "b": 0.0}
        save_extent_labels_csv(extents, path)
        assert load_labels_csv(path) == extents

    def test_rater_labels_fused(self, tmp_path):
        path = tmp_path / "raters.csv"
        assessments = [
            RaterAssessment("r1", "a", ExtentInterval.P6_25),
            RaterAssessment("r2", "a", ExtentInterval.P1_5),
        ]
        save_rater_labels_csv(assessments, path)
        assert load_labels_csv(path) == {"a": pytest.approx(0.0925)}
        back = load_rater_assessments_csv(path)
        assert back == assessments

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("foo,bar\n1,2\n")
        with pytest.raises(BagwiseError):
            load_labels_csv(path)
        with pytest.raises(BagwiseError):
            load_bags_csv(path)
