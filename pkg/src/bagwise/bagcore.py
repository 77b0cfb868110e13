"""Bag data model: instances, bags, extent intervals, rater fusion and splits.

Bags carry an optional proportion label ("extent", the fraction of positive
instances) and/or a binary presence label. Extents are stored as proportions
in [0, 1]; percentages appear only at I/O boundaries.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class BagwiseError(Exception):
    """Base class for domain errors raised by this package."""


class ExtentInterval(Enum):
    """The six visual-score extent categories, ordered by lower bound."""

    P0 = 0
    P1_5 = 1
    P6_25 = 2
    P26_50 = 3
    P51_75 = 4
    P76_100 = 5

    @property
    def label(self) -> str:
        return _INTERVAL_LABELS[self]

    @property
    def midpoint_percent(self) -> float:
        """Point estimate of the category, in percent (e.g. 6-25% -> 15.5)."""
        return _INTERVAL_MIDPOINTS[self]

    @classmethod
    def from_label(cls, text: str) -> "ExtentInterval":
        try:
            return _LABEL_TO_INTERVAL[text.strip()]
        except KeyError:
            raise BagwiseError(f"unknown extent interval label: {text!r}") from None

    @classmethod
    def from_extent(cls, extent: float) -> "ExtentInterval":
        """Map a proportion in [0, 1] to its extent category.

        Boundaries between categories sit halfway between adjacent interval
        edges (5.5, 25.5, 50.5, 75.5 percent); exactly 0 maps to P0 so the
        presence/absence boundary is preserved.
        """
        if not (0.0 <= extent <= 1.0):
            raise BagwiseError(f"extent {extent} outside [0, 1]")
        if extent == 0.0:
            return cls.P0
        for iv, upper in _INTERVAL_UPPER_BOUNDS:
            if extent <= upper:
                return iv
        return cls.P76_100


_INTERVAL_LABELS = {
    ExtentInterval.P0: "0",
    ExtentInterval.P1_5: "1-5",
    ExtentInterval.P6_25: "6-25",
    ExtentInterval.P26_50: "26-50",
    ExtentInterval.P51_75: "51-75",
    ExtentInterval.P76_100: "76-100",
}
_LABEL_TO_INTERVAL = {v: k for k, v in _INTERVAL_LABELS.items()}

# Midpoints in percent. 15.5 and 3 are the published conversions; the rest
# are arithmetic interval midpoints.
_INTERVAL_MIDPOINTS = {
    ExtentInterval.P0: 0.0,
    ExtentInterval.P1_5: 3.0,
    ExtentInterval.P6_25: 15.5,
    ExtentInterval.P26_50: 38.0,
    ExtentInterval.P51_75: 63.0,
    ExtentInterval.P76_100: 88.0,
}

_INTERVAL_UPPER_BOUNDS = [
    (ExtentInterval.P1_5, 0.055),
    (ExtentInterval.P6_25, 0.255),
    (ExtentInterval.P26_50, 0.505),
    (ExtentInterval.P51_75, 0.755),
    (ExtentInterval.P76_100, 1.0),
]

# Physical bounds of each category as proportions, used when sampling a
# ground-truth extent inside a category.
INTERVAL_BOUNDS = {
    ExtentInterval.P0: (0.0, 0.0),
    ExtentInterval.P1_5: (0.01, 0.05),
    ExtentInterval.P6_25: (0.06, 0.25),
    ExtentInterval.P26_50: (0.26, 0.50),
    ExtentInterval.P51_75: (0.51, 0.75),
    ExtentInterval.P76_100: (0.76, 1.00),
}


@dataclass(frozen=True)
class Instance:
    id: str
    features: np.ndarray
    true_label: int | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 1 or not np.all(np.isfinite(feats)):
            raise BagwiseError(f"instance {self.id}: features must be a finite 1-D vector")
        object.__setattr__(self, "features", feats)


@dataclass(frozen=True)
class Bag:
    id: str
    instances: tuple[Instance, ...]
    extent: float | None = None
    binary_label: int | None = None

    def __post_init__(self):
        if len(self.instances) == 0:
            raise BagwiseError(f"bag {self.id}: needs at least one instance")
        ids = [inst.id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise BagwiseError(f"bag {self.id}: duplicate instance ids")
        object.__setattr__(self, "instances", tuple(self.instances))
        if self.extent is not None and not (0.0 <= self.extent <= 1.0):
            raise BagwiseError(f"bag {self.id}: extent {self.extent} outside [0, 1]")
        if self.extent is not None and self.binary_label is not None:
            if self.binary_label != int(self.extent > 0):
                raise BagwiseError(
                    f"bag {self.id}: binary label {self.binary_label} inconsistent "
                    f"with extent {self.extent}"
                )

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def feature_matrix(self) -> np.ndarray:
        return np.stack([inst.features for inst in self.instances])

    def with_labels(self, extent: float | None = None,
                    binary_label: int | None = None) -> "Bag":
        return Bag(self.id, self.instances, extent=extent, binary_label=binary_label)


@dataclass(frozen=True)
class BagDataset:
    bags: tuple[Bag, ...]
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "bags", tuple(self.bags))
        ids = [b.id for b in self.bags]
        if len(set(ids)) != len(ids):
            raise BagwiseError("duplicate bag ids in dataset")
        for b in self.bags:
            for inst in b.instances:
                if inst.features.shape[0] != self.feature_dim:
                    raise BagwiseError(
                        f"bag {b.id}: feature dim {inst.features.shape[0]} != {self.feature_dim}"
                    )

    def __len__(self) -> int:
        return len(self.bags)

    def bag(self, bag_id: str) -> Bag:
        for b in self.bags:
            if b.id == bag_id:
                return b
        raise BagwiseError(f"no bag with id {bag_id}")

    def subset(self, bag_ids) -> "BagDataset":
        wanted = set(bag_ids)
        return BagDataset(tuple(b for b in self.bags if b.id in wanted), self.feature_dim)


@dataclass(frozen=True)
class RaterAssessment:
    rater_id: str
    bag_id: str
    interval: ExtentInterval


@dataclass(frozen=True)
class SplitPlan:
    replication_id: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int

    def __post_init__(self):
        if set(self.train_ids) & set(self.test_ids):
            raise BagwiseError("train and test ids overlap")


def theta_max(labels) -> int:
    """Bag label under the max rule: positive iff any instance is positive."""
    labels = list(labels)
    if not labels:
        raise BagwiseError("theta_max: empty label list")
    if any(l not in (0, 1) for l in labels):
        raise BagwiseError("theta_max: labels must be binary")
    return max(labels)


def theta_mean(labels) -> float:
    """Bag label under the mean rule: proportion of positive instances."""
    labels = list(labels)
    if not labels:
        raise BagwiseError("theta_mean: empty label list")
    if any(l not in (0, 1) for l in labels):
        raise BagwiseError("theta_mean: labels must be binary")
    return sum(labels) / len(labels)


def interval_midpoint(interval: ExtentInterval) -> float:
    """Point estimate of an extent category, in percent."""
    return interval.midpoint_percent


def combine_raters(assessments) -> float:
    """Fuse interval assessments into one proportion: mean midpoint / 100."""
    assessments = list(assessments)
    if not assessments:
        raise BagwiseError("combine_raters: no assessments")
    return sum(iv.midpoint_percent for iv in assessments) / len(assessments) / 100.0


def binarize_extent(extent: float) -> int:
    """Presence/absence label: 1 iff extent is strictly positive."""
    if not (0.0 <= extent <= 1.0):
        raise BagwiseError(f"extent {extent} outside [0, 1]")
    return int(extent > 0)


def threshold_instances(probabilities, t: float) -> np.ndarray:
    """Binarize instance probabilities with a strict cutoff (p > t)."""
    probs = np.asarray(probabilities, dtype=float)
    return (probs > t).astype(int)


def split_dataset(dataset: BagDataset, n_reps: int, n_train: int, n_test: int,
                  seed: int) -> list[SplitPlan]:
    """Draw pairwise-disjoint train/test replications from a dataset.

    A single seeded shuffle of the bag ids is cut into consecutive blocks,
    so the replications partition a prefix of the shuffled order.
    """
    needed = n_reps * (n_train + n_test)
    if needed > len(dataset):
        raise BagwiseError(f"need {needed} bags for splits, have {len(dataset)}")
    rng = np.random.default_rng(seed)
    ids = [b.id for b in dataset.bags]
    order = rng.permutation(len(ids))
    plans = []
    pos = 0
    for rep in range(1, n_reps + 1):
        train = tuple(ids[i] for i in order[pos:pos + n_train])
        pos += n_train
        test = tuple(ids[i] for i in order[pos:pos + n_test])
        pos += n_test
        plans.append(SplitPlan(rep, train, test, seed))
    return plans


# ---------------------------------------------------------------------------
# CSV I/O


def save_bags_csv(dataset: BagDataset, path) -> None:
    """Write `bag_id,instance_id,f0,...,f{d-1}` rows, UTF-8."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bag_id", "instance_id"] +
                        [f"f{i}" for i in range(dataset.feature_dim)])
        for bag in dataset.bags:
            for inst in bag.instances:
                writer.writerow([bag.id, inst.id] + [repr(float(v)) for v in inst.features])


def load_bags_csv(path) -> BagDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["bag_id", "instance_id"]:
            raise BagwiseError(f"{path}: expected bag_id,instance_id,f0,... header")
        d = len(header) - 2
        by_bag: dict[str, list[Instance]] = {}
        for row in reader:
            if not row:
                continue
            feats = np.array([float(v) for v in row[2:]], dtype=float)
            by_bag.setdefault(row[0], []).append(Instance(row[1], feats))
    bags = tuple(Bag(bag_id, tuple(insts)) for bag_id, insts in by_bag.items())
    return BagDataset(bags, d)


def save_extent_labels_csv(extents: dict[str, float], path) -> None:
    """Write `bag_id,extent` rows with extents as proportions."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bag_id", "extent"])
        for bag_id in extents:
            writer.writerow([bag_id, repr(float(extents[bag_id]))])


def save_rater_labels_csv(assessments, path) -> None:
    """Write `bag_id,rater,interval` rows with interval literals like 6-25."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bag_id", "rater", "interval"])
        for a in assessments:
            writer.writerow([a.bag_id, a.rater_id, a.interval.label])


def load_labels_csv(path) -> dict[str, float]:
    """Load bag extents from a labels file.

    Accepts either `bag_id,extent` (proportions) or `bag_id,rater,interval`
    (interval literals); rater assessments are fused with combine_raters.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header == ["bag_id", "extent"]:
            out = {}
            for row in reader:
                if not row:
                    continue
                extent = float(row[1])
                if not (0.0 <= extent <= 1.0):
                    raise BagwiseError(f"{path}: extent {extent} outside [0, 1]")
                out[row[0]] = extent
            return out
        if header == ["bag_id", "rater", "interval"]:
            per_bag: dict[str, list[ExtentInterval]] = {}
            for row in reader:
                if not row:
                    continue
                per_bag.setdefault(row[0], []).append(ExtentInterval.from_label(row[2]))
            return {bag_id: combine_raters(ivs) for bag_id, ivs in per_bag.items()}
        raise BagwiseError(f"{path}: unrecognized labels header {header}")


def load_rater_assessments_csv(path) -> list[RaterAssessment]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["bag_id", "rater", "interval"]:
            raise BagwiseError(f"{path}: expected bag_id,rater,interval header")
        out = []
        for row in reader:
            if not row:
                continue
            out.append(RaterAssessment(row[1], row[0], ExtentInterval.from_label(row[2])))
    return out


def attach_labels(dataset: BagDataset, extents: dict[str, float]) -> BagDataset:
    """Return a dataset whose bags carry the given extents plus derived binary labels."""
    bags = []
    for bag in dataset.bags:
        if bag.id in extents:
            e = extents[bag.id]
            bags.append(bag.with_labels(extent=e, binary_label=binarize_extent(e)))
        else:
            bags.append(bag)
    return BagDataset(tuple(bags), dataset.feature_dim)
