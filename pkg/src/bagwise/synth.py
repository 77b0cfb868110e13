"""Synthetic bag data with known instance labels and simulated raters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bagcore import (
    INTERVAL_BOUNDS,
    Bag,
    BagDataset,
    BagwiseError,
    ExtentInterval,
    Instance,
    RaterAssessment,
)

# Label prevalences of the six extent categories in the reference visual
# scoring (75.2 / 14.7 / 7.0 / 2.0 / 0.9 / 0.1 percent), normalized.
DEFAULT_EXTENT_DISTRIBUTION = tuple(
    np.array([75.2, 14.7, 7.0, 2.0, 0.9, 0.1]) / 99.9)


@dataclass(frozen=True)
class SynthConfig:
    feature_dim: int = 10
    n_bags: int = 100
    instances_per_bag: int = 100
    separation: float = 2.0                # distance between class means
    extent_distribution: tuple = DEFAULT_EXTENT_DISTRIBUTION
    positive_means: tuple = ()             # mixture component means, rows
    negative_means: tuple = ()
    positive_weights: tuple = ()
    negative_weights: tuple = ()
    covariance_scale: float = 1.0
    rater_confusion: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.separation < 0:
            raise BagwiseError("separation must be >= 0")
        dist = np.asarray(self.extent_distribution, dtype=float)
        if dist.shape != (6,) or abs(dist.sum() - 1.0) > 1e-9 or np.any(dist < 0):
            raise BagwiseError("extent distribution must be 6 nonnegative values summing to 1")
        if not (0.0 <= self.rater_confusion <= 0.5):
            raise BagwiseError("rater confusion must be in [0, 0.5]")
        object.__setattr__(self, "extent_distribution", tuple(dist))

    def _mixture(self, positive: bool):
        means = self.positive_means if positive else self.negative_means
        weights = self.positive_weights if positive else self.negative_weights
        if len(means) == 0:
            # default: unit-covariance Gaussians `separation` apart along a
            # diagonal direction
            direction = np.ones(self.feature_dim) / np.sqrt(self.feature_dim)
            shift = direction * self.separation if positive else np.zeros(self.feature_dim)
            return np.atleast_2d(shift), np.array([1.0])
        means = np.atleast_2d(np.asarray(means, dtype=float))
        if len(weights) == 0:
            weights = np.full(len(means), 1.0 / len(means))
        weights = np.asarray(weights, dtype=float)
        return means, weights / weights.sum()


@dataclass(frozen=True)
class GroundTruth:
    instance_labels: dict        # instance_id -> {0,1}
    bag_extents: dict            # bag_id -> exact proportion of positives
    bag_intervals: dict          # bag_id -> ExtentInterval drawn for the bag


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def generate_dataset(config: SynthConfig) -> tuple[BagDataset, GroundTruth]:
    """Draw bags with known instance labels.

    Per bag: draw an interval from the extent distribution, a uniform extent
    within it, set the positive count by round-half-up, then sample
    instances from the class-matched Gaussian mixtures.
    """
    rng = np.random.default_rng(config.seed)
    intervals = list(ExtentInterval)
    pos_means, pos_w = config._mixture(True)
    neg_means, neg_w = config._mixture(False)
    scale = np.sqrt(config.covariance_scale)

    bags = []
    inst_labels: dict[str, int] = {}
    bag_extents: dict[str, float] = {}
    bag_intervals: dict[str, ExtentInterval] = {}
    n_inst = config.instances_per_bag
    for i in range(config.n_bags):
        bag_id = f"bag{i:05d}"
        iv = intervals[rng.choice(6, p=np.asarray(config.extent_distribution))]
        lo, hi = INTERVAL_BOUNDS[iv]
        drawn = lo if lo == hi else rng.uniform(lo, hi)
        n_pos = _round_half_up(drawn * n_inst)
        labels = np.zeros(n_inst, dtype=int)
        labels[:n_pos] = 1
        rng.shuffle(labels)

        comp_pos = rng.choice(len(pos_w), size=n_inst, p=pos_w)
        comp_neg = rng.choice(len(neg_w), size=n_inst, p=neg_w)
        noise = rng.standard_normal((n_inst, config.feature_dim)) * scale
        means = np.where(labels[:, None] == 1,
                         pos_means[comp_pos], neg_means[comp_neg])
        X = means + noise

        instances = tuple(
            Instance(f"{bag_id}:i{j:04d}", X[j], true_label=int(labels[j]))
            for j in range(n_inst))
        extent = float(np.mean(labels))
        bags.append(Bag(bag_id, instances, extent=extent,
                        binary_label=int(extent > 0)))
        for inst in instances:
            inst_labels[inst.id] = inst.true_label
        bag_extents[bag_id] = extent
        bag_intervals[bag_id] = iv
    dataset = BagDataset(tuple(bags), config.feature_dim)
    return dataset, GroundTruth(inst_labels, bag_extents, bag_intervals)


def simulate_raters(truth: GroundTruth, confusion: float, n_raters: int,
                    seed: int) -> list[RaterAssessment]:
    """Simulated interval scorers.

    Each rater reports the bag's true interval, perturbed to an adjacent
    category with the given probability (direction uniform, clamped at the
    first and last category).
    """
    if not (0.0 <= confusion <= 0.5):
        raise BagwiseError("confusion must be in [0, 0.5]")
    rng = np.random.default_rng(seed)
    intervals = list(ExtentInterval)
    out = []
    for bag_id in sorted(truth.bag_extents):
        true_iv = ExtentInterval.from_extent(truth.bag_extents[bag_id])
        for r in range(n_raters):
            idx = true_iv.value
            if rng.random() < confusion:
                idx = int(np.clip(idx + (1 if rng.random() < 0.5 else -1), 0, 5))
            out.append(RaterAssessment(f"rater{r+1}", bag_id, intervals[idx]))
    return out


def bayes_instance_probs(config: SynthConfig, X) -> np.ndarray:
    """Likelihood-ratio oracle P(positive | x) at equal priors.

    Used only as an independent reference classifier in tests.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    pos_means, pos_w = config._mixture(True)
    neg_means, neg_w = config._mixture(False)
    var = config.covariance_scale

    def log_density(means, weights):
        d2 = ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
        logs = -0.5 * d2 / var + np.log(weights)[None, :]
        m = logs.max(axis=1)
        return m + np.log(np.exp(logs - m[:, None]).sum(axis=1))

    lp = log_density(pos_means, pos_w)
    ln = log_density(neg_means, neg_w)
    return 1.0 / (1.0 + np.exp(ln - lp))
