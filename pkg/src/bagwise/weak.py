"""The nine bag-learning classifiers behind one train/predict interface.

Strategies:
  simple     - instances inherit their bag label; log, svm, beta
  relabeling - alternate supervised fitting and instance relabeling;
               milog, misvm (max rule), plog, psvm, cms (mean rule)
  mean       - replace instance labels by an estimated mean operator; lmm

Every trained model carries an instance threshold t fitted on a 0.01 grid;
extent prediction is the fraction of instance probabilities above t.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .bagcore import Bag, BagwiseError, theta_max, threshold_instances
from .learners import (
    BetaModel,
    CmaEsConfig,
    KMeansModel,
    LinearModel,
    SvmModel,
    cmaes_minimize,
    fit_beta_regression,
    fit_logistic,
    fit_svm,
    kmeans,
    pca_fit,
    pca_transform,
    predict_proba_linear,
    sigmoid,
    squeeze_proportions,
)

METHODS = ("log", "svm", "milog", "misvm", "beta", "plog", "psvm", "cms", "lmm")
THRESHOLD_GRID = np.round(np.arange(101) / 100.0, 2)
MAX_RELABEL_ITERS = 20
PROB_EPS = 1e-12


@dataclass(frozen=True)
class WeakClassifierSpec:
    name: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.name not in METHODS:
            raise BagwiseError(f"unknown classifier {self.name!r}")


@dataclass(frozen=True)
class ClusterLabeling:
    clusters: KMeansModel
    cluster_labels: np.ndarray    # binary label per cluster

    def __post_init__(self):
        labels = np.asarray(self.cluster_labels, dtype=int)
        if not set(np.unique(labels)) <= {0, 1}:
            raise BagwiseError("cluster labels must be binary")
        object.__setattr__(self, "cluster_labels", labels)

    def instance_probs(self, X) -> np.ndarray:
        return self.cluster_labels[self.clusters.assign(X)].astype(float)


@dataclass(frozen=True)
class MeanMapModel:
    linear: LinearModel
    mu: np.ndarray                 # estimated mean operator (augmented space)
    bag_means: np.ndarray          # per-bag signed means mu_i
    bag_means_pos: np.ndarray
    bag_means_neg: np.ndarray
    bag_sizes: np.ndarray

    def instance_probs(self, X) -> np.ndarray:
        return predict_proba_linear(self.linear, X)


@dataclass(frozen=True)
class TrainedBagModel:
    spec: WeakClassifierSpec
    model: object
    preprocessing: object | None    # PcaTransform or None
    instance_threshold: float

    def instance_probs(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.preprocessing is not None:
            X = pca_transform(self.preprocessing, X)
        return _model_probs(self.model, X)

    def predict_extent(self, bag: Bag) -> float:
        return predict_extent(self, bag)


def _model_probs(model, X) -> np.ndarray:
    if isinstance(model, (LinearModel, BetaModel)):
        return predict_proba_linear(model, X)
    if isinstance(model, SvmModel):
        return model.predict_proba(X)
    if isinstance(model, ClusterLabeling):
        return model.instance_probs(X)
    if isinstance(model, MeanMapModel):
        return model.instance_probs(X)
    raise BagwiseError(f"cannot produce probabilities from {type(model).__name__}")


def _relabel_probs(model, X) -> np.ndarray:
    """Probabilities used inside relabeling loops.

    For an SVM the Platt calibration can sit entirely above (or below) 0.5
    when the fit labels are imbalanced, which would make threshold-at-0.5
    relabeling a no-op; relabeling therefore follows the decision-function
    sign, mapped through a sigmoid so it composes with the 0.5-threshold
    relabel rules. For logistic models the two are identical.
    """
    if isinstance(model, SvmModel):
        return sigmoid(model.decision(X))
    return _model_probs(model, X)


def _stack_bags(bags):
    X = np.vstack([b.feature_matrix for b in bags])
    sizes = np.array([len(b) for b in bags])
    return X, sizes


def _bag_slices(sizes):
    stops = np.cumsum(sizes)
    starts = stops - sizes
    return [slice(a, b) for a, b in zip(starts, stops)]


def _require_labels(bags, kind):
    for b in bags:
        if kind == "binary" and b.binary_label is None and b.extent is None:
            raise BagwiseError(f"bag {b.id} has no binary label")
        if kind == "extent" and b.extent is None:
            raise BagwiseError(f"bag {b.id} has no extent label")


def _binary_labels(bags) -> np.ndarray:
    out = []
    for b in bags:
        if b.binary_label is not None:
            out.append(b.binary_label)
        elif b.extent is not None:
            out.append(int(b.extent > 0))
        else:
            raise BagwiseError(f"bag {b.id} has no usable label")
    return np.array(out, dtype=int)


# ---------------------------------------------------------------------------
# Simple strategy


def train_simple(spec: WeakClassifierSpec, bags) -> TrainedBagModel:
    """Instances inherit their bag's label; fit a standard supervised model."""
    hp = spec.hyperparameters
    X, sizes = _stack_bags(bags)
    pca = None
    if hp.get("pca", spec.name == "beta"):
        pca = pca_fit(X, reduce=hp.get("pca_reduce", False))
        X = pca_transform(pca, X)

    if spec.name == "beta":
        _require_labels(bags, "extent")
        z = np.array([b.extent for b in bags])
        y = np.repeat(squeeze_proportions(z, len(bags)), sizes)
        model = fit_beta_regression(X, y)
    elif spec.name == "log":
        y = np.repeat(_binary_labels(bags), sizes)
        model = fit_logistic(X, y)
    elif spec.name == "svm":
        y = np.repeat(2 * _binary_labels(bags) - 1, sizes)
        if len(np.unique(y)) < 2:
            model = _degenerate_prior(bags)
        else:
            Xf, yf = _subsample_for_svm(X, y, hp.get("max_fit_instances"),
                                        spec.seed)
            model = fit_svm(Xf, yf, kernel=hp.get("kernel", "linear"),
                            C=hp.get("C", 1.0), gamma=hp.get("gamma"),
                            seed=spec.seed,
                            class_weight=hp.get("class_weight"))
    else:
        raise BagwiseError(f"train_simple does not handle {spec.name!r}")
    return _finish(spec, model, pca, bags)


def _subsample_for_svm(X, y, cap, seed):
    """Stratified cap on SVM fit size; kernel solves scale quadratically.

    Predictions and relabeling still use every instance; only the instances
    handed to the quadratic-programming solver are capped.
    """
    if cap is None or len(y) <= int(cap):
        return X, y
    rng = np.random.default_rng(seed)
    keep = []
    for cls in np.unique(y):
        cls_idx = np.flatnonzero(y == cls)
        k = max(1, int(round(int(cap) * len(cls_idx) / len(y))))
        keep.append(rng.choice(cls_idx, size=min(k, len(cls_idx)),
                               replace=False))
    keep = np.sort(np.concatenate(keep))
    return X[keep], y[keep]


def _degenerate_prior(bags) -> LinearModel:
    """Bias-only model predicting the overall positive-instance prior."""
    y = np.repeat(_binary_labels(bags), [len(b) for b in bags])
    prior = float(np.clip(np.mean(y), 1e-12, 1.0 - 1e-12))
    d = bags[0].instances[0].features.shape[0]
    bias = float(np.clip(np.log(prior / (1.0 - prior)), -30.0, 30.0))
    return LinearModel(np.zeros(d), bias)


# ---------------------------------------------------------------------------
# Relabeling strategy, max rule (milog / misvm)


def mi_relabel(bag_label: int, probs, predicted_bag: int) -> np.ndarray:
    """Three-part instance relabeling rule for the max-rule heuristic.

    Negative bags stay all-negative; a positive bag predicted negative gets
    exactly its highest-probability instance positive (ties to the lowest
    index); otherwise labels follow the thresholded predictions.
    """
    probs = np.asarray(probs, dtype=float)
    if bag_label == 0:
        return np.zeros(len(probs), dtype=int)
    labels = (probs > 0.5).astype(int)
    if predicted_bag == 0:
        labels = np.zeros(len(probs), dtype=int)
        labels[int(np.argmax(probs))] = 1
    return labels


def train_relabel_mil(spec: WeakClassifierSpec, bags) -> TrainedBagModel:
    """mi-logistic / mi-SVM: alternate fitting and max-rule relabeling."""
    if spec.name not in ("milog", "misvm"):
        raise BagwiseError(f"train_relabel_mil does not handle {spec.name!r}")
    hp = spec.hyperparameters
    X, sizes = _stack_bags(bags)
    slices = _bag_slices(sizes)
    z = _binary_labels(bags)
    if not np.any(z == 1):
        return _finish(spec, _degenerate_prior(bags), None, bags)

    labels = np.repeat(z, sizes)
    model = None
    for _ in range(MAX_RELABEL_ITERS):
        model = _fit_binary(spec, X, labels, hp, final=False)
        probs = _relabel_probs(model, X)
        new_labels = np.empty_like(labels)
        for zi, sl in zip(z, slices):
            p = probs[sl]
            predicted = theta_max(list((p > 0.5).astype(int)))
            new_labels[sl] = mi_relabel(int(zi), p, predicted)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    model = _fit_binary(spec, X, labels, hp, final=True)
    return _finish(spec, model, None, bags)


def _fit_binary(spec, X, labels, hp, final: bool):
    if len(np.unique(labels)) < 2:
        return fit_logistic(X, labels)    # bias-only prior model
    if spec.name in ("milog", "plog"):
        return fit_logistic(X, labels)
    calibrate = "cv3" if final else "insample"
    Xf, yf = _subsample_for_svm(X, 2 * labels - 1,
                                hp.get("max_fit_instances"), spec.seed)
    return fit_svm(Xf, yf, kernel=hp.get("kernel", "linear"),
                   C=hp.get("C", 1.0), gamma=hp.get("gamma"),
                   seed=spec.seed, calibrate=calibrate,
                   class_weight=hp.get("class_weight"))


# ---------------------------------------------------------------------------
# Relabeling strategy, mean rule (plog / psvm)


def _bag_label_log_prob(z: float, count: int, size: int) -> float:
    """log of the binomial bag-label term theta^(n z) (1-theta)^(n(1-z))."""
    theta = count / size
    total = 0.0
    if z > 0:
        total += size * z * (np.log(theta) if theta > 0 else -np.inf)
    if z < 1:
        total += size * (1.0 - z) * (np.log1p(-theta) if theta < 1 else -np.inf)
    return total


def greedy_bag_labeling(extent: float, probs) -> np.ndarray:
    """Maximize the binomial bag term times the instance-label likelihood.

    Equivalent to exhaustive maximization over all 2^|b| labelings: for a
    fixed positive count c the instance term is maximized by taking the c
    highest-probability instances, so only c = 0..|b| is scanned. Count ties
    break toward the lower c.
    """
    p = np.clip(np.asarray(probs, dtype=float), PROB_EPS, 1.0 - PROB_EPS)
    n = len(p)
    order = np.argsort(-p, kind="stable")
    logit = np.log(p) - np.log1p(-p)
    base = float(np.sum(np.log1p(-p)))          # all-negative instance term
    gains = np.concatenate([[0.0], np.cumsum(logit[order])])
    best_c, best_obj = 0, -np.inf
    for c in range(n + 1):
        obj = _bag_label_log_prob(extent, c, n) + base + gains[c]
        if obj > best_obj:
            best_c, best_obj = c, obj
    labels = np.zeros(n, dtype=int)
    labels[order[:best_c]] = 1
    return labels


def greedy_bag_labeling_hinge(extent: float, decisions, C2: float) -> np.ndarray:
    """Hinge-loss variant used by psvm.

    Minimizes sum_j hinge(y_j f_j) + C2 * |b| * |mean(y) - z| over the
    positive count c, with the c largest decision values labeled positive.
    """
    f = np.asarray(decisions, dtype=float)
    n = len(f)
    order = np.argsort(-f, kind="stable")
    f_sorted = f[order]
    hinge_pos = np.maximum(0.0, 1.0 - f_sorted)
    hinge_neg = np.maximum(0.0, 1.0 + f_sorted)
    cum_pos = np.concatenate([[0.0], np.cumsum(hinge_pos)])
    total_neg = np.concatenate([[0.0], np.cumsum(hinge_neg)])
    best_c, best_cost = 0, np.inf
    for c in range(n + 1):
        hinge = cum_pos[c] + (total_neg[n] - total_neg[c])
        cost = hinge + C2 * n * abs(c / n - extent)
        if cost < best_cost:
            best_c, best_cost = c, cost
    labels = np.zeros(n, dtype=int)
    labels[order[:best_c]] = 1
    return labels


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _init_proportion_labels(bags, sizes, seed) -> np.ndarray:
    """Random instance labels with round(z*|b|) positives per bag."""
    rng = np.random.default_rng(seed)
    parts = []
    for b in bags:
        n = len(b)
        pos = _round_half_up(b.extent * n)
        labels = np.zeros(n, dtype=int)
        labels[rng.permutation(n)[:pos]] = 1
        parts.append(labels)
    return np.concatenate(parts)


def train_relabel_llp(spec: WeakClassifierSpec, bags) -> TrainedBagModel:
    """proportion-logistic / proportion-SVM with greedy per-bag relabeling.

    Zero-extent bags are clamped to all-negative instance labels throughout;
    the greedy step only reassigns labels inside bags with positive extent.
    """
    if spec.name not in ("plog", "psvm"):
        raise BagwiseError(f"train_relabel_llp does not handle {spec.name!r}")
    _require_labels(bags, "extent")
    hp = spec.hyperparameters
    X, sizes = _stack_bags(bags)
    slices = _bag_slices(sizes)
    z = np.array([b.extent for b in bags])
    if np.all(z == 0):
        return _finish(spec, _degenerate_prior(bags), None, bags)

    labels = _init_proportion_labels(bags, sizes, spec.seed)
    model = None
    for _ in range(MAX_RELABEL_ITERS):
        model = _fit_binary(spec, X, labels, hp, final=False)
        new_labels = np.empty_like(labels)
        if spec.name == "plog":
            probs = _model_probs(model, X)
            for zi, sl in zip(z, slices):
                new_labels[sl] = 0 if zi == 0 else greedy_bag_labeling(zi, probs[sl])
        else:
            decisions = model.decision(X)
            # the proportion penalty must beat the ~2-per-instance hinge cost
            # of a degenerate constant model, or labels collapse to one class
            C2 = hp.get("C2", 100.0)
            for zi, sl in zip(z, slices):
                new_labels[sl] = (0 if zi == 0 else
                                  greedy_bag_labeling_hinge(zi, decisions[sl], C2))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    model = _fit_binary(spec, X, labels, hp, final=True)
    return _finish(spec, model, None, bags)


# ---------------------------------------------------------------------------
# Relabeling strategy, clustering (cms)


def train_cms(spec: WeakClassifierSpec, bags, k_grid=None) -> TrainedBagModel:
    """Cluster Model Selection: label k-means clusters to fit bag proportions.

    For each k, instances are clustered (bisecting branching-2 start, 25
    Lloyd iterations) and a per-cluster label vector relaxed to [0,1] is
    optimized with CMA-ES against the bag-extent MAE, then rounded at 0.5.
    The k with the lowest training error wins.
    """
    _require_labels(bags, "extent")
    hp = spec.hyperparameters
    if k_grid is None:
        k_grid = hp.get("k_grid", [hp["k"]] if "k" in hp else list(range(10, 101, 10)))
    if not list(k_grid):
        raise BagwiseError("train_cms: empty k grid")
    X, sizes = _stack_bags(bags)
    slices = _bag_slices(sizes)
    z = np.array([b.extent for b in bags])
    kmeans_iters = hp.get("kmeans_iters", 25)
    cma = CmaEsConfig(population=hp.get("cma_lambda", 13),
                      max_iter=hp.get("cma_max_iter", 1000),
                      initial_step=0.3, seed=spec.seed, target_value=0.0)

    best = None
    for k in k_grid:
        if k > len(X):
            continue
        try:
            km = kmeans(X, k, iters=kmeans_iters, seed=spec.seed, init="bisecting")
        except BagwiseError:
            continue
        assign = km.assign(X)
        # fraction of each bag's instances in each cluster
        M = np.stack([np.bincount(assign[sl], minlength=k) / sizes[i]
                      for i, sl in enumerate(slices)])
        if np.all(z == 0):
            labels = np.zeros(k, dtype=int)
        else:
            def objective(v):
                return float(np.mean(np.abs(M @ np.clip(v, 0.0, 1.0) - z)))
            v_best, _ = cmaes_minimize(objective, k, cma, x0=np.full(k, 0.5))
            labels = (np.clip(v_best, 0.0, 1.0) > 0.5).astype(int)
        mae = float(np.mean(np.abs(M @ labels - z)))
        if best is None or mae < best[0]:
            best = (mae, k, ClusterLabeling(km, labels))
    if best is None:
        raise BagwiseError("train_cms: no usable k in grid")
    chosen = WeakClassifierSpec(spec.name, {**hp, "k": best[1]}, spec.seed)
    return _finish(chosen, best[2], None, bags)


# ---------------------------------------------------------------------------
# Mean strategy (lmm)


def estimate_mean_operator(bags, lam: float, sigma: float):
    """Estimate the mean operator and per-bag class-conditional means.

    The underdetermined system z_i mu_i+ + (1-z_i) mu_i- = avg_i is solved
    as a minimum-residual (least-squares) problem penalized by the
    graph-Laplacian smoothness of mu+/mu- across similar bags, with
    similarity exp(-||avg_i - avg_j|| / sigma) and the symmetric normalized
    Laplacian. Returns (mu, mu_i, mu_i+, mu_i-, bag sizes).
    """
    _require_labels(bags, "extent")
    if len(bags) < 1:
        raise BagwiseError("estimate_mean_operator: need at least one bag")
    m = len(bags)
    z = np.array([b.extent for b in bags])
    sizes = np.array([len(b) for b in bags], dtype=float)
    avgs = np.stack([b.feature_matrix.mean(axis=0) for b in bags])

    dists = np.sqrt(np.maximum(
        np.sum(avgs ** 2, axis=1)[:, None] - 2 * avgs @ avgs.T
        + np.sum(avgs ** 2, axis=1)[None, :], 0.0))
    W = np.exp(-dists / sigma)
    deg = W.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(deg, 1e-300))
    L = np.eye(m) - inv_sqrt[:, None] * W * inv_sqrt[None, :]

    # unknowns stacked [mu+_1..m ; mu-_1..m]
    A = np.zeros((m, 2 * m))
    A[np.arange(m), np.arange(m)] = z
    A[np.arange(m), m + np.arange(m)] = 1.0 - z
    K = A.T @ A + lam * np.block([[L, np.zeros((m, m))], [np.zeros((m, m)), L]])
    rhs = A.T @ avgs
    # minimum-norm solve keeps the closed forms exact when K is singular
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    mu_plus, mu_minus = sol[:m], sol[m:]
    mu_i = z[:, None] * mu_plus - (1.0 - z)[:, None] * mu_minus
    n = sizes.sum()
    mu = (sizes[:, None] * mu_i).sum(axis=0) / n
    return mu, mu_i, mu_plus, mu_minus, sizes


def _mean_map_risk_grad(w, X, mu, gamma):
    """Mean-operator form of the logistic surrogate risk with ridge gamma.

    (1/n) sum log(2 cosh(w.x/2)) - (1/2) w.mu + gamma ||w||^2; the labels
    enter only through mu.
    """
    n = X.shape[0]
    v = X @ w
    # log(2 cosh(v/2)) = |v|/2 + log(1 + exp(-|v|))
    risk = float(np.sum(np.abs(v) / 2.0 + np.log1p(np.exp(-np.abs(v)))) / n
                 - 0.5 * w @ mu + gamma * w @ w)
    grad = X.T @ np.tanh(v / 2.0) / (2.0 * n) - mu / 2.0 + 2.0 * gamma * w
    return risk, grad


def train_lmm(spec: WeakClassifierSpec, bags) -> TrainedBagModel:
    """Laplacian mean map: estimate mu, then fit a linear model through it."""
    hp = spec.hyperparameters
    lam = hp.get("lam", 10.0)
    gamma = hp.get("gamma", 1e-4)
    sigma = hp.get("sigma", 0.25)
    aug = [Bag(b.id, tuple(
        type(inst)(inst.id, np.concatenate([inst.features, [1.0]]), inst.true_label)
        for inst in b.instances), extent=b.extent, binary_label=b.binary_label)
        for b in bags]
    mu, mu_i, mu_plus, mu_minus, sizes = estimate_mean_operator(aug, lam, sigma)
    X = np.vstack([b.feature_matrix for b in aug])
    res = optimize.minimize(_mean_map_risk_grad, np.zeros(X.shape[1]),
                            args=(X, mu, gamma), jac=True, method="L-BFGS-B",
                            options={"gtol": 1e-8, "maxiter": 1000})
    linear = LinearModel(res.x[:-1].copy(), float(res.x[-1]))
    model = MeanMapModel(linear, mu, mu_i, mu_plus, mu_minus, sizes)
    return _finish(spec, model, None, bags)


# ---------------------------------------------------------------------------
# Threshold fitting and prediction


def fit_instance_threshold(probs_fn, bags) -> float:
    """Grid value minimizing the bag-extent MAE on the training bags.

    probs_fn maps a feature matrix to instance probabilities. Ties break
    toward the smallest threshold.
    """
    _require_labels(bags, "extent")
    per_bag = [np.asarray(probs_fn(b.feature_matrix), dtype=float) for b in bags]
    z = np.array([b.extent for b in bags])
    maes = np.empty(len(THRESHOLD_GRID))
    for i, t in enumerate(THRESHOLD_GRID):
        extents = np.array([np.mean(p > t) for p in per_bag])
        maes[i] = np.mean(np.abs(extents - z))
    return float(THRESHOLD_GRID[int(np.argmin(maes))])


def predict_extent(trained: TrainedBagModel, bag: Bag) -> float:
    """Fraction of instances whose probability exceeds the fitted threshold."""
    probs = trained.instance_probs(bag.feature_matrix)
    return float(np.mean(threshold_instances(probs, trained.instance_threshold)))


def _finish(spec, model, pca, bags) -> TrainedBagModel:
    partial = TrainedBagModel(spec, model, pca, 0.0)
    if all(b.extent is not None for b in bags):
        t = fit_instance_threshold(partial.instance_probs, bags)
    else:
        t = 0.5
    return TrainedBagModel(spec, model, pca, t)


def train(spec: WeakClassifierSpec, bags) -> TrainedBagModel:
    """Train any of the nine classifiers on labeled bags."""
    bags = list(bags)
    if not bags:
        raise BagwiseError("train: no bags")
    if spec.name in ("log", "svm", "beta"):
        return train_simple(spec, bags)
    if spec.name in ("milog", "misvm"):
        return train_relabel_mil(spec, bags)
    if spec.name in ("plog", "psvm"):
        return train_relabel_llp(spec, bags)
    if spec.name == "cms":
        return train_cms(spec, bags)
    if spec.name == "lmm":
        return train_lmm(spec, bags)
    raise BagwiseError(f"unknown classifier {spec.name!r}")
