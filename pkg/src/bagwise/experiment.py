"""Grid search with bag-level cross validation and the full benchmark run."""

from __future__ import annotations

import hashlib
import itertools

import numpy as np
from joblib import Parallel, delayed

from .bagcore import BagDataset, BagwiseError, attach_labels, split_dataset
from .evalstats import (
    RatingTable,
    extent_to_interval,
    icc_two_way_agreement,
    nemenyi_test,
    overall_agreement,
    specific_agreement,
    stability_report,
)
from .weak import TrainedBagModel, WeakClassifierSpec, train

# Hyperparameter grids used for model selection (SVM cost/kernel grids,
# proportion-mismatch weights, cluster counts and mean-map penalties).
_SVM_GRID = ([{"kernel": "linear", "C": c} for c in (0.1, 1.0, 10.0, 100.0)]
             + [{"kernel": "rbf", "C": c, "gamma": g}
                for c in (0.1, 1.0, 10.0, 100.0) for g in (0.1, 1.0)])

DEFAULT_GRIDS = {
    "log": [{"pca": False}, {"pca": True, "pca_reduce": True}],
    "svm": _SVM_GRID,
    "milog": [{}],
    "misvm": _SVM_GRID,
    "beta": [{"pca": True, "pca_reduce": False}, {"pca": True, "pca_reduce": True}],
    "plog": [{}],
    "psvm": [dict(g, C2=c2) for g in _SVM_GRID for c2 in (1.0, 10.0, 100.0, 1000.0)],
    "cms": [{"k": k} for k in range(10, 101, 10)],
    "lmm": [{"lam": l, "gamma": g, "sigma": s}
            for l in (0.0, 1.0, 10.0, 100.0)
            for g in (1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)
            for s in (0.001, 0.01, 0.1, 0.125, 0.25, 0.5, 1.0)],
}


def default_grid(method: str) -> list[dict]:
    if method not in DEFAULT_GRIDS:
        raise BagwiseError(f"no default grid for {method!r}")
    return [dict(g) for g in DEFAULT_GRIDS[method]]


def cv_fold(seed: int, bag_id: str, n_folds: int) -> int:
    """Stable fold assignment, a function of (seed, bag_id) only."""
    digest = hashlib.blake2b(f"{seed}:{bag_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") % n_folds


def _extent_mae(model: TrainedBagModel, bags) -> float:
    errs = [abs(model.predict_extent(b) - b.extent) for b in bags]
    return float(np.mean(errs))


def _score_grid_point(method, hp, folds, seed):
    maes = []
    for train_bags, val_bags in folds:
        try:
            model = train(WeakClassifierSpec(method, hp, seed), train_bags)
        except BagwiseError:
            return float("inf")
        maes.append(_extent_mae(model, val_bags))
    return float(np.mean(maes))


def run_grid_search(method: str, train_bags, grid=None, cv_folds: int = 2,
                    seed: int = 0, jobs: int = 1):
    """Pick hyperparameters by bag-level CV extent MAE, then refit on all bags.

    Ties break toward the earlier grid point. Returns (chosen
    hyperparameters, TrainedBagModel fitted on all training bags).
    """
    train_bags = list(train_bags)
    if grid is None:
        grid = default_grid(method)
    grid = [dict(g) for g in grid]
    if not grid:
        raise BagwiseError("run_grid_search: empty grid")

    if len(grid) == 1:
        chosen = grid[0]
    else:
        fold_of = {b.id: cv_fold(seed, b.id, cv_folds) for b in train_bags}
        folds = []
        for f in range(cv_folds):
            tr = [b for b in train_bags if fold_of[b.id] != f]
            va = [b for b in train_bags if fold_of[b.id] == f]
            if tr and va:
                folds.append((tr, va))
        scores = Parallel(n_jobs=jobs)(
            delayed(_score_grid_point)(method, hp, folds, seed) for hp in grid)
        chosen = grid[int(np.argmin(scores))]
    model = train(WeakClassifierSpec(method, chosen, seed), train_bags)
    return chosen, model


def _random_extents(bag_ids, sizes, seed):
    """Crippled baseline: uniform instance probabilities, threshold 0.5."""
    rng = np.random.default_rng(seed)
    out = {}
    for bag_id, n in zip(bag_ids, sizes):
        out[bag_id] = float(np.mean(rng.random(n) > 0.5))
    return out


def run_experiment(dataset: BagDataset, extents: dict, methods,
                   n_reps: int = 3, n_train: int = 400, n_test: int = 200,
                   seed: int = 0, grids: dict | None = None, cv_folds: int = 2,
                   jobs: int = 1, assessments=None, alpha: float = 0.05,
                   include_random_baseline: bool = False) -> dict:
    """Split, tune, train, predict and evaluate every requested classifier.

    Returns one report bundle with per-replication ICCs, rater agreement,
    Friedman/Nemenyi ranking over pooled test predictions and
    cross-replication label stability.
    """
    labeled = attach_labels(dataset, extents)
    plans = split_dataset(labeled, n_reps, n_train, n_test, seed)
    all_test_ids = sorted(set(itertools.chain.from_iterable(p.test_ids for p in plans)))
    all_test = [labeled.bag(b) for b in all_test_ids]

    per_rater = {}
    if assessments:
        for a in assessments:
            per_rater.setdefault(a.rater_id, {})[a.bag_id] = a.interval

    report = {
        "seed": seed,
        "methods": list(methods),
        "splits": [{"replication": p.replication_id,
                    "n_train": len(p.train_ids), "n_test": len(p.test_ids)}
                   for p in plans],
        "chosen_hyperparameters": {},
        "instance_thresholds": {},
        "icc": {},
        "agreement_with_raters": {},
        "stability": {},
    }

    # predicted extents on the own test set, per method then replication
    own_preds: dict[str, list[dict]] = {m: [] for m in methods}
    # predictions over the union of test bags, for stability
    union_bag_iv: dict[str, list[dict]] = {m: [] for m in methods}
    union_inst: dict[str, list[dict]] = {m: [] for m in methods}

    for plan in plans:
        train_bags = [labeled.bag(b) for b in plan.train_ids]
        rep_seed = seed + plan.replication_id
        for method in methods:
            grid = grids.get(method) if grids else None
            chosen, model = run_grid_search(method, train_bags, grid=grid,
                                            cv_folds=cv_folds, seed=rep_seed,
                                            jobs=jobs)
            report["chosen_hyperparameters"].setdefault(method, []).append(chosen)
            report["instance_thresholds"].setdefault(method, []).append(
                model.instance_threshold)
            own_preds[method].append(
                {b: model.predict_extent(labeled.bag(b)) for b in plan.test_ids})
            bag_iv, inst = {}, {}
            for bag in all_test:
                probs = model.instance_probs(bag.feature_matrix)
                labels = (probs > model.instance_threshold).astype(int)
                bag_iv[bag.id] = extent_to_interval(float(np.mean(labels)))
                for i, lab in zip(bag.instances, labels):
                    inst[i.id] = int(lab)
            union_bag_iv[method].append(bag_iv)
            union_inst[method].append(inst)

    # ICC per replication: reference vs predicted extent over the test bags
    for method in methods:
        iccs = []
        for plan, preds in zip(plans, own_preds[method]):
            mat = np.array([[extents[b], preds[b]] for b in plan.test_ids])
            iccs.append(icc_two_way_agreement(mat).icc)
        report["icc"][method] = {"per_replication": iccs,
                                 "mean": float(np.mean(iccs))}

    # agreement with each rater on the six intervals, averaged over
    # raters and replications
    if per_rater:
        for method in methods:
            per_iv_acc: dict[str, list] = {}
            overall_acc = []
            for plan, preds in zip(plans, own_preds[method]):
                for rater_ivs in per_rater.values():
                    cases = tuple(
                        (extent_to_interval(preds[b]), rater_ivs[b])
                        for b in plan.test_ids if b in rater_ivs)
                    table = RatingTable(cases)
                    overall_acc.append(overall_agreement(table))
                    for iv in set(l for case in cases for l in case):
                        try:
                            per_iv_acc.setdefault(iv.label, []).append(
                                specific_agreement(table, iv))
                        except BagwiseError:
                            pass
            report["agreement_with_raters"][method] = {
                "overall": float(np.mean(overall_acc)),
                "per_interval": {k: float(np.mean(v))
                                 for k, v in sorted(per_iv_acc.items())},
            }

    # ranking over pooled test predictions
    rank_methods = list(methods)
    errors = []
    for method in methods:
        merged = {}
        for preds in own_preds[method]:
            merged.update(preds)
        errors.append([abs(merged[b] - extents[b]) for b in all_test_ids])
    if include_random_baseline:
        rand = _random_extents(all_test_ids,
                               [len(labeled.bag(b)) for b in all_test_ids],
                               seed + 10_000)
        errors.append([abs(rand[b] - extents[b]) for b in all_test_ids])
        rank_methods.append("random")
    E = np.array(errors).T
    if E.shape[1] >= 2 and E.shape[0] >= 2:
        from .evalstats import rank_errors
        result = nemenyi_test(rank_errors(E), alpha=alpha)
        report["ranking"] = {
            "classifiers": rank_methods,
            "friedman_statistic": result.friedman_statistic,
            "p_value": result.p_value,
            "mean_ranks": [float(r) for r in result.mean_ranks],
            "critical_difference": result.critical_difference,
            "groups": [[rank_methods[i] for i in g] for g in result.groups],
        }

    for method in methods:
        report["stability"][method] = stability_report(
            union_bag_iv[method], union_inst[method])
    return report
