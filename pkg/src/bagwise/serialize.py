"""JSON round-tripping of trained models and prediction CSV files."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .bagcore import BagwiseError
from .learners import (
    BetaModel,
    KMeansModel,
    LinearModel,
    PcaTransform,
    PlattCalibration,
    SvmModel,
)
from .weak import ClusterLabeling, MeanMapModel, TrainedBagModel, WeakClassifierSpec


def _arr(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _model_params(model) -> dict:
    if isinstance(model, BetaModel):
        return {"type": "beta", "weights": _arr(model.weights),
                "bias": model.bias, "precision": model.precision}
    if isinstance(model, LinearModel):
        return {"type": "linear", "weights": _arr(model.weights), "bias": model.bias}
    if isinstance(model, SvmModel):
        return {"type": "svm", "kernel": model.kernel, "C": model.C,
                "gamma": model.gamma,
                "support_vectors": _arr(model.support_vectors),
                "dual_coef": _arr(model.dual_coef),
                "intercept": model.intercept,
                "calibration": None if model.calibration is None else
                {"A": model.calibration.A, "B": model.calibration.B}}
    if isinstance(model, ClusterLabeling):
        return {"type": "cluster", "centroids": _arr(model.clusters.centroids),
                "cluster_labels": [int(v) for v in model.cluster_labels]}
    if isinstance(model, MeanMapModel):
        return {"type": "meanmap", "weights": _arr(model.linear.weights),
                "bias": model.linear.bias, "mu": _arr(model.mu),
                "bag_means": _arr(model.bag_means),
                "bag_means_pos": _arr(model.bag_means_pos),
                "bag_means_neg": _arr(model.bag_means_neg),
                "bag_sizes": _arr(model.bag_sizes)}
    raise BagwiseError(f"cannot serialize model type {type(model).__name__}")


def _model_from_params(params: dict):
    kind = params["type"]
    if kind == "beta":
        return BetaModel(np.asarray(params["weights"]), params["bias"],
                         params["precision"])
    if kind == "linear":
        return LinearModel(np.asarray(params["weights"]), params["bias"])
    if kind == "svm":
        cal = params.get("calibration")
        sv = np.asarray(params["support_vectors"], dtype=float)
        dual = np.asarray(params["dual_coef"], dtype=float)
        lw = sv.T @ dual if params["kernel"] == "linear" else None
        return SvmModel(params["kernel"], params["C"], params["gamma"], sv, dual,
                        params["intercept"],
                        None if cal is None else PlattCalibration(cal["A"], cal["B"]),
                        lw)
    if kind == "cluster":
        return ClusterLabeling(KMeansModel(np.asarray(params["centroids"], dtype=float)),
                               np.asarray(params["cluster_labels"], dtype=int))
    if kind == "meanmap":
        linear = LinearModel(np.asarray(params["weights"]), params["bias"])
        return MeanMapModel(linear, np.asarray(params["mu"]),
                            np.asarray(params["bag_means"]),
                            np.asarray(params["bag_means_pos"]),
                            np.asarray(params["bag_means_neg"]),
                            np.asarray(params["bag_sizes"]))
    raise BagwiseError(f"unknown serialized model type {kind!r}")


def model_to_dict(trained: TrainedBagModel) -> dict:
    doc = {
        "classifier": trained.spec.name,
        "hyperparameters": trained.spec.hyperparameters,
        "seed": trained.spec.seed,
        "preprocessing": {},
        "params": _model_params(trained.model),
        "instance_threshold": trained.instance_threshold,
    }
    if trained.preprocessing is not None:
        p = trained.preprocessing
        doc["preprocessing"]["pca"] = {
            "mean": _arr(p.mean), "components": _arr(p.components),
            "stddevs": _arr(p.stddevs), "reduce": bool(p.reduce)}
    return doc


def model_from_dict(doc: dict) -> TrainedBagModel:
    spec = WeakClassifierSpec(doc["classifier"], doc.get("hyperparameters", {}),
                              doc.get("seed", 0))
    pca = None
    if doc.get("preprocessing", {}).get("pca"):
        p = doc["preprocessing"]["pca"]
        pca = PcaTransform(np.asarray(p["mean"]), np.asarray(p["components"]),
                           np.asarray(p["stddevs"]), bool(p["reduce"]))
    return TrainedBagModel(spec, _model_from_params(doc["params"]), pca,
                           doc["instance_threshold"])


def save_model(trained: TrainedBagModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(trained), sort_keys=True))


def load_model(path) -> TrainedBagModel:
    return model_from_dict(json.loads(Path(path).read_text()))


def save_predictions(rows, path) -> None:
    """Write `bag_id,extent,instance_id,prob,label` rows.

    rows: iterable of (bag_id, extent, instance_id, prob, label).
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bag_id", "extent", "instance_id", "prob", "label"])
        for bag_id, extent, inst_id, prob, label in rows:
            writer.writerow([bag_id, repr(float(extent)), inst_id,
                             repr(float(prob)), int(label)])


def load_predictions(path):
    """Read a prediction file: (bag extents dict, instance rows list)."""
    extents: dict[str, float] = {}
    instances = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["bag_id", "extent", "instance_id", "prob", "label"]:
            raise BagwiseError(f"{path}: unexpected prediction header {header}")
        for row in reader:
            if not row:
                continue
            extents[row[0]] = float(row[1])
            instances.append((row[0], row[2], float(row[3]), int(row[4])))
    return extents, instances


def predict_dataset(trained: TrainedBagModel, dataset):
    """Prediction rows for every instance of every bag, in dataset order."""
    rows = []
    for bag in dataset.bags:
        probs = trained.instance_probs(bag.feature_matrix)
        labels = (probs > trained.instance_threshold).astype(int)
        extent = float(np.mean(labels))
        for inst, prob, label in zip(bag.instances, probs, labels):
            rows.append((bag.id, extent, inst.id, float(prob), int(label)))
    return rows
