"""Command-line entry point wiring feature extraction, synthesis, training,
prediction and evaluation.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
JSON artifacts embed the run configuration and seed that produced them; CSV
artifacts get a `<name>.meta.json` sidecar with the same record.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bagcore, evalstats, experiment, features, serialize, synth
from .bagcore import BagwiseError


class ConfigError(Exception):
    pass


def _jobs(args) -> int:
    env = os.environ.get("BAGWISE_JOBS")
    if env:
        return int(env)
    return getattr(args, "jobs", 1)


def _run_config(args) -> dict:
    skip = {"func"}
    return {k: (list(v) if isinstance(v, tuple) else v)
            for k, v in sorted(vars(args).items()) if k not in skip}


def _write_json(path, payload, args) -> None:
    payload = dict(payload)
    payload["run_config"] = _run_config(args)
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _write_meta(csv_path, args) -> None:
    Path(str(csv_path) + ".meta.json").write_text(
        json.dumps({"run_config": _run_config(args)}, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_features_extract(args):
    volume = features.load_volume(args.volume)
    mask = features.load_mask(args.mask)
    scales = tuple(float(s) for s in args.scales.split(","))
    config = features.FilterBankConfig(scales=scales, bins=args.bins)
    edges = features.load_edges(args.edges)
    X = features.extract_bag_features(volume, mask, config, edges,
                                      args.patches, args.side_mm, args.seed)
    bag_id = args.bag_id or Path(args.volume).stem
    instances = tuple(bagcore.Instance(f"{bag_id}:p{i:04d}", X[i])
                      for i in range(len(X)))
    dataset = bagcore.BagDataset((bagcore.Bag(bag_id, instances),), X.shape[1])
    bagcore.save_bags_csv(dataset, args.out)
    _write_meta(args.out, args)


def cmd_features_fit_edges(args):
    scales = tuple(float(s) for s in args.scales.split(","))
    config = features.FilterBankConfig(scales=scales, bins=args.bins)
    pooled = None
    for vol_path, mask_path in zip(args.volume, args.mask):
        volume = features.load_volume(vol_path)
        mask = features.load_mask(mask_path)
        per_channel = features.pool_patch_responses(
            volume, mask, config, args.patches, args.side_mm, args.seed)
        if pooled is None:
            pooled = [[c] for c in per_channel]
        else:
            for acc, c in zip(pooled, per_channel):
                acc.append(c)
    if pooled is None:
        raise ConfigError("fit-edges: no volumes given")
    samples = [np.concatenate(acc) for acc in pooled]
    edges = features.fit_quantile_edges(samples, config)
    features.save_edges(edges, args.out)


def cmd_synth_generate(args):
    config_kwargs = {}
    if args.config:
        config_kwargs = json.loads(Path(args.config).read_text())
    config_kwargs["seed"] = args.seed
    config = synth.SynthConfig(**config_kwargs)
    dataset, truth = synth.generate_dataset(config)
    bagcore.save_bags_csv(dataset, args.out_bags)
    _write_meta(args.out_bags, args)
    if args.raters > 0:
        assessments = synth.simulate_raters(truth, config.rater_confusion,
                                            args.raters, args.seed + 1)
        bagcore.save_rater_labels_csv(assessments, args.out_labels)
    else:
        bagcore.save_extent_labels_csv(
            {b: truth.bag_extents[b] for b in sorted(truth.bag_extents)},
            args.out_labels)
    _write_meta(args.out_labels, args)
    if args.out_truth:
        import csv as _csv
        with open(args.out_truth, "w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["bag_id", "instance_id", "label", "extent"])
            for bag in dataset.bags:
                for inst in bag.instances:
                    writer.writerow([bag.id, inst.id, inst.true_label,
                                     repr(float(truth.bag_extents[bag.id]))])
        _write_meta(args.out_truth, args)


def cmd_train(args):
    dataset = bagcore.load_bags_csv(args.train)
    extents = bagcore.load_labels_csv(args.labels)
    labeled = bagcore.attach_labels(dataset, extents)
    bags = [b for b in labeled.bags if b.extent is not None]
    if not bags:
        raise BagwiseError("no labeled training bags")
    grid = None
    if args.grid:
        grid = json.loads(Path(args.grid).read_text())
    chosen, model = experiment.run_grid_search(
        args.method, bags, grid=grid, cv_folds=args.cv_folds,
        seed=args.seed, jobs=_jobs(args))
    serialize.save_model(model, args.out)


def cmd_predict(args):
    model = serialize.load_model(args.model)
    dataset = bagcore.load_bags_csv(args.bags)
    rows = serialize.predict_dataset(model, dataset)
    serialize.save_predictions(rows, args.out)
    _write_meta(args.out, args)


def cmd_evaluate(args):
    pred_extents, _ = serialize.load_predictions(args.pred)
    ref = bagcore.load_labels_csv(args.labels)
    common = sorted(set(pred_extents) & set(ref))
    if len(common) < 2:
        raise BagwiseError("need at least 2 bags shared by predictions and labels")
    mat = np.array([[ref[b], pred_extents[b]] for b in common])
    icc = evalstats.icc_two_way_agreement(mat).icc
    mae = float(np.mean(np.abs(mat[:, 1] - mat[:, 0])))
    cases = tuple((evalstats.extent_to_interval(ref[b]),
                   evalstats.extent_to_interval(pred_extents[b])) for b in common)
    table = evalstats.RatingTable(cases)
    per_interval = {}
    prevalence = {}
    for iv in bagcore.ExtentInterval:
        try:
            per_interval[iv.label] = evalstats.specific_agreement(table, iv)
        except BagwiseError:
            per_interval[iv.label] = None
        prevalence[iv.label] = evalstats.prevalence(table, iv)
    _write_json(args.out, {
        "n_bags": len(common),
        "icc": icc,
        "mae": mae,
        "overall_agreement": evalstats.overall_agreement(table),
        "per_interval_agreement": per_interval,
        "prevalence": prevalence,
    }, args)


def cmd_rank(args):
    ref = bagcore.load_labels_csv(args.labels)
    all_extents = []
    for path in args.pred:
        extents, _ = serialize.load_predictions(path)
        all_extents.append(extents)
    common = sorted(set(ref).intersection(*[set(e) for e in all_extents]))
    if len(common) < 2:
        raise BagwiseError("need at least 2 bags shared by all prediction files")
    E = np.array([[abs(e[b] - ref[b]) for e in all_extents] for b in common])
    result = evalstats.nemenyi_test(evalstats.rank_errors(E), alpha=args.alpha)
    names = [Path(p).stem for p in args.pred]
    _write_json(args.out, {
        "classifiers": names,
        "n_samples": len(common),
        "friedman_statistic": result.friedman_statistic,
        "p_value": result.p_value,
        "mean_ranks": [float(r) for r in result.mean_ranks],
        "critical_difference": result.critical_difference,
        "alpha": args.alpha,
        "significant": [[bool(v) for v in row] for row in result.significant],
        "groups": [[names[i] for i in g] for g in result.groups],
    }, args)


def cmd_stability(args):
    bag_iv, inst = [], []
    for path in args.pred:
        extents, rows = serialize.load_predictions(path)
        bag_iv.append({b: evalstats.extent_to_interval(e)
                       for b, e in extents.items()})
        inst.append({inst_id: label for _, inst_id, _, label in rows})
    report = evalstats.stability_report(bag_iv, inst)
    _write_json(args.out, report, args)


def cmd_experiment(args):
    config = json.loads(Path(args.config).read_text())
    dataset = bagcore.load_bags_csv(config["bags"])
    extents = bagcore.load_labels_csv(config["labels"])
    assessments = None
    if config.get("raters"):
        assessments = bagcore.load_rater_assessments_csv(config["raters"])
    report = experiment.run_experiment(
        dataset, extents,
        methods=config.get("methods", list(experiment.DEFAULT_GRIDS)),
        n_reps=config.get("n_reps", 3),
        n_train=config["n_train"], n_test=config["n_test"],
        seed=args.seed, grids=config.get("grids"),
        cv_folds=config.get("cv_folds", 2), jobs=_jobs(args),
        assessments=assessments, alpha=config.get("alpha", 0.05),
        include_random_baseline=config.get("include_random_baseline", False))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "report.json", report, args)
    _write_csv_tables(report, out_dir)


def _write_csv_tables(report, out_dir: Path) -> None:
    import csv as _csv
    with open(out_dir / "icc.csv", "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["classifier", "rep1", "rep2", "rep3", "mean"])
        for method, row in report["icc"].items():
            reps = row["per_replication"]
            writer.writerow([method] + [repr(v) for v in reps]
                            + [repr(row["mean"])])
    with open(out_dir / "stability.csv", "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        ivs = [iv.label for iv in bagcore.ExtentInterval]
        writer.writerow(["classifier"] + ivs + ["Overall", "E", "NE"])
        for method, row in report["stability"].items():
            vals = [row["per_interval"].get(iv) for iv in ivs]
            vals += [row.get("overall"), row.get("E"), row.get("NE")]
            writer.writerow([method] + ["" if v is None else repr(v) for v in vals])


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bagwise")
    sub = parser.add_subparsers(dest="command", required=True)

    feat = sub.add_parser("features", help="volume feature extraction")
    feat_sub = feat.add_subparsers(dest="subcommand", required=True)
    fx = feat_sub.add_parser("extract", help="extract one bag's features")
    fx.add_argument("--volume", required=True)
    fx.add_argument("--mask", required=True)
    fx.add_argument("--patches", type=int, default=100)
    fx.add_argument("--side-mm", type=float, default=11.0)
    fx.add_argument("--bins", type=int, default=16)
    fx.add_argument("--scales", default="1,2,4")
    fx.add_argument("--seed", type=int, required=True)
    fx.add_argument("--edges", required=True)
    fx.add_argument("--bag-id", default=None)
    fx.add_argument("--out", required=True)
    fx.set_defaults(func=cmd_features_extract)
    fe = feat_sub.add_parser("fit-edges", help="fit quantile edges on training volumes")
    fe.add_argument("--volume", action="append", required=True)
    fe.add_argument("--mask", action="append", required=True)
    fe.add_argument("--patches", type=int, default=100)
    fe.add_argument("--side-mm", type=float, default=11.0)
    fe.add_argument("--bins", type=int, default=16)
    fe.add_argument("--scales", default="1,2,4")
    fe.add_argument("--seed", type=int, required=True)
    fe.add_argument("--out", required=True)
    fe.set_defaults(func=cmd_features_fit_edges)

    sy = sub.add_parser("synth", help="synthetic bag data")
    sy_sub = sy.add_subparsers(dest="subcommand", required=True)
    sg = sy_sub.add_parser("generate")
    sg.add_argument("--config", default=None)
    sg.add_argument("--seed", type=int, required=True)
    sg.add_argument("--raters", type=int, default=0,
                    help="simulate this many raters instead of exact extents")
    sg.add_argument("--out-bags", required=True)
    sg.add_argument("--out-labels", required=True)
    sg.add_argument("--out-truth", default=None)
    sg.set_defaults(func=cmd_synth_generate)

    tr = sub.add_parser("train", help="grid-search and train one classifier")
    tr.add_argument("--method", required=True, choices=sorted(experiment.DEFAULT_GRIDS))
    tr.add_argument("--train", required=True)
    tr.add_argument("--labels", required=True)
    tr.add_argument("--grid", default=None)
    tr.add_argument("--cv-folds", type=int, default=2)
    tr.add_argument("--seed", type=int, required=True)
    tr.add_argument("--jobs", type=int, default=1)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict")
    pr.add_argument("--model", required=True)
    pr.add_argument("--bags", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    ev = sub.add_parser("evaluate")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--labels", required=True)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_evaluate)

    rk = sub.add_parser("rank")
    rk.add_argument("--pred", nargs="+", required=True)
    rk.add_argument("--labels", required=True)
    rk.add_argument("--alpha", type=float, default=0.05)
    rk.add_argument("--out", required=True)
    rk.set_defaults(func=cmd_rank)

    st = sub.add_parser("stability")
    st.add_argument("--pred", nargs="+", required=True)
    st.add_argument("--out", required=True)
    st.set_defaults(func=cmd_stability)

    ex = sub.add_parser("experiment", help="full multi-classifier benchmark")
    ex.add_argument("--config", required=True)
    ex.add_argument("--seed", type=int, required=True)
    ex.add_argument("--jobs", type=int, default=1)
    ex.add_argument("--out-dir", required=True)
    ex.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        args.func(args)
    except (ConfigError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (BagwiseError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
