"""Command-line driver: synth -> train -> eval, plus map classification and diagnostics.

Run layout under ``--out``::

    config.json, scene.json
    trial_XX/{labeled,unlabeled,test}.csv, unlabeled_truth.csv, test_family.csv
    trial_XX/som/...                 SOM weights, node stats, sigmoids (spectra+som runs)
    trial_XX/models/<type>/model.*   checkpoint + loss.csv
    eval/summary.json, eval/table.csv, eval/<type>/*.csv (+ *.svg with --plots)
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import evaluation as ev
from .config import RunConfig
from .core import DataError, DimensionError, load_csv, save_csv
from .experiment import fit_som_features, train_model, trial_seeds
from .gradcheck import run_suite
from .membership import load_feature_map, save_feature_map
from .nn import DivergenceError
from .som import bmu_histogram, save_histogram_csv
from .ssgan import MODEL_TYPES, ConfigError, inlier_class, load_model, outlier_probability, save_model
from .synth import ExperimentSplit, make_split, save_scene

log = logging.getLogger("somgan")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_DIVERGENCE = 5
EXIT_IO = 6
EXIT_CHECK_FAILED = 7


class MissingInputError(DataError):
    pass


# -- paths and split I/O -----------------------------------------------------------

def trial_dir(out, t):
    return os.path.join(out, f"trial_{t:02d}")


def model_prefix(out, t, model_type):
    return os.path.join(trial_dir(out, t), "models", model_type, "model")


def _write_column(path, name, values):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([name])
        w.writerows([[v] for v in values])


def _read_column(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [r[0] for r in list(csv.reader(fh))[1:]]


def write_split(directory, split: ExperimentSplit):
    os.makedirs(directory, exist_ok=True)
    save_csv(os.path.join(directory, "labeled.csv"), split.labeled)
    save_csv(os.path.join(directory, "unlabeled.csv"), split.unlabeled)
    save_csv(os.path.join(directory, "test.csv"), split.test)
    _write_column(os.path.join(directory, "unlabeled_truth.csv"), "label", [int(v) for v in split.unlabeled_truth])
    _write_column(os.path.join(directory, "test_family.csv"), "family", split.test_family)


def read_split(directory, class_count, counts, seed) -> ExperimentSplit:
    names = ("labeled.csv", "unlabeled.csv", "test.csv", "unlabeled_truth.csv", "test_family.csv")
    for n in names:
        if not os.path.exists(os.path.join(directory, n)):
            raise MissingInputError(f"{directory}: missing {n}; run `synth` first")
    lab, unl, test = (load_csv(os.path.join(directory, n), class_count) for n in names[:3])
    truth = np.array([int(v) for v in _read_column(os.path.join(directory, names[3]))])
    fam = np.array(_read_column(os.path.join(directory, names[4])))
    return ExperimentSplit(lab, unl, truth, test, fam, seed, counts)


def _load_split(cfg: RunConfig, t):
    return read_split(trial_dir(cfg.out, t), cfg.scene.class_count, cfg.counts, trial_seeds(cfg.seed, t)["split"])


def _pool_map(fn, args, jobs):
    if jobs <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*args)))


# -- synth ---------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "config.json"), "w", encoding="utf-8") as fh:
        # the output location is not part of the experiment, so reruns elsewhere stay byte-identical
        tree = {k: v for k, v in cfg.tree.items() if k != "out"}
        fh.write(json.dumps(tree, indent=2, sort_keys=True) + "\n")
    scene = cfg.scene
    save_scene(os.path.join(cfg.out, "scene.json"), scene)
    for t in range(cfg.trials):
        split = make_split(scene, cfg.counts, trial_seeds(cfg.seed, t)["split"])
        write_split(trial_dir(cfg.out, t), split)
    log.info("wrote %d trial directories under %s", cfg.trials, cfg.out)
    return EXIT_OK


# -- train ---------------------------------------------------------------------------

def _som_dir(out, t):
    return os.path.join(trial_dir(out, t), "som")


def _ensure_feature_map(cfg: RunConfig, t, split):
    d = _som_dir(cfg.out, t)
    if os.path.exists(os.path.join(d, "manifest.json")):
        return load_feature_map(d)
    fmap, trace = fit_som_features(split, cfg.pipeline, trial_seeds(cfg.seed, t)["som"])
    save_feature_map(d, fmap, trace)
    return fmap


def _write_loss_trace(path, hist):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "supervised", "unsupervised", "feature_matching"])
        cols = (hist.supervised, hist.unsupervised, hist.feature_matching)
        # supervised-only runs leave the GAN columns empty
        for i in range(len(hist.supervised)):
            w.writerow([i] + [repr(float(c[i])) if i < len(c) else "" for c in cols])


def _train_trial(tree, t, model_types):
    cfg = RunConfig(tree)
    split = _load_split(cfg, t)
    fmap = None
    if any(MODEL_TYPES[m][1] == "spectra+som" for m in model_types):
        fmap = _ensure_feature_map(cfg, t, split)
    for m in model_types:
        try:
            model, hist = train_model(split, m, cfg.pipeline, trial_seeds(cfg.seed, t)["gan"], fmap)
        except DivergenceError as e:
            raise DivergenceError(f"trial {t}, {m}: {e}") from None
        prefix = model_prefix(cfg.out, t, m)
        os.makedirs(os.path.dirname(prefix), exist_ok=True)
        save_model(prefix, model, {"model_type": m, "trial": t})
        _write_loss_trace(os.path.join(os.path.dirname(prefix), "loss.csv"), hist)
    return t


def cmd_train(cfg: RunConfig, args) -> int:
    _pool_map(_train_trial, [(cfg.tree, t, cfg.model_types) for t in range(cfg.trials)], cfg.jobs)
    log.info("trained %s on %d trials", ", ".join(cfg.model_types), cfg.trials)
    return EXIT_OK


# -- eval ----------------------------------------------------------------------------

def _load_trained(cfg: RunConfig, t, m):
    prefix = model_prefix(cfg.out, t, m)
    if not os.path.exists(prefix + ".json"):
        raise MissingInputError(f"missing checkpoint {prefix}; run `train` first")
    fmap = load_feature_map(_som_dir(cfg.out, t)) if MODEL_TYPES[m][1] == "spectra+som" else None
    return load_model(prefix, fmap)[0]


def _score_trial(tree, t, model_types):
    cfg = RunConfig(tree)
    split = _load_split(cfg, t)
    out = {}
    for m in model_types:
        logits = _load_trained(cfg, t, m).logits(split.test.X)
        out[m] = (outlier_probability(logits), inlier_class(logits), split.test.y)
    return out


def _svg_curves(path, grid, mean, lo, hi, ylabel):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:  # pragma: no cover - depends on the environment
        raise ConfigError("--plots needs matplotlib (pip install 'somgan[plots]')") from None
    matplotlib.rcParams["svg.hashsalt"] = "somgan"
    fig, ax = plt.subplots(figsize=(5, 4))
    for name in mean:
        ax.plot(grid, mean[name], label=name)
        ax.fill_between(grid, lo[name], hi[name], alpha=0.2)
    ax.set_xlabel("false-alarm rate")
    ax.set_ylabel(ylabel)
    ax.set_xlim(0, 1)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_eval(cfg: RunConfig, args) -> int:
    if cfg.trials < 2:
        raise ConfigError("evaluation needs at least 2 trials for confidence intervals")
    e = cfg.tree["eval"]
    grid = np.linspace(0.0, 1.0, e["grid_points"])
    per_trial = _pool_map(_score_trial, [(cfg.tree, t, cfg.model_types) for t in range(cfg.trials)], cfg.jobs)
    root = os.path.join(cfg.out, "eval")
    summaries = {}
    for m in cfg.model_types:
        os.makedirs(os.path.join(root, m), exist_ok=True)
        rocs, rels = [], []
        for t, scored in enumerate(per_trial):
            r, rel = ev.evaluate_scores(*scored[m])
            ev.save_roc_csv(os.path.join(root, m, f"roc_trial_{t:02d}.csv"), r)
            rocs.append(r)
            rels.append(rel)
        s = ev.summarize_trials(rocs, rels, grid, e["confidence"], e["max_fa"])
        ev.save_mean_roc_csv(os.path.join(root, m, "mean_roc.csv"), s)
        ev.save_reliability_csv(os.path.join(root, m, "reliability.csv"), s)
        summaries[m] = s
    ev.save_summary_json(os.path.join(root, "summary.json"), summaries)
    with open(os.path.join(root, "table.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "auc_mean", "auc_lo", "auc_hi", "top_rate_mean", "top_rate_lo", "top_rate_hi"])
        for m, s in summaries.items():
            d = s.to_dict()
            w.writerow([m, f"{d['auc_mean']:.4f}", f"{d['auc_ci'][0]:.4f}", f"{d['auc_ci'][1]:.4f}",
                        f"{d['top_rate_mean']:.4f}", f"{d['top_rate_ci'][0]:.4f}", f"{d['top_rate_ci'][1]:.4f}"])
    if args.plots:
        pick = lambda attr: {m: getattr(s, attr) for m, s in summaries.items()}
        _svg_curves(os.path.join(root, "roc.svg"), grid, pick("detection_mean"), pick("detection_lo"),
                    pick("detection_hi"), "detection rate")
        _svg_curves(os.path.join(root, "reliability.svg"), grid, pick("accuracy_mean"), pick("accuracy_lo"),
                    pick("accuracy_hi"), "classification rate")
    for m, s in summaries.items():
        d = s.to_dict()
        print(f"{m:18s} AUC {d['auc_mean']:.3f} [{d['auc_ci'][0]:.3f}, {d['auc_ci'][1]:.3f}]  "
              f"top rate {d['top_rate_mean']:.3f} [{d['top_rate_ci'][0]:.3f}, {d['top_rate_ci'][1]:.3f}]")
    return EXIT_OK


# -- classify-map ----------------------------------------------------------------------

def load_spectra(path) -> np.ndarray:
    """Spectra from a CSV with a ``b0..`` header; a trailing label column is allowed and ignored."""
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if not header:
        raise DataError(f"{path}: empty file")
    if header[-1].strip() == "label":
        return load_csv(path).X
    X = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if X.shape[1] != len(header):
        raise DimensionError(f"{path}: rows have {X.shape[1]} values, header names {len(header)} bands")
    return X


def cmd_classify_map(cfg: RunConfig, args) -> int:
    try:
        raster = load_spectra(args.raster)
    except ValueError as e:
        raise DataError(f"{args.raster}: {e}") from None
    prefixes = [os.path.join(p, "model") if os.path.isdir(p) else p for p in (args.checkpoint or [])]
    if not prefixes:
        m = cfg.model_types[0]
        prefixes = [model_prefix(cfg.out, t, m) for t in range(cfg.trials)]
    calib = load_spectra(args.calibration) if args.calibration else None
    if args.tau is None and calib is None:
        raise ConfigError("classify-map needs --tau or --calibration outlier spectra for the reject-q policy")
    votes, K = [], None
    for prefix in prefixes:
        if not os.path.exists(prefix + ".json"):
            raise MissingInputError(f"missing checkpoint {prefix}")
        som_dir = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(prefix))), "som")
        with open(prefix + ".json", encoding="utf-8") as fh:
            uses_som = json.load(fh)["meta"]["train"]["features"] == "spectra+som"
        model, _ = load_model(prefix, load_feature_map(som_dir) if uses_som else None)
        if raster.shape[1] != model.bands:
            raise DimensionError(f"raster has {raster.shape[1]} bands, {prefix} expects {model.bands}")
        if K not in (None, model.n_classes):
            raise DataError(f"{prefix} has {model.n_classes} classes, earlier checkpoints have {K}")
        K = model.n_classes
        if args.tau is not None:
            tau = args.tau
        else:
            q = args.reject_q if args.reject_q is not None else cfg.tree["eval"]["reject_q"]
            tau = ev.threshold_for_outlier_rejection(model.outlier_score(calib), q)
        logits = model.logits(raster)
        votes.append(ev.decide(outlier_probability(logits), tau, inlier_class(logits)))
    V = np.stack(votes)
    final = ev.majority_vote(V, K)
    path = args.map_csv or os.path.join(cfg.out, "classify_map.csv")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pixel", "decision", "votes_outlier"] + [f"votes_{k}" for k in range(K)])
        for i in range(V.shape[1]):
            col = V[:, i]
            label = "outlier" if final[i] == ev.OUTLIER_VERDICT else str(int(final[i]))
            w.writerow([i, label, int((col == -1).sum())] + [int((col == k).sum()) for k in range(K)])
    log.info("wrote %s (%d pixels, %d models)", path, V.shape[1], V.shape[0])
    return EXIT_OK


# -- som-export ---------------------------------------------------------------------------

def _export_trial(tree, t):
    cfg = RunConfig(tree)
    split = _load_split(cfg, t)
    fmap = _ensure_feature_map(cfg, t, split)
    d = _som_dir(cfg.out, t)
    samples = {}
    for fam in np.unique(split.test_family):
        samples[str(fam)] = split.test.X[split.test_family == fam]
    for metric in ("euclidean", "dstar"):
        hist = bmu_histogram(fmap.grid, fmap.stats, samples, metric, fmap.angle_weight)
        save_histogram_csv(os.path.join(d, f"bmu_hist_{metric}.csv"), hist)
    with open(os.path.join(d, "max_membership.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["material", "mean_max_membership"])
        for name, X in samples.items():
            w.writerow([name, repr(float(fmap(X).max(axis=1).mean()))])
    return t


def cmd_som_export(cfg: RunConfig, args) -> int:
    _pool_map(_export_trial, [(cfg.tree, t) for t in range(cfg.trials)], cfg.jobs)
    return EXIT_OK


# -- grad-check ---------------------------------------------------------------------------

def cmd_grad_check(cfg: RunConfig, args) -> int:
    results = run_suite(cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "grad_check.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "max_relative_error", "tolerance", "passed"])
        for r in results:
            w.writerow([r.name, f"{r.error:.3e}", f"{r.tolerance:.0e}", int(r.passed)])
    for r in results:
        print(f"{'ok  ' if r.passed else 'FAIL'} {r.name:24s} {r.error:.2e} (< {r.tolerance:.0e})")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


# -- entry point ------------------------------------------------------------------------------

COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "classify-map": cmd_classify_map,
    "som-export": cmd_som_export,
    "grad-check": cmd_grad_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--trials", type=int, help="number of trials")
    common.add_argument("--jobs", type=int, help="worker processes (one trial each)")
    common.add_argument("--model-type", action="append", choices=list(MODEL_TYPES),
                        help="restrict to a model type (repeatable)")
    common.add_argument("--plots", action="store_true", help="also write SVG plots (eval)")
    common.add_argument("--out", help="run directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="somgan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "classify-map":
            sp.add_argument("--raster", required=True, help="CSV of spectra to classify")
            sp.add_argument("--checkpoint", action="append",
                            help="model directory or checkpoint prefix (repeatable)")
            sp.add_argument("--tau", type=float, help="fixed outlier threshold")
            sp.add_argument("--reject-q", type=float, help="target rejection fraction on --calibration")
            sp.add_argument("--calibration", help="CSV of known outlier spectra for the reject-q policy")
            sp.add_argument("--map-csv", help="decision CSV to write (default: <out>/classify_map.csv)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config, seed=args.seed, trials=args.trials, jobs=args.jobs,
                             out=args.out, model_types=args.model_type)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, DimensionError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
