import csv
import filecmp
import json
import os

import numpy as np
import pytest

from somgan import cli
from somgan import evaluation as ev
from somgan.nn import DivergenceError
from somgan.ssgan import MODEL_TYPES, inlier_class, load_model, outlier_probability

SMALL = {
    "synth": {"unlabeled_per_class": 40, "unlabeled_outliers": 120, "test_per_class": 30, "test_per_family": 15},
    "som": {"epochs": 4},
    "membership": {"epochs": 40},
    "ssgan": {"epochs": 2, "supervised_epochs": 3, "spec_widths": [32, 16], "som_widths": [32, 16],
              "gen_hidden": [32, 32]},
}


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


def pipeline(cfg, out, *extra):
    for cmd in ("synth", "train", "eval"):
        assert run(cmd, "--config", cfg, "--trials", 2, "--out", out, *extra) == 0
    return out


@pytest.fixture(scope="module")
def run_dir(small_config, tmp_path_factory):
    return pipeline(small_config, tmp_path_factory.mktemp("run") / "out", "--plots")


def trial_dirs(out):
    return sorted(d for d in os.listdir(out) if d.startswith("trial_"))


def test_synth_default_trial_count(small_config, tmp_path):
    assert run("synth", "--config", small_config, "--out", tmp_path) == 0
    assert len(trial_dirs(tmp_path)) == 20


def test_synth_trials_flag(small_config, tmp_path):
    assert run("synth", "--config", small_config, "--trials", 10, "--out", tmp_path) == 0
    assert trial_dirs(tmp_path) == [f"trial_{t:02d}" for t in range(10)]


def test_model_type_enumeration():
    assert list(MODEL_TYPES) == ["sup-spectra", "sup-spectra-som", "semi-spectra", "semi-spectra-som"]
    assert run("train", "--model-type", "semi-spectra-pca") == cli.EXIT_USAGE


def test_rerun_is_byte_identical(small_config, run_dir, tmp_path):
    again = pipeline(small_config, tmp_path / "again", "--plots")
    files = []
    for root, _, names in os.walk(run_dir):
        files += [os.path.relpath(os.path.join(root, n), run_dir) for n in names]
    assert any(f.endswith(".npz") for f in files) and any(f.endswith(".svg") for f in files)
    match, mismatch, errors = filecmp.cmpfiles(run_dir, again, files, shallow=False)
    assert not mismatch and not errors


def test_spectra_only_run_writes_no_som(small_config, tmp_path):
    assert run("synth", "--config", small_config, "--trials", 1, "--out", tmp_path) == 0
    assert run("train", "--config", small_config, "--trials", 1, "--out", tmp_path,
               "--model-type", "sup-spectra", "--model-type", "semi-spectra") == 0
    t = tmp_path / "trial_00"
    assert not (t / "som").exists()
    assert sorted(os.listdir(t / "models")) == ["semi-spectra", "sup-spectra"]


def test_som_artifacts_for_som_models(run_dir):
    som = run_dir / "trial_00" / "som"
    for name in ("weights.csv", "stats.npz", "sigmoids.csv", "sigmoid_loss.csv", "manifest.json"):
        assert (som / name).exists()


@pytest.mark.parametrize("model_type, epochs", [("sup-spectra", 3), ("semi-spectra-som", 2)])
def test_loss_trace_one_row_per_epoch(run_dir, model_type, epochs):
    with open(run_dir / "trial_01" / "models" / model_type / "loss.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "epoch"
    assert [int(r[0]) for r in rows[1:]] == list(range(epochs))


def test_summary_has_four_models_with_ci_pairs(run_dir):
    d = json.loads((run_dir / "eval" / "summary.json").read_text())
    assert sorted(d["models"]) == sorted(MODEL_TYPES)
    for entry in d["models"].values():
        for key in ("auc_ci", "top_rate_ci"):
            lo, hi = entry[key]
            assert lo <= hi
    with open(run_dir / "eval" / "table.csv") as fh:
        assert len(list(csv.reader(fh))) == 5


def test_svg_only_with_plots(small_config, run_dir, tmp_path):
    assert (run_dir / "eval" / "roc.svg").exists()
    out = tmp_path / "noplots"
    pipeline(small_config, out)
    assert not any(n.endswith(".svg") for _, _, names in os.walk(out) for n in names)


def test_single_trial_eval_rejected(small_config, run_dir):
    assert run("eval", "--config", small_config, "--trials", 1, "--out", run_dir) == cli.EXIT_CONFIG


def test_unknown_config_key(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"som": {"rows": 5, "colums": 5}}))
    assert run("synth", "--config", p, "--out", tmp_path) == cli.EXIT_CONFIG


def test_missing_inputs_are_data_errors(small_config, tmp_path):
    assert run("train", "--config", small_config, "--trials", 1, "--out", tmp_path) == cli.EXIT_DATA


def test_divergence_carries_trial_id(small_config, tmp_path, monkeypatch, capsys):
    assert run("synth", "--config", small_config, "--trials", 1, "--out", tmp_path) == 0

    def boom(*a, **k):
        raise DivergenceError("non-finite loss")

    monkeypatch.setattr(cli, "train_model", boom)
    code = run("train", "--config", small_config, "--trials", 1, "--out", tmp_path, "--model-type", "sup-spectra")
    assert code == cli.EXIT_DIVERGENCE
    assert "trial 0" in capsys.readouterr().err


def test_grad_check_command(tmp_path):
    assert run("grad-check", "--out", tmp_path) == 0
    with open(tmp_path / "grad_check.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(r["passed"] == "1" for r in rows)


def test_som_export_histograms(small_config, run_dir):
    assert run("som-export", "--config", small_config, "--trials", 2, "--out", run_dir) == 0
    for metric in ("euclidean", "dstar"):
        assert (run_dir / "trial_01" / "som" / f"bmu_hist_{metric}.csv").exists()


def write_raster(path, X, label=False):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"b{i}" for i in range(X.shape[1])] + (["label"] if label else []))
        w.writerows([list(x) + (["unlabeled"] if label else []) for x in X])


def read_decisions(path):
    with open(path) as fh:
        return [r["decision"] for r in csv.DictReader(fh)]


def test_classify_map_single_checkpoint_matches_model(small_config, run_dir, tmp_path):
    ckpt = run_dir / "trial_00" / "models" / "semi-spectra-som"
    X = np.loadtxt(run_dir / "trial_00" / "test.csv", delimiter=",", skiprows=1, usecols=range(32))[::7]
    write_raster(tmp_path / "raster.csv", X)
    out = tmp_path / "map"
    assert run("classify-map", "--config", small_config, "--out", out, "--raster", tmp_path / "raster.csv",
               "--checkpoint", ckpt, "--tau", 0.5) == 0
    model, _ = load_model(ckpt / "model", cli.load_feature_map(run_dir / "trial_00" / "som"))
    z = model.logits(X)
    expect = ev.decide(outlier_probability(z), 0.5, inlier_class(z))
    got = read_decisions(out / "classify_map.csv")
    assert got == ["outlier" if d == -1 else str(d) for d in expect]


def test_classify_map_reject_q_policy(small_config, run_dir, tmp_path):
    X = np.loadtxt(run_dir / "trial_00" / "test.csv", delimiter=",", skiprows=1, usecols=range(32))
    write_raster(tmp_path / "raster.csv", X[:20], label=True)
    write_raster(tmp_path / "calib.csv", X[-30:])
    code = run("classify-map", "--config", small_config, "--trials", 2, "--out", run_dir,
               "--model-type", "sup-spectra", "--raster", tmp_path / "raster.csv",
               "--calibration", tmp_path / "calib.csv", "--reject-q", 0.9, "--map-csv", tmp_path / "map.csv")
    assert code == 0
    with open(tmp_path / "map.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 20
    assert all(int(r["votes_outlier"]) + int(r["votes_0"]) + int(r["votes_1"]) == 2 for r in rows)


def test_classify_map_band_mismatch(small_config, run_dir, tmp_path):
    write_raster(tmp_path / "raster.csv", np.ones((3, 16)))
    code = run("classify-map", "--config", small_config, "--out", tmp_path, "--raster", tmp_path / "raster.csv",
               "--checkpoint", run_dir / "trial_00" / "models" / "sup-spectra", "--tau", 0.5)
    assert code == cli.EXIT_DATA


def test_classify_map_needs_a_threshold_policy(small_config, run_dir, tmp_path):
    write_raster(tmp_path / "raster.csv", np.ones((3, 32)))
    code = run("classify-map", "--config", small_config, "--out", tmp_path, "--raster", tmp_path / "raster.csv",
               "--checkpoint", run_dir / "trial_00" / "models" / "sup-spectra")
    assert code == cli.EXIT_CONFIG


def test_vote_majority():
    V = np.array([[0]] * 6 + [[1]] * 3 + [[-1]])
    assert ev.majority_vote(V, 2).tolist() == [0]


def test_vote_single_model_is_identity():
    d = np.array([[1, -1, 0, 1]])
    assert ev.majority_vote(d, 2).tolist() == [1, -1, 0, 1]


def test_vote_class_tie_goes_to_lowest_index():
    V = np.array([[1], [0], [2], [-1], [2], [1], [0]])
    # classes 0, 1, 2 tie at two votes each, the outlier has one
    assert ev.majority_vote(V, 3).tolist() == [0]


def test_vote_outlier_is_a_category():
    V = np.array([[-1, -1], [-1, 1], [0, -1], [-1, -1], [1, 0]])
    assert ev.majority_vote(V, 2).tolist() == [-1, -1]


def test_vote_outlier_tie_goes_to_class():
    V = np.array([[-1], [1], [-1], [1]])
    assert ev.majority_vote(V, 2).tolist() == [1]
