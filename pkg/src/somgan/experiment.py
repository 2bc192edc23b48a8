"""One-trial and multi-trial drivers tying the pipeline together."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import evaluation as ev
from .core import Standardizer, concat, fit_standardizer
from .membership import SomFeatureMap, fit_feature_map
from .som import ANGLE_WEIGHT, SomConfig
from .ssgan import (MODEL_TYPES, SSGAN, TrainConfig, TrainHistory, inlier_class,
                    outlier_probability, train)
from .synth import ExperimentSplit, Scene, SplitCounts, default_scene, make_split

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """Settings shared by every model type in an experiment."""

    grid: tuple = (3, 3)
    som: SomConfig = field(default_factory=SomConfig)
    ridge_scale: float = 1.0
    angle_weight: float = ANGLE_WEIGHT
    sigmoid_lr: float = 0.05
    sigmoid_epochs: int = 500
    train: TrainConfig = field(default_factory=TrainConfig)
    supervised_epochs: int = 300


def trial_seeds(master_seed: int, trial: int) -> dict:
    """Independent integer seeds for each stage of one trial.

    Derived from ``SeedSequence(master_seed, spawn_key=(trial,))`` so adding
    trials never changes the seeds of existing ones.
    """
    seq = np.random.SeedSequence(master_seed, spawn_key=(trial,))
    split, som, gan = (int(s.generate_state(1)[0]) for s in seq.spawn(3))
    return {"split": split, "som": som, "gan": gan}


def som_fit_spectra(split: ExperimentSplit) -> np.ndarray:
    """Raw spectra the SOM is built from: the labeled inliers."""
    return split.labeled.X[split.labeled.y >= 0]


def fit_som_features(split: ExperimentSplit, cfg: PipelineConfig, seed: int):
    X = som_fit_spectra(split)
    ridge = cfg.ridge_scale * float(X.var(axis=0).mean()) if cfg.ridge_scale else None
    return fit_feature_map(X, cfg.grid, replace(cfg.som, seed=seed), ridge, cfg.sigmoid_lr,
                           cfg.sigmoid_epochs, cfg.angle_weight)


def model_config(model_type: str, cfg: PipelineConfig, seed: int) -> TrainConfig:
    mode, features = MODEL_TYPES[model_type]
    tc = replace(cfg.train, mode=mode, features=features, seed=seed)
    if mode == "supervised":
        tc = replace(tc, epochs=cfg.supervised_epochs)
    return tc


def train_model(split: ExperimentSplit, model_type: str, cfg: PipelineConfig, seed: int,
                feature_map: SomFeatureMap | None = None):
    """Fit the standardizer, prepare inputs and train one model. Returns ``(model, history)``."""
    tc = model_config(model_type, cfg, seed)
    # standardizer statistics come from all training spectra (labels not needed)
    fit_X = np.vstack([split.labeled.X, split.unlabeled.X])
    z = fit_standardizer(fit_X)
    fmap = feature_map if tc.uses_som else None
    model = SSGAN(tc, split.labeled.band_count, split.class_count, z, fmap)
    lab = (*model.inputs(split.labeled.X), split.labeled.y)
    unl = model.inputs(split.unlabeled.X) if tc.semi else None
    hist = train(model, lab, unl)
    return model, hist


@dataclass
class TrialResult:
    model_type: str
    trial: int
    scores: np.ndarray
    predictions: np.ndarray
    labels: np.ndarray
    roc: ev.RocCurve
    reliability: ev.ReliabilityCurve
    history: TrainHistory


def run_trial(scene: Scene, trial: int, model_types, cfg: PipelineConfig = PipelineConfig(),
              counts: SplitCounts = SplitCounts(), master_seed: int = 0):
    """Train and test every requested model type on one trial's split."""
    seeds = trial_seeds(master_seed, trial)
    split = make_split(scene, counts, seeds["split"])
    fmap = None
    if any(MODEL_TYPES[m][1] == "spectra+som" for m in model_types):
        fmap, _ = fit_som_features(split, cfg, seeds["som"])
    out = {}
    for m in model_types:
        model, hist = train_model(split, m, cfg, seeds["gan"], fmap)
        logits = model.logits(split.test.X)
        scores = outlier_probability(logits)
        pred = inlier_class(logits)
        r, rel = ev.evaluate_scores(scores, pred, split.test.y)
        out[m] = TrialResult(m, trial, scores, pred, split.test.y, r, rel, hist)
        log.info("trial %d %s auc=%.4f top=%.4f", trial, m, r.auc, ev.top_rate(rel.false_alarm, rel.accuracy))
    return out


def run_experiment(trials: int, model_types=tuple(MODEL_TYPES), cfg: PipelineConfig = PipelineConfig(),
                   scene: Scene | None = None, counts: SplitCounts = SplitCounts(), master_seed: int = 0):
    """Per-model summaries over ``trials`` trials plus the raw per-trial results."""
    scene = scene or default_scene()
    results = {m: [] for m in model_types}
    for t in range(trials):
        for m, r in run_trial(scene, t, model_types, cfg, counts, master_seed).items():
            results[m].append(r)
    summaries = {}
    if trials >= 2:
        for m, rs in results.items():
            summaries[m] = ev.summarize_trials([r.roc for r in rs], [r.reliability for r in rs])
    return summaries, results
