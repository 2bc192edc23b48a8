"""Train the four model types on a few trials and print a comparison table.

Uses the library directly with shortened GAN training so the whole script
takes a couple of minutes; `somgan synth/train/eval` runs the full protocol.
"""
from dataclasses import replace

from somgan.experiment import PipelineConfig, run_experiment

cfg = PipelineConfig()
cfg = replace(cfg, train=replace(cfg.train, epochs=8), supervised_epochs=100)

summaries, results = run_experiment(3, cfg=cfg, master_seed=7)

print(f"{'model':18s} {'mean AUC':>9s} {'95% CI':>16s} {'top rate':>9s}")
for name, s in summaries.items():
    d = s.to_dict()
    lo, hi = d["auc_ci"]
    print(f"{name:18s} {d['auc_mean']:9.3f} [{lo:.3f}, {hi:.3f}] {d['top_rate_mean']:9.3f}")

# The spectra-only models have no notion of "far from everything seen": an
# outlier that is brighter or darker than the inliers can still look like a
# confident class member. The SOM memberships give the discriminator that signal.
