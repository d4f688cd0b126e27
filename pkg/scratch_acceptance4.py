"""Scratch calibration for the robustness-pattern experiment (not shipped)."""
import sys
import time

import numpy as np

from smoothcert import (
    AttackConfig, AugmentationConfig, PerturbationConfig, SplitSpec, SynthSpec,
    TrainConfig, augment_training_set, evaluate_model, make_partition,
    smoothed_predict, stratified_split, synth_generate, train, train_sc,
)
from smoothcert.attack import bc_predictor

seed = int(sys.argv[1])
n_per_class = int(sys.argv[2])
depth = int(sys.argv[3])
min_leaf = int(sys.argv[4])
M = int(sys.argv[5])
keep = float(sys.argv[6])
sigma = float(sys.argv[7])
noise_frac = float(sys.argv[8]) if len(sys.argv) > 8 else 0.1

t0 = time.time()
partition = make_partition(200, 50)
ds = synth_generate(SynthSpec(n_per_class=n_per_class, dim=200, signal_strength=1.5,
                              noise_std=1.0, seed=seed), partition)
train_ds, test_ds = stratified_split(ds, SplitSpec(seed=seed))
tcfg = TrainConfig(max_depth=depth, min_samples_leaf=min_leaf)
bc = train(train_ds, tcfg)
print(f"[{time.time()-t0:6.1f}s] BC trained", flush=True)

pert = PerturbationConfig(group_keep_fraction=keep, noise_feature_fraction=noise_frac,
                          sigma=sigma, master_seed=seed)
aug = augment_training_set(train_ds, bc, AugmentationConfig(M, pert), partition)
sc = train_sc(aug, tcfg)
print(f"[{time.time()-t0:6.1f}s] SC trained on {aug.n} rows "
      f"(p1={aug.labels.mean():.3f})", flush=True)


def sc_predict(x, i):
    return smoothed_predict(sc, x, 50, pert, partition, f"eval-{i}").label


results = {}
bc_clean = evaluate_model(bc_predictor(bc), test_ds)
sc_clean = evaluate_model(sc_predict, test_ds)
results["clean"] = (bc_clean, sc_clean)
print(f"[{time.time()-t0:6.1f}s] clean: BC acc={bc_clean.accuracy:.4f} rec={bc_clean.recall:.4f}"
      f" | SC acc={sc_clean.accuracy:.4f} rec={sc_clean.recall:.4f}", flush=True)

for q in (0.1, 0.4):
    cfg = AttackConfig(mode="group_noise", group_fraction=q, sigma_attack=0.3, seed=seed + 1)
    bc_rep = evaluate_model(bc_predictor(bc), test_ds, cfg, partition)
    sc_rep = evaluate_model(sc_predict, test_ds, cfg, partition)
    results[q] = (bc_rep, sc_rep)
    print(f"[{time.time()-t0:6.1f}s] q={q}: BC acc={bc_rep.accuracy:.4f} rec={bc_rep.recall:.4f}"
          f" | SC acc={sc_rep.accuracy:.4f} rec={sc_rep.recall:.4f}", flush=True)

bc01, sc01 = results[0.1]
bc04, sc04 = results[0.4]
checks = {
    "c4a SC-BC recall gap at q=0.4 >= 5pts": (sc04.recall - bc04.recall) * 100,
    "c4b BC recall drop 0.1->0.4 >= 3pts": (bc01.recall - bc04.recall) * 100,
    "c4c SC recall drop 0.1->0.4 <= 2pts": (sc01.recall - sc04.recall) * 100,
    "c5  SC clean acc - (BC clean acc - 1pt) >= 0": (sc_clean.accuracy - bc_clean.accuracy + 0.01) * 100,
}
for name, val in checks.items():
    print(f"  {name}: {val:+.2f}")
print(f"total {time.time()-t0:.1f}s")
