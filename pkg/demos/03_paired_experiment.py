#!/usr/bin/env python3
"""
A small paired experiment, masked vs unmasked view selection

Runs the staged acquisition loop in the standard room at a low resolution
so it finishes in under a minute, once with masking and once without, from
the same seed. Both runs share the initial view and the first stage.

    python3 demos/03_paired_experiment.py [seed] [out_dir]
"""

import sys

import numpy as np

from riskview import ExperimentConfig, emit_report, run_variants

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
out_dir = sys.argv[2] if len(sys.argv) > 2 else None

config = ExperimentConfig(width=64, height=64, stride=4, seed=seed)
print(f"budget {config.view_budget} views, {config.train.iterations_per_view} iterations each")

reports = run_variants(config, {"raem": {"raem": True}, "baseline": {"raem": False}})

for name, rep in reports.items():
    picks = [(s.stage, s.candidate, s.masked_gaussians) for s in rep.selections]
    print(f"\n{name}: mean W2 {rep.w2_mean:.4f}, max W2 {rep.w2_max:.4f}, valid={rep.valid}")
    print("  (stage, candidate, |masked|):", picks)

# How the fidelity evolved as views were added
print("\nround-by-round mean W2")
for (stage, rnd, a), (_, _, b) in zip(reports["raem"].w2_history, reports["baseline"].w2_history):
    print(f"  stage {stage} round {rnd}:  raem {np.mean(a):.4f}  baseline {np.mean(b):.4f}")

if out_dir:
    for name, rep in reports.items():
        files = emit_report(rep, f"{out_dir}/{name}")
        print(f"wrote {len(files)} files to {out_dir}/{name}")
