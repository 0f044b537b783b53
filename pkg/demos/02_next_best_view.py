#!/usr/bin/env python3
"""
Scoring candidate views by information gain

Two clusters of Gaussians: one near a short path, one off to the side. The
camera has only looked at the near cluster so far. Unrestricted information
gain prefers the unseen side cluster; restricting it to the masked set
around the path sends the camera back to the near cluster.
"""

import numpy as np

from riskview import (Camera, CandidateSet, ParameterMask, Path, RiskProfile, SceneModel,
                      accumulate_training_fisher, argmax_lowest, look_at, mask_environment,
                      score_candidates)

rng = np.random.default_rng(0)
camera = Camera.from_fov(32, 32, 70)


def cluster(center, n, spread):
    mu = np.asarray(center) + rng.uniform(-spread, spread, (n, 3))
    return SceneModel.from_arrays(mu, rng.uniform(0.08, 0.15, n), rng.uniform(0.4, 0.9, n),
                                  rng.uniform(0, 1, (n, 3)))


near = cluster((0, 0, 0), 8, 0.25)
side = cluster((4, 0, 0), 16, 0.35)
scene = near.concat(side)
print(f"{len(scene)} Gaussians, {scene.num_params} parameters")

# Fisher information from the views taken so far
seen_from = [look_at(p, (0, 0, 0)) for p in ([0, -2.5, 0.4], [0.3, 2.5, 0.2])]
fisher = accumulate_training_fisher(scene, [(p, camera) for p in seen_from], lam=0.1)

pool = CandidateSet([
    look_at([0.5, -2.4, 1.0], (0, 0, 0)),
    look_at([-2.5, 0.2, 0.3], (0, 0, 0)),
    look_at([4.2, -2.5, 0.3], (4, 0, 0)),
    look_at([4.0, 2.5, 0.8], (4, 0, 0)),
])

path = Path([[0.0, -0.7, 0.0], [0.0, 0.7, 0.0]])
masked = mask_environment(scene, path, RiskProfile.uniform(len(path), 0.9))
print("masked Gaussians:", masked.indices.tolist())

scores = score_candidates(pool, camera, scene, fisher, (None, ParameterMask.from_masked_scene(masked)))
print("\ncandidate  eig_all     eig_masked")
for i, (a, b) in enumerate(scores):
    print(f"{i:9d}  {a:10.2f}  {b:10.2f}")
print("\nunmasked choice:", argmax_lowest(scores[:, 0]))
print("masked choice:  ", argmax_lowest(scores[:, 1]))

