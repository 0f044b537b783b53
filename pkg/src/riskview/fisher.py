"""Fisher-information view scoring and next-best-view selection."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Camera, Pose, SceneModel
from .mask import MaskedScene
from .splat import DEFAULT_SETTINGS, RenderSettings, render_jacobian_diag


class EmptyPoolError(ValueError):
    pass


@dataclass(frozen=True)
class FisherDiagonal:
    """Diagonal Laplace approximation of the training-set Hessian.

    ``entries`` already include the prior term ``lam``.
    """

    entries: np.ndarray
    lam: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if np.any(self.entries < 0):
            raise ValueError("Fisher entries must be nonnegative")

    def __len__(self):
        return len(self.entries)

    def scaled(self, c: float) -> "FisherDiagonal":
        return FisherDiagonal(self.entries * c, self.lam * c)


@dataclass
class CandidateSet:
    poses: list
    stages: list = field(default_factory=list)

    def __post_init__(self):
        if not self.stages:
            self.stages = [0] * len(self.poses)
        if len(self.stages) != len(self.poses):
            raise ValueError("one stage label per pose")

    def __len__(self):
        return len(self.poses)


@dataclass(frozen=True)
class ParameterMask:
    selected: np.ndarray

    @classmethod
    def from_masked_scene(cls, masked: MaskedScene) -> "ParameterMask":
        return cls(SceneModel.parameter_indices(masked.indices))

    @classmethod
    def full(cls, scene: SceneModel) -> "ParameterMask":
        return cls(np.arange(scene.num_params))


def accumulate_training_fisher(scene: SceneModel, views: Sequence[tuple[Pose, Camera]],
                               lam: float = 0.1, settings: RenderSettings = DEFAULT_SETTINGS,
                               depth_weight: float = 0.0) -> FisherDiagonal:
    total = np.zeros(scene.num_params)
    for pose, camera in views:
        total += render_jacobian_diag(scene, pose, camera, settings, depth_weight)
    return FisherDiagonal(total + lam, lam)


def eig_from_diag(h: np.ndarray, train_fisher: FisherDiagonal,
                  mask: ParameterMask | None = None) -> float:
    ratio = h / train_fisher.entries
    if mask is not None:
        ratio = ratio[mask.selected]
    return float(ratio.sum())


def expected_information_gain(candidate: Pose, camera: Camera, scene: SceneModel,
                              train_fisher: FisherDiagonal, mask: ParameterMask | None = None,
                              settings: RenderSettings = DEFAULT_SETTINGS,
                              depth_weight: float = 0.0) -> float:
    """Trace objective ``sum_j h_j / H_j`` over the (optionally masked) parameters.

    Uses only the rendered model, never an image captured at ``candidate``.
    """
    if len(train_fisher) != scene.num_params:
        raise ValueError("Fisher diagonal does not match the scene layout")
    if mask is not None and len(mask.selected) == 0:
        return 0.0
    h = render_jacobian_diag(scene, candidate, camera, settings, depth_weight)
    return eig_from_diag(h, train_fisher, mask)


def score_candidates(candidates: CandidateSet, camera: Camera, scene: SceneModel,
                     train_fisher: FisherDiagonal, masks: Sequence[ParameterMask | None] = (None,),
                     settings: RenderSettings = DEFAULT_SETTINGS,
                     depth_weight: float = 0.0) -> np.ndarray:
    """EIG of every candidate under each mask, shape ``(len(candidates), len(masks))``.

    Renders each candidate once regardless of how many masks are scored.
    """
    scores = np.zeros((len(candidates), len(masks)))
    for i, pose in enumerate(candidates.poses):
        h = render_jacobian_diag(scene, pose, camera, settings, depth_weight)
        for m, mask in enumerate(masks):
            scores[i, m] = eig_from_diag(h, train_fisher, mask)
    return scores


def argmax_lowest(scores) -> int:
    """Index of the maximum, breaking ties toward the lowest index."""
    scores = np.asarray(scores, dtype=float)
    return int(np.flatnonzero(scores == scores.max())[0])


def select_next_best_view(candidates: CandidateSet, camera: Camera, scene: SceneModel,
                          train_fisher: FisherDiagonal, mask: ParameterMask | None = None,
                          settings: RenderSettings = DEFAULT_SETTINGS,
                          depth_weight: float = 0.0) -> tuple[int, float]:
    if len(candidates) == 0:
        raise EmptyPoolError("candidate pool is empty")
    scores = score_candidates(candidates, camera, scene, train_fisher, (mask,),
                              settings, depth_weight)[:, 0]
    i = argmax_lowest(scores)
    return i, float(scores[i])


def score_table_csv(candidates: CandidateSet, unmasked, masked) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["candidate", "stage", "x", "y", "z", "eig_unmasked", "eig_masked"])
    for i, pose in enumerate(candidates.poses):
        x, y, z = pose.translation
        m = "" if masked is None else repr(float(masked[i]))
        w.writerow([i, candidates.stages[i], repr(float(x)), repr(float(y)), repr(float(z)),
                    repr(float(unmasked[i])), m])
    return buf.getvalue()
