"""Risk-dependent masking of the scene around a waypoint path."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .core import Path, SceneModel
from .risk import check_eps, scene_avar

# risk drivers understood by risk_profile
AVAR = "avar"
MEAN = "mean"


@dataclass(frozen=True)
class MaskParams:
    beta1: float = 0.2
    beta2: float = 1.0
    epsilon: float = 0.1
    r_max: float | None = None

    def __post_init__(self):
        if not (self.beta1 > 0 and self.beta2 > 0):
            raise ValueError("beta1 and beta2 must be positive")
        check_eps(self.epsilon)
        if self.r_max is not None and not self.r_max > 0:
            raise ValueError("r_max must be positive")


@dataclass(frozen=True)
class RiskProfile:
    alpha: np.ndarray
    radius: np.ndarray
    argmin: np.ndarray

    def __len__(self):
        return len(self.alpha)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "alpha", "r_mask", "argmin"])
        for k, (a, r, i) in enumerate(zip(self.alpha, self.radius, self.argmin)):
            w.writerow([k, repr(float(a)), repr(float(r)), int(i)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RiskProfile":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls(np.array([float(r["alpha"]) for r in rows]),
                   np.array([float(r["r_mask"]) for r in rows]),
                   np.array([int(r["argmin"]) for r in rows]))

    @classmethod
    def uniform(cls, n: int, radius: float) -> "RiskProfile":
        """Fixed-radius profile, used for ablations against dynamic radii."""
        return cls(np.full(n, np.nan), np.full(n, float(radius)), np.full(n, -1))


@dataclass(frozen=True)
class MaskedScene:
    indices: np.ndarray

    def __len__(self):
        return len(self.indices)

    def __contains__(self, i):
        return bool(np.any(self.indices == i))


def masking_radius(alpha_k: float, params: MaskParams) -> float:
    if alpha_k == math.inf:
        return 0.0
    try:
        r = params.beta1 * math.exp(-params.beta2 * alpha_k)
    except OverflowError:
        # deeply negative risk: the ball covers everything
        r = math.inf
    if params.r_max is not None:
        r = min(r, params.r_max)
    return r


def risk_profile(path: Path, scene: SceneModel, params: MaskParams,
                 driver: str = AVAR) -> RiskProfile:
    """Worst-case risk and masking radius at every waypoint.

    ``driver="mean"`` replaces AVaR by the expected distance, for comparison.
    """
    n = len(path)
    alpha = np.full(n, math.inf)
    argmin = np.full(n, -1, dtype=int)
    if len(scene):
        for k, p in enumerate(path.waypoints):
            if driver == AVAR:
                risks = scene_avar(p, scene, params.epsilon)
            elif driver == MEAN:
                risks = np.linalg.norm(scene.mu - p, axis=1)
            else:
                raise ValueError(f"unknown risk driver {driver!r}")
            i = int(np.argmin(risks))
            alpha[k], argmin[k] = risks[i], i
    radius = np.array([masking_radius(a, params) for a in alpha])
    return RiskProfile(alpha, radius, argmin)


def mask_environment(scene: SceneModel, path: Path, profile: RiskProfile) -> MaskedScene:
    """Gaussians whose mean lies in the union of closed balls around the waypoints."""
    if len(profile) != len(path):
        raise ValueError("profile and path lengths differ")
    if len(scene) == 0:
        return MaskedScene(np.zeros(0, dtype=int))
    d2 = ((scene.mu[:, None, :] - path.waypoints[None, :, :]) ** 2).sum(-1)
    inside = np.sqrt(d2) <= profile.radius[None, :]
    return MaskedScene(np.flatnonzero(inside.any(axis=1)))
