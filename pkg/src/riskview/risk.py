"""Closed-form collision risk between a waypoint and Gaussian scene points.

Distances are signed projections of ``x - p`` onto the direction from the
waypoint to the Gaussian mean. Risk uses the *lower* tail: small distances
are dangerous, so VaR is the ``eps``-quantile and AVaR is the mean of the
distribution below it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AnisotropicGaussian, IsotropicGaussian, SceneModel, as_vec3

EPS_MIN = 1e-6
EPS_MAX = 1.0 - 1e-6
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


class DomainError(ValueError):
    pass


class DegenerateDirectionError(ValueError):
    pass


@dataclass(frozen=True)
class DistanceDistribution:
    """Normal law ``N(mean, std**2)`` of a signed distance."""

    mean: float
    std: float

    def __post_init__(self):
        if not self.std >= 0:
            raise ValueError("std must be nonnegative")

    @property
    def variance(self) -> float:
        return self.std ** 2

    def shifted(self, c: float) -> "DistanceDistribution":
        return DistanceDistribution(self.mean + c, self.std)


def check_eps(eps: float) -> float:
    eps = float(eps)
    if not EPS_MIN <= eps <= EPS_MAX:
        raise DomainError(f"confidence level {eps} outside [{EPS_MIN}, {EPS_MAX}]")
    return eps


def _erfinv_guess(x: float) -> float:
    # Giles (2010) single-precision approximation; Newton polishes it below.
    w = -math.log((1.0 - x) * (1.0 + x))
    if w < 5.0:
        w -= 2.5
        p = 2.81022636e-08
        for c in (3.43273939e-07, -3.5233877e-06, -4.39150654e-06, 0.00021858087,
                  -0.00125372503, -0.00417768164, 0.246640727, 1.50140941):
            p = c + p * w
    else:
        w = math.sqrt(w) - 3.0
        p = -0.000200214257
        for c in (0.000100950558, 0.00134934322, -0.00367342844, 0.00573950773,
                  -0.0076224613, 0.00943887047, 1.00167406, 2.83297682):
            p = c + p * w
    return p * x


def inv_erf(x: float) -> float:
    """Inverse error function on ``(-1, 1)``."""
    x = float(x)
    if not -1.0 < x < 1.0:
        raise DomainError(f"inv_erf argument {x} outside (-1, 1)")
    if x == 0.0:
        return 0.0
    y = _erfinv_guess(x)
    for _ in range(20):
        r = math.erf(y) - x
        # Halley step: erf' = 2/sqrt(pi) exp(-y^2), erf'' = -2y erf'
        step = r / (2.0 / math.sqrt(math.pi) * math.exp(-y * y))
        step /= 1.0 + y * step
        y -= step
        if abs(r) <= 1e-12 and abs(step) <= 4e-16 * max(1.0, abs(y)):
            break
    return y


def normal_cdf(z):
    """Standard normal CDF, vectorized over numpy arrays."""
    from scipy.special import ndtr
    return ndtr(z)


def tail_quantile(eps: float) -> float:
    """``iota = erfinv(2 eps - 1)``; the standard-normal quantile is ``sqrt(2) * iota``."""
    return inv_erf(2.0 * check_eps(eps) - 1.0)


def avar_coefficient(eps: float) -> float:
    """``kappa = 1 / (sqrt(2 pi) eps exp(iota^2))``, so AVaR = mean - kappa * std."""
    iota = tail_quantile(eps)
    return 1.0 / (_SQRT2PI * eps * math.exp(iota * iota))


def distance_distribution(p, g: IsotropicGaussian) -> DistanceDistribution:
    # at p == mu every direction gives N(0, sigma^2), so the direction is not needed
    return DistanceDistribution(float(np.linalg.norm(g.mu - as_vec3(p))), float(g.sigma))


def distance_distribution_anisotropic(p, g: AnisotropicGaussian) -> DistanceDistribution:
    diff = g.mu - as_vec3(p)
    dist = float(np.linalg.norm(diff))
    if dist < 1e-9:
        raise DegenerateDirectionError("waypoint coincides with the Gaussian mean")
    u = diff / dist
    return DistanceDistribution(dist, math.sqrt(float(u @ g.Sigma @ u)))


def value_at_risk(d: DistanceDistribution, eps: float) -> float:
    return _SQRT2 * d.std * tail_quantile(eps) + d.mean


def average_value_at_risk(d: DistanceDistribution, eps: float) -> float:
    return d.mean - avar_coefficient(eps) * d.std


def expected_distance(d: DistanceDistribution, eps: float | None = None) -> float:
    """Risk-neutral alternative to AVaR (ignores ``eps``)."""
    return d.mean


def avar_many(means, stds, eps: float) -> np.ndarray:
    """Vectorized AVaR over arrays of distance means and standard deviations."""
    return np.asarray(means, dtype=float) - avar_coefficient(eps) * np.asarray(stds, dtype=float)


def scene_avar(p, scene: SceneModel, eps: float) -> np.ndarray:
    """AVaR of the signed distance from ``p`` to every Gaussian in ``scene``."""
    dist = np.linalg.norm(scene.mu - as_vec3(p), axis=1)
    return avar_many(dist, scene.sigma, eps)


def waypoint_worst_case_risk(p, scene: SceneModel, eps: float) -> tuple[float, int]:
    """Return ``(alpha, argmin_index)``; an empty scene gives ``(inf, -1)``."""
    check_eps(eps)
    if len(scene) == 0:
        return math.inf, -1
    risks = scene_avar(p, scene, eps)
    i = int(np.argmin(risks))
    return float(risks[i]), i


def level_set_risk(d: DistanceDistribution, eps: float, d_s: float) -> float:
    """Map AVaR onto ``[0, inf]`` using nested intervals ``(-inf, d_s / (1 + delta))``."""
    if not d_s > 0:
        raise ValueError("cutoff distance must be positive")
    mu, sigma = d.mean, d.std
    if sigma == 0:
        if mu >= d_s:
            return 0.0
        if mu > 0:
            return d_s / mu - 1.0
        return math.inf
    kappa = avar_coefficient(eps)
    if (mu - d_s) / sigma >= kappa:
        return 0.0
    if mu / sigma <= kappa:
        return math.inf
    return d_s / (mu - kappa * sigma) - 1.0
