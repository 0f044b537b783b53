"""Geometry and scene containers shared across the package.

Conventions
-----------
* A :class:`Pose` maps camera coordinates to world coordinates
  (``world = R @ cam + t``).
* Camera frames follow the OpenCV layout: +x right, +y down, +z forward.
* Pixel ``(col, row)`` has its center at ``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

FAR_DEPTH = 100.0
PARAMS_PER_GAUSSIAN = 8
SCENE_FORMAT_VERSION = 1

# opacity is stored as a logit, so 1.0 itself has no finite preimage
_OPACITY_CEIL = 1.0 - 1e-9


class BehindCameraError(ValueError):
    pass


def as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite vector {a!r}")
    return a


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class Pose:
    """Rigid transform from the camera frame to the world frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = as_vec3(self.translation)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation has det != 1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def position(self) -> np.ndarray:
        return self.translation

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map ``(..., 3)`` world points into this camera's frame."""
        return (np.asarray(points, dtype=float) - self.translation) @ self.rotation

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def as_list(self) -> list:
        return [*self.translation.tolist(), *self.rotation.ravel().tolist()]


def se3_transform_point(pose: Pose, point) -> np.ndarray:
    return pose.rotation @ as_vec3(point) + pose.translation


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    k = as_vec3(axis)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera at ``eye`` looking toward ``target``.

    Falls back to looking along +x when the view direction is undefined or
    parallel to ``up``.
    """
    eye = as_vec3(eye)
    up = as_vec3(up)
    fwd = as_vec3(target) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-9:
        fwd = np.array([1.0, 0.0, 0.0])
    else:
        fwd = fwd / n
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        fwd = np.array([1.0, 0.0, 0.0])
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-9:
            right = np.array([0.0, -1.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.column_stack([right, down, fwd])
    # re-orthonormalize so Pose validation is exact to rounding
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return Pose(R, eye)


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float = 90.0) -> "Camera":
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height)

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-center coordinates ``(u, v)``, each ``(height, width)``."""
        u = np.arange(self.width) + 0.5
        v = np.arange(self.height) + 0.5
        return np.meshgrid(u, v)

    def ray_directions(self) -> np.ndarray:
        """Camera-frame directions with unit z for every pixel, ``(H, W, 3)``."""
        u, v = self.pixel_grid()
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy,
                         np.ones_like(u)], axis=-1)


def project_point(camera: Camera, point) -> tuple[np.ndarray, float]:
    """Pinhole projection of a camera-frame point to ``(pixel, depth)``."""
    x, y, z = as_vec3(point)
    if z <= 0:
        raise BehindCameraError(f"point at depth {z} is not in front of the camera")
    return np.array([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy]), z


def unproject_pixel(camera: Camera, pixel, depth: float) -> np.ndarray:
    u, v = pixel
    return np.array([(u - camera.cx) / camera.fx * depth,
                     (v - camera.cy) / camera.fy * depth, depth])


@dataclass(frozen=True)
class IsotropicGaussian:
    mu: np.ndarray
    sigma: float
    opacity: float = 1.0
    color: np.ndarray = (0.5, 0.5, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "mu", as_vec3(self.mu))
        c = np.asarray(self.color, dtype=float).reshape(3)
        object.__setattr__(self, "color", c)
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.opacity <= 1:
            raise ValueError("opacity must lie in (0, 1]")
        if np.any(c < 0) or np.any(c > 1):
            raise ValueError("color components must lie in [0, 1]")


@dataclass(frozen=True)
class AnisotropicGaussian:
    mu: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", as_vec3(self.mu))
        S = np.asarray(self.Sigma, dtype=float).reshape(3, 3)
        if np.max(np.abs(S - S.T)) > 1e-12:
            raise ValueError("covariance is not symmetric")
        if np.min(np.linalg.eigvalsh(S)) <= 0:
            raise ValueError("covariance is not positive definite")
        object.__setattr__(self, "Sigma", S)


class SceneModel:
    """A set of isotropic Gaussians stored in the optimizer's parameterization.

    The flat parameter vector holds, per Gaussian,
    ``[mu_x, mu_y, mu_z, log(sigma), logit(opacity), r, g, b]``. The model keeps
    that vector as its source of truth so that converting to and from the flat
    view is exact.
    """

    __slots__ = ("_params",)

    def __init__(self, params: np.ndarray | None = None):
        p = np.zeros((0, PARAMS_PER_GAUSSIAN)) if params is None else np.array(params, dtype=float)
        p = p.reshape(-1, PARAMS_PER_GAUSSIAN)
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite scene parameters")
        p.setflags(write=False)
        self._params = p

    @classmethod
    def from_arrays(cls, mu, sigma, opacity, color) -> "SceneModel":
        mu = np.asarray(mu, dtype=float).reshape(-1, 3)
        n = len(mu)
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n,))
        opacity = np.broadcast_to(np.asarray(opacity, dtype=float), (n,))
        color = np.broadcast_to(np.asarray(color, dtype=float), (n, 3))
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
        if np.any(opacity <= 0) or np.any(opacity > 1):
            raise ValueError("opacity must lie in (0, 1]")
        if np.any(color < 0) or np.any(color > 1):
            raise ValueError("color components must lie in [0, 1]")
        p = np.empty((n, PARAMS_PER_GAUSSIAN))
        p[:, 0:3] = mu
        p[:, 3] = np.log(sigma)
        p[:, 4] = logit(np.minimum(opacity, _OPACITY_CEIL))
        p[:, 5:8] = color
        return cls(p)

    @classmethod
    def from_gaussians(cls, gaussians: Iterable[IsotropicGaussian]) -> "SceneModel":
        gs = list(gaussians)
        if not gs:
            return cls()
        return cls.from_arrays([g.mu for g in gs], [g.sigma for g in gs],
                               [g.opacity for g in gs], [g.color for g in gs])

    @classmethod
    def from_vector(cls, w: np.ndarray) -> "SceneModel":
        w = np.asarray(w, dtype=float)
        if w.ndim != 1 or w.size % PARAMS_PER_GAUSSIAN:
            raise ValueError("flat vector length must be a multiple of 8")
        return cls(w.reshape(-1, PARAMS_PER_GAUSSIAN))

    def to_vector(self) -> np.ndarray:
        return self._params.ravel().copy()

    @property
    def params(self) -> np.ndarray:
        """Read-only ``(n, 8)`` parameter table."""
        return self._params

    def __len__(self) -> int:
        return len(self._params)

    @property
    def num_params(self) -> int:
        return self._params.size

    @property
    def mu(self) -> np.ndarray:
        return self._params[:, 0:3]

    @property
    def log_sigma(self) -> np.ndarray:
        return self._params[:, 3]

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self._params[:, 3])

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self._params[:, 4])

    @property
    def color(self) -> np.ndarray:
        return self._params[:, 5:8]

    def gaussian(self, i: int) -> IsotropicGaussian:
        return IsotropicGaussian(self.mu[i], float(self.sigma[i]),
                                 float(self.opacity[i]), np.clip(self.color[i], 0, 1))

    @property
    def gaussians(self) -> list[IsotropicGaussian]:
        return [self.gaussian(i) for i in range(len(self))]

    def concat(self, other: "SceneModel") -> "SceneModel":
        return SceneModel(np.vstack([self._params, other._params]))

    def subset(self, indices) -> "SceneModel":
        return SceneModel(self._params[np.asarray(indices, dtype=int)])

    @staticmethod
    def parameter_indices(gaussian_indices) -> np.ndarray:
        """Flat-vector coordinates owned by the given Gaussians."""
        g = np.asarray(sorted(set(int(i) for i in gaussian_indices)), dtype=int)
        return (g[:, None] * PARAMS_PER_GAUSSIAN + np.arange(PARAMS_PER_GAUSSIAN)).ravel()

    def to_dict(self) -> dict:
        return {
            "format_version": SCENE_FORMAT_VERSION,
            "gaussians": [
                {"mu": row[0:3].tolist(), "sigma": float(np.exp(row[3])),
                 "opacity": float(sigmoid(row[4])), "color": row[5:8].tolist()}
                for row in self._params
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "SceneModel":
        version = doc.get("format_version")
        if version != SCENE_FORMAT_VERSION:
            raise ValueError(f"unsupported scene format version {version!r}")
        gs = doc["gaussians"]
        if not gs:
            return cls()
        return cls.from_arrays([g["mu"] for g in gs], [g["sigma"] for g in gs],
                               [g["opacity"] for g in gs], [g["color"] for g in gs])

    @classmethod
    def loads(cls, text: str) -> "SceneModel":
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return f"SceneModel(n={len(self)})"


@dataclass(frozen=True)
class Path:
    waypoints: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.waypoints, dtype=float).reshape(-1, 3)
        if len(w) < 1:
            raise ValueError("a path needs at least one waypoint")
        if not np.all(np.isfinite(w)):
            raise ValueError("non-finite waypoint")
        w.setflags(write=False)
        object.__setattr__(self, "waypoints", w)

    def __len__(self):
        return len(self.waypoints)

    def __iter__(self):
        return iter(self.waypoints)


@dataclass
class RgbdImage:
    rgb: np.ndarray
    depth: np.ndarray
    far: float = FAR_DEPTH

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=float)
        self.depth = np.asarray(self.depth, dtype=float)
        if self.rgb.shape != self.depth.shape + (3,):
            raise ValueError(f"rgb {self.rgb.shape} and depth {self.depth.shape} disagree")

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def valid(self) -> np.ndarray:
        """Pixels with a real depth measurement."""
        return self.depth < self.far

    def matches(self, camera: Camera) -> bool:
        return self.shape == (camera.height, camera.width)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    u, _, vt = np.linalg.svd(R)
    return u @ vt
