"""Forward isotropic Gaussian splatting with analytic derivatives.

Each Gaussian projects to a circular screen-space footprint of radius
``sigma * fx / depth``. Per-pixel opacity is a truncated Gaussian of that
radius, and pixels are alpha-composited front to back with a unit sample
interval. Residual transmittance shows the background color and the far
depth sentinel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .core import (FAR_DEPTH, PARAMS_PER_GAUSSIAN, Camera, IsotropicGaussian, Pose,
                   RgbdImage, SceneModel, project_point, sigmoid)

NEAR_PLANE = 0.01
SUPPORT_CUTOFF = _kernels.CUTOFF
DEFAULT_BACKGROUND = (0.5, 0.5, 0.5)


class UnsortedContributionsError(ValueError):
    pass


@dataclass(frozen=True)
class RenderSettings:
    background: tuple = DEFAULT_BACKGROUND
    far: float = FAR_DEPTH


DEFAULT_SETTINGS = RenderSettings()


@dataclass(frozen=True)
class ProjectedGaussian:
    pixel_mean: np.ndarray
    screen_radius: float
    depth: float
    source_index: int = -1


@dataclass(frozen=True)
class PixelContribution:
    rho: float
    alpha: float
    transmittance_before: float


@dataclass
class RenderOutput:
    image: RgbdImage
    per_pixel_weight_sum: np.ndarray


def project_gaussian(g: IsotropicGaussian, pose: Pose, camera: Camera,
                     index: int = -1) -> ProjectedGaussian | None:
    """Screen-space footprint of ``g``, or ``None`` when culled by the near plane."""
    p_cam = pose.world_to_camera(g.mu)
    if p_cam[2] <= NEAR_PLANE:
        return None
    pix, depth = project_point(camera, p_cam)
    return ProjectedGaussian(pix, g.sigma * camera.fx / depth, depth, index)


def splat_opacity(pg: ProjectedGaussian, opacity: float, pixel) -> float:
    r = pg.screen_radius
    if not r > 0:
        raise ValueError("screen radius must be positive")
    d2 = float(np.sum((np.asarray(pixel, dtype=float) - pg.pixel_mean) ** 2))
    if d2 > (SUPPORT_CUTOFF * r) ** 2:
        return 0.0
    return opacity * math.exp(-d2 / (2 * r * r))


def composite_pixel(contributions: Sequence[tuple], background=DEFAULT_BACKGROUND,
                    far: float = FAR_DEPTH):
    """Composite ``(rho, color, depth)`` triples sorted front to back.

    Returns ``(color, depth, weight_sum, trace)`` where ``trace`` lists the
    :class:`PixelContribution` of every entry.
    """
    color = np.zeros(3)
    depth = 0.0
    T = 1.0
    last = -math.inf
    trace = []
    for rho, c, d in contributions:
        if d < last:
            raise UnsortedContributionsError("contributions are not sorted by depth")
        last = d
        alpha = 1.0 - math.exp(-rho)
        trace.append(PixelContribution(rho, alpha, T))
        color += T * alpha * np.asarray(c, dtype=float)
        depth += T * alpha * d
        T *= math.exp(-rho)
    color += T * np.asarray(background, dtype=float)
    depth += T * far
    return color, depth, 1.0 - T, trace


@dataclass
class _Prepared:
    """Visible Gaussians sorted by depth, with screen-space quantities."""

    index: np.ndarray
    cam: np.ndarray
    px: np.ndarray
    py: np.ndarray
    r: np.ndarray
    z: np.ndarray
    o: np.ndarray
    col: np.ndarray


def _prepare(scene: SceneModel, pose: Pose, camera: Camera) -> _Prepared:
    P = scene.params
    cam = pose.world_to_camera(P[:, 0:3]) if len(P) else np.zeros((0, 3))
    z = cam[:, 2]
    keep = np.flatnonzero(z > NEAR_PLANE)
    z = z[keep]
    cam = cam[keep]
    px = camera.fx * cam[:, 0] / z + camera.cx
    py = camera.fy * cam[:, 1] / z + camera.cy
    r = np.exp(P[keep, 3]) * camera.fx / z
    ext = SUPPORT_CUTOFF * r
    onscreen = ((px + ext > 0) & (px - ext < camera.width)
                & (py + ext > 0) & (py - ext < camera.height))
    keep, cam, px, py, r, z = (a[onscreen] for a in (keep, cam, px, py, r, z))
    order = np.lexsort((keep, z))
    keep, cam, px, py, r, z = (np.ascontiguousarray(a[order]) for a in (keep, cam, px, py, r, z))
    return _Prepared(keep, cam, px, py, r, z, sigmoid(P[keep, 4]),
                     np.ascontiguousarray(P[keep, 5:8]))


def _forward(prep: _Prepared, camera: Camera, settings: RenderSettings):
    return _kernels.forward(prep.px, prep.py, prep.r, prep.z, prep.o, prep.col,
                            camera.width, camera.height,
                            np.asarray(settings.background, dtype=float), float(settings.far))


def render(scene: SceneModel, pose: Pose, camera: Camera,
           settings: RenderSettings = DEFAULT_SETTINGS) -> RenderOutput:
    rgb, depth, T = _forward(_prepare(scene, pose, camera), camera, settings)
    return RenderOutput(RgbdImage(rgb, depth, settings.far), 1.0 - T)


def _check_dims(rendered: RgbdImage, observed: RgbdImage):
    if rendered.shape != observed.shape:
        raise ValueError(f"image sizes differ: {rendered.shape} vs {observed.shape}")


def reconstruction_loss(rendered: RgbdImage, observed: RgbdImage, gamma: float = 0.5) -> float:
    """Per-pixel mean of the L1 color error plus ``gamma`` times the L1 depth error.

    Depth error is skipped where the observation has no return.
    """
    _check_dims(rendered, observed)
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    npix = rendered.depth.size
    color = np.abs(rendered.rgb - observed.rgb).sum()
    valid = observed.valid
    depth = np.abs(rendered.depth - observed.depth)[valid].sum()
    return float((color + gamma * depth) / npix)


def _chain_to_params(prep: _Prepared, screen: np.ndarray, camera: Camera,
                     pose: Pose, n: int) -> np.ndarray:
    """Map per-Gaussian screen-space gradients onto the flat scene layout."""
    g_px, g_py, g_logr, g_logit, g_zdirect = screen[:, :5].T
    x, y, z = prep.cam.T
    g_cam = np.empty((len(z), 3))
    g_cam[:, 0] = g_px * camera.fx / z
    g_cam[:, 1] = g_py * camera.fy / z
    g_cam[:, 2] = (g_zdirect - g_px * camera.fx * x / z**2
                   - g_py * camera.fy * y / z**2 - g_logr / z)
    grad = np.zeros((n, PARAMS_PER_GAUSSIAN))
    grad[prep.index, 0:3] = g_cam @ pose.rotation.T
    grad[prep.index, 3] = g_logr
    grad[prep.index, 4] = g_logit
    grad[prep.index, 5:8] = screen[:, 5:8]
    return grad


def loss_and_gradient(scene: SceneModel, pose: Pose, camera: Camera, observed: RgbdImage,
                      gamma: float = 0.5, settings: RenderSettings = DEFAULT_SETTINGS):
    """Loss value and its gradient over the flat parameter vector."""
    prep = _prepare(scene, pose, camera)
    rgb, depth, T = _forward(prep, camera, settings)
    rendered = RgbdImage(rgb, depth, settings.far)
    loss = reconstruction_loss(rendered, observed, gamma)
    npix = depth.size
    # sign(0) = 0 gives the zero subgradient at exact agreement
    g_rgb = np.sign(rgb - observed.rgb) / npix
    g_depth = np.where(observed.valid, gamma * np.sign(depth - observed.depth) / npix, 0.0)
    screen = _kernels.backward(prep.px, prep.py, prep.r, prep.z, prep.o, prep.col, T,
                               g_rgb, g_depth, np.asarray(settings.background, dtype=float),
                               float(settings.far))
    grad = _chain_to_params(prep, screen, camera, pose, len(scene))
    return loss, grad.ravel()


def loss_gradient(scene: SceneModel, pose: Pose, camera: Camera, observed: RgbdImage,
                  gamma: float = 0.5, settings: RenderSettings = DEFAULT_SETTINGS) -> np.ndarray:
    return loss_and_gradient(scene, pose, camera, observed, gamma, settings)[1]


def render_jacobian_diag(scene: SceneModel, pose: Pose, camera: Camera,
                         settings: RenderSettings = DEFAULT_SETTINGS,
                         depth_weight: float = 0.0) -> np.ndarray:
    """``diag(J^T J)`` of the rendered image with respect to the flat parameters.

    ``J`` stacks the RGB channels of every pixel. A positive ``depth_weight``
    also adds that multiple of the squared depth-channel derivatives.
    """
    prep = _prepare(scene, pose, camera)
    _, _, T = _forward(prep, camera, settings)
    sq = _kernels.jacobian_sq(prep.px, prep.py, prep.r, prep.z, prep.o, prep.col, prep.cam,
                              pose.rotation, float(camera.fx), float(camera.fy), T,
                              np.asarray(settings.background, dtype=float),
                              float(settings.far), float(depth_weight))
    out = np.zeros((len(scene), PARAMS_PER_GAUSSIAN))
    out[prep.index] = sq
    return out.ravel()
