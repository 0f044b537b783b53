"""Numba kernels for isotropic splatting.

All kernels take Gaussians already culled and sorted front to back, with
per-Gaussian screen-space quantities precomputed:

    px, py   projected center (pixels)
    r        screen radius (pixels)
    z        camera-frame depth
    o        opacity
    col      (n, 3) color

The per-splat opacity is ``rho = o * exp(-d2 / (2 r^2))`` inside ``d <= 3r``
and the compositing interval is 1, so ``alpha = 1 - exp(-rho)``.
"""

import math

import numpy as np
from numba import njit

CUTOFF = 3.0


@njit(cache=True, inline="always")
def _col_range(px, rr, width):
    lo = int(math.ceil(px - CUTOFF * rr - 0.5))
    hi = int(math.floor(px + CUTOFF * rr - 0.5))
    if lo < 0:
        lo = 0
    if hi > width - 1:
        hi = width - 1
    return lo, hi


@njit(cache=True)
def forward(px, py, r, z, o, col, width, height, bg, far):
    rgb = np.zeros((height, width, 3))
    depth = np.zeros((height, width))
    T = np.ones((height, width))
    for g in range(px.shape[0]):
        rr = r[g]
        inv2r2 = 0.5 / (rr * rr)
        lim2 = (CUTOFF * rr) ** 2
        c0, c1 = _col_range(px[g], rr, width)
        r0, r1 = _col_range(py[g], rr, height)
        for row in range(r0, r1 + 1):
            dy = row + 0.5 - py[g]
            for cc in range(c0, c1 + 1):
                dx = cc + 0.5 - px[g]
                d2 = dx * dx + dy * dy
                if d2 > lim2:
                    continue
                rho = o[g] * math.exp(-d2 * inv2r2)
                t = T[row, cc]
                w = t * (1.0 - math.exp(-rho))
                rgb[row, cc, 0] += w * col[g, 0]
                rgb[row, cc, 1] += w * col[g, 1]
                rgb[row, cc, 2] += w * col[g, 2]
                depth[row, cc] += w * z[g]
                T[row, cc] = t * math.exp(-rho)
    for row in range(height):
        for cc in range(width):
            t = T[row, cc]
            rgb[row, cc, 0] += t * bg[0]
            rgb[row, cc, 1] += t * bg[1]
            rgb[row, cc, 2] += t * bg[2]
            depth[row, cc] += t * far
    return rgb, depth, T


@njit(cache=True)
def backward(px, py, r, z, o, col, T_final, g_rgb, g_depth, bg, far):
    """Reverse pass of ``forward`` for upstream pixel gradients.

    Returns per-Gaussian gradients with respect to
    ``(px, py, log r, logit o, z [direct], r, g, b)`` as an ``(n, 8)`` array.
    """
    height, width = T_final.shape
    n = px.shape[0]
    out = np.zeros((n, 8))
    T = T_final.copy()
    S = np.empty((height, width, 4))
    for row in range(height):
        for cc in range(width):
            t = T[row, cc]
            S[row, cc, 0] = t * bg[0]
            S[row, cc, 1] = t * bg[1]
            S[row, cc, 2] = t * bg[2]
            S[row, cc, 3] = t * far
    for g in range(n - 1, -1, -1):
        rr = r[g]
        r2 = rr * rr
        inv2r2 = 0.5 / r2
        lim2 = (CUTOFF * rr) ** 2
        og = o[g]
        c0, c1 = _col_range(px[g], rr, width)
        r0, r1 = _col_range(py[g], rr, height)
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        a3 = 0.0
        a4 = 0.0
        a5 = 0.0
        a6 = 0.0
        a7 = 0.0
        for row in range(r0, r1 + 1):
            dy = row + 0.5 - py[g]
            for cc in range(c0, c1 + 1):
                dx = cc + 0.5 - px[g]
                d2 = dx * dx + dy * dy
                if d2 > lim2:
                    continue
                rho = og * math.exp(-d2 * inv2r2)
                t_after = T[row, cc]
                t_before = t_after * math.exp(rho)
                w = t_before - t_after
                # d(pixel)/d(rho) = T_after * value - (everything behind)
                gr = g_rgb[row, cc, 0]
                gg = g_rgb[row, cc, 1]
                gb = g_rgb[row, cc, 2]
                gd = g_depth[row, cc]
                grho = (gr * (t_after * col[g, 0] - S[row, cc, 0])
                        + gg * (t_after * col[g, 1] - S[row, cc, 1])
                        + gb * (t_after * col[g, 2] - S[row, cc, 2])
                        + gd * (t_after * z[g] - S[row, cc, 3]))
                q = grho * rho / r2
                a0 += q * dx
                a1 += q * dy
                a2 += q * d2
                a3 += grho * rho * (1.0 - og)
                a4 += gd * w
                a5 += gr * w
                a6 += gg * w
                a7 += gb * w
                S[row, cc, 0] += w * col[g, 0]
                S[row, cc, 1] += w * col[g, 1]
                S[row, cc, 2] += w * col[g, 2]
                S[row, cc, 3] += w * z[g]
                T[row, cc] = t_before
        out[g, 0] = a0
        out[g, 1] = a1
        out[g, 2] = a2
        out[g, 3] = a3
        out[g, 4] = a4
        out[g, 5] = a5
        out[g, 6] = a6
        out[g, 7] = a7
    return out


@njit(cache=True)
def jacobian_sq(px, py, r, z, o, col, cam_xyz, R, fx, fy, T_final, bg, far,
                depth_weight):
    """Per-parameter sum over pixels of squared rendering derivatives.

    Columns follow the scene layout ``(mu_x, mu_y, mu_z, log sigma,
    logit o, r, g, b)`` with mu in world coordinates. ``depth_weight`` scales
    the squared derivatives of the depth channel; 0 gives RGB only.
    """
    height, width = T_final.shape
    n = px.shape[0]
    out = np.zeros((n, 8))
    T = T_final.copy()
    S = np.empty((height, width, 4))
    for row in range(height):
        for cc in range(width):
            t = T[row, cc]
            S[row, cc, 0] = t * bg[0]
            S[row, cc, 1] = t * bg[1]
            S[row, cc, 2] = t * bg[2]
            S[row, cc, 3] = t * far
    for g in range(n - 1, -1, -1):
        rr = r[g]
        r2 = rr * rr
        inv2r2 = 0.5 / r2
        lim2 = (CUTOFF * rr) ** 2
        og = o[g]
        zg = z[g]
        xz = cam_xyz[g, 0] / zg
        yz = cam_xyz[g, 1] / zg
        c0, c1 = _col_range(px[g], rr, width)
        r0, r1 = _col_range(py[g], rr, height)
        acc = np.zeros(8)
        for row in range(r0, r1 + 1):
            dy = row + 0.5 - py[g]
            for cc in range(c0, c1 + 1):
                dx = cc + 0.5 - px[g]
                d2 = dx * dx + dy * dy
                if d2 > lim2:
                    continue
                rho = og * math.exp(-d2 * inv2r2)
                t_after = T[row, cc]
                t_before = t_after * math.exp(rho)
                w = t_before - t_after
                e0 = t_after * col[g, 0] - S[row, cc, 0]
                e1 = t_after * col[g, 1] - S[row, cc, 1]
                e2 = t_after * col[g, 2] - S[row, cc, 2]
                esq = e0 * e0 + e1 * e1 + e2 * e2
                # d rho / d(camera-frame center)
                q = rho / r2
                bx = q * dx * fx / zg
                by = q * dy * fy / zg
                bz = -(q * dx * fx * xz + q * dy * fy * yz + q * d2) / zg
                wx = R[0, 0] * bx + R[0, 1] * by + R[0, 2] * bz
                wy = R[1, 0] * bx + R[1, 1] * by + R[1, 2] * bz
                wz = R[2, 0] * bx + R[2, 1] * by + R[2, 2] * bz
                bs = q * d2
                bo = rho * (1.0 - og)
                acc[0] += esq * wx * wx
                acc[1] += esq * wy * wy
                acc[2] += esq * wz * wz
                acc[3] += esq * bs * bs
                acc[4] += esq * bo * bo
                acc[5] += w * w
                acc[6] += w * w
                acc[7] += w * w
                if depth_weight > 0.0:
                    ed = t_after * zg - S[row, cc, 3]
                    dxw = ed * wx + w * R[0, 2]
                    dyw = ed * wy + w * R[1, 2]
                    dzw = ed * wz + w * R[2, 2]
                    acc[0] += depth_weight * dxw * dxw
                    acc[1] += depth_weight * dyw * dyw
                    acc[2] += depth_weight * dzw * dzw
                    acc[3] += depth_weight * (ed * bs) ** 2
                    acc[4] += depth_weight * (ed * bo) ** 2
                S[row, cc, 0] += w * col[g, 0]
                S[row, cc, 1] += w * col[g, 1]
                S[row, cc, 2] += w * col[g, 2]
                S[row, cc, 3] += w * zg
                T[row, cc] = t_before
        for j in range(8):
            out[g, j] = acc[j]
    return out
