import math

import numpy as np
import pytest
import sympy as sp

from fd_oracle import dense_jacobian, loss_fd, relative_error
from riskview.core import Camera, IsotropicGaussian, Pose, RgbdImage, SceneModel, look_at
from riskview.splat import (DEFAULT_BACKGROUND, ProjectedGaussian, RenderSettings,
                            UnsortedContributionsError, composite_pixel, loss_and_gradient,
                            loss_gradient, project_gaussian, reconstruction_loss, render,
                            render_jacobian_diag, splat_opacity)

CAM16 = Camera(16, 16, 8, 8, 16, 16)
IDENT = Pose.identity()


def random_scene(rng, n, spread=0.5):
    mu = np.column_stack([rng.uniform(-spread, spread, n), rng.uniform(-spread, spread, n),
                          rng.uniform(1.5, 3.0, n)])
    return SceneModel.from_arrays(mu, rng.uniform(0.1, 0.3, n), rng.uniform(0.2, 0.9, n),
                                  rng.uniform(0, 1, (n, 3)))


def random_observation(rng, h=16, w=16):
    depth = rng.uniform(1.0, 3.0, (h, w))
    depth[rng.uniform(size=(h, w)) < 0.1] = 100.0
    return RgbdImage(rng.uniform(0, 1, (h, w, 3)), depth)


class TestProjection:
    def test_axis_radius(self):
        pg = project_gaussian(IsotropicGaussian([0, 0, 2], 0.1), IDENT, Camera(100, 100, 128, 128, 256, 256))
        assert pg.screen_radius == pytest.approx(5.0)
        np.testing.assert_allclose(pg.pixel_mean, [128, 128])

    def test_culled(self):
        assert project_gaussian(IsotropicGaussian([0, 0, -1], 0.1), IDENT, CAM16) is None
        assert project_gaussian(IsotropicGaussian([0, 0, 0.005], 0.1), IDENT, CAM16) is None

    def test_off_axis_matches_pinhole(self):
        pose = look_at([1, 0, 0], [1, 5, 0])
        pg = project_gaussian(IsotropicGaussian([1.3, 4.0, -0.2], 0.1), pose, CAM16)
        cam_pt = pose.world_to_camera([1.3, 4.0, -0.2])
        np.testing.assert_allclose(pg.pixel_mean, [16 * cam_pt[0] / cam_pt[2] + 8,
                                                   16 * cam_pt[1] / cam_pt[2] + 8])
        assert pg.depth == pytest.approx(cam_pt[2])


class TestSplatOpacity:
    pg = ProjectedGaussian(np.array([5.0, 5.0]), 2.0, 1.0)

    def test_peak(self):
        assert splat_opacity(self.pg, 0.7, [5, 5]) == 0.7

    def test_half_height(self):
        d = 2.0 * math.sqrt(2 * math.log(2))
        np.testing.assert_allclose(splat_opacity(self.pg, 0.7, [5 + d, 5]), 0.35, rtol=1e-14)

    def test_cutoff(self):
        assert splat_opacity(self.pg, 0.7, [5 + 6.001, 5]) == 0.0
        assert splat_opacity(self.pg, 0.7, [5 + 5.999, 5]) > 0.0


class TestCompositePixel:
    def test_empty(self):
        c, d, w, trace = composite_pixel([], (0.2, 0.3, 0.4), far=50.0)
        np.testing.assert_array_equal(c, [0.2, 0.3, 0.4])
        assert (d, w, trace) == (50.0, 0.0, [])

    def test_single(self):
        c, d, w, _ = composite_pixel([(0.5, (1, 0, 0), 2.0)], (0, 0, 0))
        np.testing.assert_allclose(c, [1 - math.exp(-0.5), 0, 0], rtol=1e-15)
        np.testing.assert_allclose(c[0], 0.3934693402873666, rtol=1e-15)

    def test_two_terms_symbolic(self):
        r1, r2 = sp.Rational(3, 10), sp.Rational(7, 5)
        c1, c2, bg = sp.Matrix([1, 0, 0.5]), sp.Matrix([0, 1, 0.25]), sp.Matrix([0.5, 0.5, 0.5])
        a1, a2 = 1 - sp.exp(-r1), 1 - sp.exp(-r2)
        t2 = sp.exp(-r1)
        t3 = t2 * sp.exp(-r2)
        color = a1 * c1 + t2 * a2 * c2 + t3 * bg
        depth = a1 * 1 + t2 * a2 * 2 + t3 * 100
        c, d, w, trace = composite_pixel([(0.3, (1, 0, 0.5), 1.0), (1.4, (0, 1, 0.25), 2.0)])
        np.testing.assert_allclose(c, np.array(color.evalf(30), dtype=float).ravel(), rtol=1e-14)
        np.testing.assert_allclose(d, float(depth.evalf(30)), rtol=1e-14)
        np.testing.assert_allclose(w, float((1 - t3).evalf(30)), rtol=1e-14)
        assert [t.transmittance_before for t in trace] == pytest.approx([1.0, math.exp(-0.3)])

    def test_unsorted(self):
        with pytest.raises(UnsortedContributionsError):
            composite_pixel([(0.3, (0, 0, 0), 2.0), (0.3, (0, 0, 0), 1.0)])

    def test_trace_invariants(self):
        rng = np.random.default_rng(2)
        contrib = sorted([(rng.uniform(0, 3), rng.uniform(0, 1, 3), rng.uniform(1, 5))
                          for _ in range(20)], key=lambda t: t[2])
        _, _, w, trace = composite_pixel(contrib)
        ts = [t.transmittance_before for t in trace]
        assert all(b <= a for a, b in zip(ts, ts[1:]))
        assert all(0 <= t.alpha < 1 for t in trace)
        np.testing.assert_allclose(1 - w, math.exp(-sum(c[0] for c in contrib)), rtol=0, atol=1e-12)


class TestRender:
    def test_empty_scene_is_background(self):
        out = render(SceneModel(), IDENT, CAM16, RenderSettings((0.1, 0.2, 0.3), 42.0))
        np.testing.assert_array_equal(out.image.rgb, np.broadcast_to([0.1, 0.2, 0.3], (16, 16, 3)))
        np.testing.assert_array_equal(out.image.depth, 42.0)
        np.testing.assert_array_equal(out.per_pixel_weight_sum, 0.0)

    def test_single_gaussian_center_pixel(self):
        # center exactly on pixel (7, 7)
        scene = SceneModel.from_arrays([[-0.5 * 2 / 16, -0.5 * 2 / 16, 2.0]], [0.2], [0.9],
                                       [[1.0, 1.0, 1.0]])
        out = render(scene, IDENT, CAM16)
        lum = out.image.rgb.sum(-1)
        assert np.unravel_index(np.argmax(lum), lum.shape) == (7, 7)
        a = 1 - math.exp(-0.9)
        np.testing.assert_allclose(out.image.rgb[7, 7], a + (1 - a) * 0.5, rtol=1e-12)
        np.testing.assert_allclose(out.image.depth[7, 7], a * 2.0 + (1 - a) * 100.0, rtol=1e-12)

    def test_weight_sum_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            scene = random_scene(rng, int(rng.integers(0, 15)), spread=1.0)
            w = render(scene, IDENT, CAM16).per_pixel_weight_sum
            assert np.all(w >= 0) and np.all(w <= 1)

    def test_matches_reference_compositor(self):
        rng = np.random.default_rng(1)
        scene = random_scene(rng, 8)
        out = render(scene, IDENT, CAM16)
        pgs = [project_gaussian(g, IDENT, CAM16, i) for i, g in enumerate(scene.gaussians)]
        order = sorted(range(len(pgs)), key=lambda i: (pgs[i].depth, i))
        for row, col in [(3, 4), (8, 8), (12, 2), (0, 15)]:
            pix = (col + 0.5, row + 0.5)
            contrib = [(splat_opacity(pgs[i], scene.opacity[i], pix), scene.color[i], pgs[i].depth)
                       for i in order]
            contrib = [c for c in contrib if c[0] > 0]
            c, d, w, _ = composite_pixel(contrib, DEFAULT_BACKGROUND)
            np.testing.assert_allclose(out.image.rgb[row, col], c, rtol=0, atol=1e-12)
            np.testing.assert_allclose(out.image.depth[row, col], d, rtol=1e-12)
            # telescoping: 1 - weight_sum is the product of the per-splat factors
            np.testing.assert_allclose(1 - out.per_pixel_weight_sum[row, col],
                                       math.prod(math.exp(-c[0]) for c in contrib),
                                       rtol=0, atol=1e-12)

    def test_permutation_disjoint_footprints(self):
        mu = [[-0.6, -0.6, 2.0], [0.6, -0.6, 2.5], [-0.6, 0.6, 3.0], [0.6, 0.6, 2.2]]
        scene = SceneModel.from_arrays(mu, 0.05, [0.5, 0.6, 0.7, 0.8],
                                       [[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0]])
        a = render(scene, IDENT, CAM16).image
        b = render(scene.subset([2, 0, 3, 1]), IDENT, CAM16).image
        np.testing.assert_array_equal(a.rgb, b.rgb)
        np.testing.assert_array_equal(a.depth, b.depth)

    def test_monotone_occlusion(self):
        behind = [0.05, 0.0, 3.0]
        for o in [0.1, 0.4, 0.8]:
            lo = SceneModel.from_arrays([[0, 0, 2.0], behind], [0.2, 0.2], [o, 0.9],
                                        [[1, 0, 0], [0, 1, 0]])
            hi = SceneModel.from_arrays([[0, 0, 2.0], behind], [0.2, 0.2], [o + 0.1, 0.9],
                                        [[1, 0, 0], [0, 1, 0]])
            w_lo = render(lo.subset([0]), IDENT, CAM16).per_pixel_weight_sum
            w_hi = render(hi.subset([0]), IDENT, CAM16).per_pixel_weight_sum
            # behind-Gaussian weight = total minus front
            back_lo = render(lo, IDENT, CAM16).per_pixel_weight_sum - w_lo
            back_hi = render(hi, IDENT, CAM16).per_pixel_weight_sum - w_hi
            assert np.all(back_hi <= back_lo + 1e-15)


class TestLoss:
    def test_identical(self):
        img = random_observation(np.random.default_rng(0))
        assert reconstruction_loss(img, img) == 0.0

    def test_constant_offset(self):
        rng = np.random.default_rng(1)
        a = RgbdImage(rng.uniform(0.2, 0.8, (4, 4, 3)), rng.uniform(1, 2, (4, 4)))
        b = RgbdImage(a.rgb + 0.1, a.depth)
        np.testing.assert_allclose(reconstruction_loss(a, b), 0.3, rtol=1e-12)

    def test_brute_force(self):
        rng = np.random.default_rng(2)
        a, b = random_observation(rng, 5, 7), random_observation(rng, 5, 7)
        total = 0.0
        for i in range(5):
            for j in range(7):
                total += sum(abs(a.rgb[i, j, c] - b.rgb[i, j, c]) for c in range(3))
                if b.depth[i, j] < 100.0:
                    total += 0.3 * abs(a.depth[i, j] - b.depth[i, j])
        np.testing.assert_allclose(reconstruction_loss(a, b, 0.3), total / 35, rtol=1e-13)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            reconstruction_loss(RgbdImage(np.zeros((2, 2, 3)), np.zeros((2, 2))),
                                RgbdImage(np.zeros((2, 3, 3)), np.zeros((2, 3))))


class TestLossGradient:
    def test_zero_at_optimum(self):
        scene = random_scene(np.random.default_rng(3), 5)
        obs = render(scene, IDENT, CAM16).image
        loss, g = loss_and_gradient(scene, IDENT, CAM16, obs)
        assert loss == 0.0
        np.testing.assert_array_equal(g, 0.0)

    def test_single_pixel_symbolic(self):
        x, y, z, ls, lo, r, g, b = sp.symbols("x y z ls lo r g b", real=True)
        cam = Camera(3.0, 3.0, 0.25, 0.75, 1, 1)
        px = 3 * x / z + sp.Rational(1, 4)
        py = 3 * y / z + sp.Rational(3, 4)
        rad = sp.exp(ls) * 3 / z
        o = 1 / (1 + sp.exp(-lo))
        rho = o * sp.exp(-((sp.Rational(1, 2) - px) ** 2 + (sp.Rational(1, 2) - py) ** 2) / (2 * rad ** 2))
        a = 1 - sp.exp(-rho)
        T = sp.exp(-rho)
        obs_c, obs_d = (0.9, 0.1, 0.45), 1.0
        color = [a * c + T * 0.5 for c in (r, g, b)]
        depth = a * z + T * 100
        # signs of the residuals at the evaluation point are fixed below
        loss = (color[0] - obs_c[0]) * -1 + (color[1] - obs_c[1]) + (color[2] - obs_c[2]) \
            + 0.5 * (depth - obs_d)
        w = [0.05, -0.03, 2.0, math.log(0.1), 0.4, 0.8, 0.3, 0.2]
        subs = dict(zip((x, y, z, ls, lo, r, g, b), w))
        expected = [float(sp.diff(loss, s).subs(subs)) for s in (x, y, z, ls, lo, r, g, b)]
        scene = SceneModel.from_vector(np.array(w))
        obs = RgbdImage(np.array(obs_c).reshape(1, 1, 3), np.array([[obs_d]]))
        img = render(scene, IDENT, cam).image
        assert np.array_equal(np.sign(img.rgb[0, 0] - obs_c), [-1, 1, 1])
        np.testing.assert_allclose(loss_gradient(scene, IDENT, cam, obs), expected, rtol=1e-10)

    @pytest.mark.parametrize("seed", range(4))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        scene = random_scene(rng, int(rng.integers(1, 8)))
        pose = look_at([0.1, -0.2, 0.0], [0.0, 0.0, 2.0], up=[0, -1, 0])
        obs = random_observation(rng)
        g = loss_gradient(scene, pose, CAM16, obs)
        fd, kink = loss_fd(scene, pose, CAM16, obs)
        assert (~kink).sum() >= 0.5 * len(g)
        assert relative_error(g, fd)[~kink].max() <= 1e-3


class TestJacobianDiag:
    def test_culled_is_zero(self):
        scene = SceneModel.from_arrays([[0, 0, 2.0], [0, 0, -2.0]], 0.2, 0.5, [[1, 0, 0], [0, 1, 0]])
        j = render_jacobian_diag(scene, IDENT, CAM16).reshape(2, 8)
        assert np.all(j[1] == 0)
        assert np.all(j[0] > 0)

    def test_single_pixel_symbolic(self):
        x, y, z, ls, lo, r, g, b = sp.symbols("x y z ls lo r g b", real=True)
        px = 3 * x / z + sp.Rational(1, 4)
        py = 3 * y / z + sp.Rational(3, 4)
        rad = sp.exp(ls) * 3 / z
        o = 1 / (1 + sp.exp(-lo))
        rho = o * sp.exp(-((sp.Rational(1, 2) - px) ** 2 + (sp.Rational(1, 2) - py) ** 2) / (2 * rad ** 2))
        a = 1 - sp.exp(-rho)
        color = [a * c + sp.exp(-rho) * 0.5 for c in (r, g, b)]
        syms = (x, y, z, ls, lo, r, g, b)
        w = [0.05, -0.03, 2.0, math.log(0.1), 0.4, 0.8, 0.3, 0.2]
        subs = dict(zip(syms, w))
        expected = [sum(float(sp.diff(c, s).subs(subs)) ** 2 for c in color) for s in syms]
        got = render_jacobian_diag(SceneModel.from_vector(np.array(w)), IDENT,
                                   Camera(3.0, 3.0, 0.25, 0.75, 1, 1))
        np.testing.assert_allclose(got, expected, rtol=1e-10)

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("depth_weight", [0.0, 0.5])
    def test_dense_finite_difference(self, seed, depth_weight):
        rng = np.random.default_rng(200 + seed)
        scene = random_scene(rng, int(rng.integers(2, 10)))
        pose = look_at([0.0, 0.1, -0.1], [0.05, 0.0, 2.0], up=[0, -1, 0])
        got = render_jacobian_diag(scene, pose, CAM16, depth_weight=depth_weight)
        J, kink = dense_jacobian(scene, pose, CAM16, depth_weight=depth_weight)
        expected = (J ** 2).sum(0)
        assert np.all(got >= 0)
        assert relative_error(got, expected, floor=1e-8)[~kink].max() <= 1e-3
