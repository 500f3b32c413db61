"""Loss terms: tabulated values, independent oracles, differentiability."""

import numpy as np
import pytest

from fdcheck import check_grads
from sfmc import gradcore as gc
from sfmc import losses
from sfmc.depthnet import DepthHypothesis
from sfmc.errors import EmptySupervision
from sfmc.geometry import CameraIntrinsics, Se3Pose, se3_exp
from sfmc.motion import PoseGraph, initialize_poses

HYP = DepthHypothesis.linear(1.0, 80.0, 32)
K = CameraIntrinsics(fx=30.0, fy=30.0, cx=11.5, cy=7.5, width=24, height=16)


class TestL1Depth:
    def test_zero_at_ground_truth(self):
        z = np.full((4, 4), 3.0)
        assert losses.l1_depth(z, z, np.ones((4, 4), bool)).item() == 0.0

    def test_constant_offset(self):
        rng = np.random.default_rng(0)
        z = rng.uniform(1, 5, (4, 4))
        valid = rng.random((4, 4)) > 0.4
        got = losses.l1_depth(z + 0.75, z, valid)
        np.testing.assert_allclose(got.values, 0.75, rtol=1e-12)

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(1)
        z = rng.uniform(1, 5, (4, 4))
        zs = rng.uniform(1, 5, (4, 4))
        valid = rng.random((4, 4)) > 0.3
        acc, cnt = 0.0, 0
        for i in range(4):
            for j in range(4):
                if valid[i, j]:
                    acc += abs(z[i, j] - zs[i, j])
                    cnt += 1
        np.testing.assert_allclose(losses.l1_depth(z, zs, valid).values, acc / cnt)

    def test_empty_mask_raises(self):
        with pytest.raises(EmptySupervision):
            losses.l1_depth(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), bool))


class TestFlowLoss:
    def test_zero_for_equal_graphs(self):
        rng = np.random.default_rng(2)
        g = initialize_poses(3)
        for t in range(3):
            g = g.replaced(t, Se3Pose(np.eye(3), np.array([0.2 * (t - 1), 0, 0])))
        z = rng.uniform(4, 12, (16, 24))
        assert losses.flow_loss(g, g, z, K).item() == 0.0

    def test_planar_translation_oracle(self):
        # pure-x translation error t at constant depth -> per-pixel error fx*|t|/Z
        depth = 10.0
        terr = 0.35
        gt = PoseGraph([Se3Pose(np.eye(3), np.array([0.5, 0.0, 0.0])),
                        Se3Pose.identity()], 1)
        pred = gt.replaced(0, Se3Pose(np.eye(3), np.array([0.5 + terr, 0.0, 0.0])))
        z = np.full((16, 24), depth)
        got = losses.flow_loss(pred, gt, z, K)
        np.testing.assert_allclose(got.values, K.fx * terr / depth, rtol=1e-9)

    def test_invalid_reprojections_excluded(self):
        # huge translation pushes many pixels out of view; loss averages the rest
        gt = PoseGraph([Se3Pose.identity(), Se3Pose.identity()], 1)
        pred = gt.replaced(0, Se3Pose(np.eye(3), np.array([2.0, 0.0, 0.0])))
        z = np.full((16, 24), 5.0)
        got = losses.flow_loss(pred, gt, z, K)
        assert np.isfinite(got.values)
        # every included pixel contributes exactly fx*2/5 = 12 px
        np.testing.assert_allclose(got.values, K.fx * 2.0 / 5.0, rtol=1e-9)

    def test_differentiable_in_depth(self):
        rng = np.random.default_rng(3)
        gt = initialize_poses(3)
        pred = gt.replaced(0, Se3Pose(np.eye(3), np.array([0.1, 0.02, 0.0])))
        z0 = rng.uniform(4, 8, (4, 6))
        k_small = CameraIntrinsics(10.0, 10.0, 2.5, 1.5, 6, 4)
        check_grads(lambda z: losses.flow_loss(pred, gt, z, k_small), [z0], tol=1e-5)


class TestSmoothness:
    def test_constant_depth_is_zero(self):
        z = np.full((5, 6), 4.0)
        img = np.full((3, 5, 6), 0.5)
        m = np.ones((5, 6))
        assert losses.smoothness(z, m).item() == 0.0
        assert losses.smoothness_edge_aware(z, img, m).item() == 0.0

    def test_linear_ramp_gives_mean_slope(self):
        slope = 0.3
        z = np.tile(np.arange(6) * slope, (5, 1))
        m = np.ones((5, 6))
        np.testing.assert_allclose(losses.smoothness(z, m).values, slope, rtol=1e-12)
        img = np.full((3, 5, 6), 0.5)
        np.testing.assert_allclose(
            losses.smoothness_edge_aware(z, img, m).values, slope, rtol=1e-12
        )

    def test_edge_aware_suppresses_coinciding_edges(self):
        # depth step aligned with an image edge of gradient magnitude 5
        z = np.zeros((4, 8))
        z[:, 4:] = 2.0
        img = np.zeros((4, 8))
        img[:, 4:] = 5.0
        m = np.ones((4, 8))
        plain = losses.smoothness(z, m).item()
        aware = losses.smoothness_edge_aware(z, img, m).item()
        assert aware < 0.1 * plain

    def test_differentiable(self):
        rng = np.random.default_rng(4)
        z0 = rng.uniform(2, 6, (4, 5))
        img = rng.random((3, 4, 5))
        m = (rng.random((4, 5)) > 0.3).astype(float)
        check_grads(lambda z: losses.smoothness(z, m), [z0])
        check_grads(lambda z: losses.smoothness_edge_aware(z, img, m), [z0])


class TestUnimodalTarget:
    def test_concentrates_at_exact_bin(self):
        # bin spacing ~2.55 m >= 10 sigma for sigma = 0.25
        zs = np.full((2, 2), HYP.bins[5])
        sigma = np.full((2, 2), 0.25)
        p = losses.unimodal_target(zs, sigma, HYP)
        assert p.values[5].min() > 0.9
        np.testing.assert_allclose(p.values.sum(axis=0), 1.0, atol=1e-12)

    def test_symmetric_between_bins(self):
        mid = 0.5 * (HYP.bins[3] + HYP.bins[4])
        p = losses.unimodal_target(np.full((1, 1), mid), np.full((1, 1), 1.0), HYP)
        np.testing.assert_allclose(p.values[3, 0, 0], p.values[4, 0, 0], rtol=1e-12)

    def test_large_sigma_approaches_uniform(self):
        p = losses.unimodal_target(
            np.full((1, 1), 40.0), np.full((1, 1), 1e9), HYP
        )
        np.testing.assert_allclose(p.values[:, 0, 0], 1.0 / 32.0, rtol=1e-6)

    def test_differentiable_in_sigma(self):
        rng = np.random.default_rng(5)
        zs = rng.uniform(5, 60, (2, 3))
        sig0 = rng.uniform(0.5, 2.0, (2, 3))
        check_grads(
            lambda s: gc.sum(losses.unimodal_target(zs, s, HYP) ** 2.0), [sig0]
        )


class TestFocalLoss:
    def test_one_hot_like_matches_loop(self):
        d = 8
        hyp = DepthHypothesis.linear(1, 8, d)
        p = np.zeros((d, 1, 1))
        p[3] = 1.0
        got = losses.focal_loss(gc.constant(p), gc.constant(p), 2.0, np.ones((1, 1), bool))
        assert np.isfinite(got.values)
        q = np.clip(p, 1e-12, 1 - 1e-12)
        expect = ((1 - q) ** -2.0 * (-p * np.log(q))).sum()
        np.testing.assert_allclose(got.values, expect, rtol=1e-12)
        _ = hyp

    def test_delta_zero_is_plain_cross_entropy(self):
        rng = np.random.default_rng(6)
        p = rng.dirichlet(np.ones(8), size=(2, 2)).transpose(2, 0, 1)
        q = rng.dirichlet(np.ones(8), size=(2, 2)).transpose(2, 0, 1)
        got = losses.focal_loss(gc.constant(p), gc.constant(q), 0.0, np.ones((2, 2), bool))
        qc = np.clip(q, 1e-12, 1 - 1e-12)
        expect = (-p * np.log(qc)).sum(axis=0).mean()
        np.testing.assert_allclose(got.values, expect, rtol=1e-12)

    def test_uniform_closed_form(self):
        d = 32
        p = np.full((d, 1, 1), 1.0 / d)
        got = losses.focal_loss(gc.constant(p), gc.constant(p), 2.0, np.ones((1, 1), bool))
        expect = d * (1 - 1 / d) ** -2.0 * (1 / d) * np.log(d)
        np.testing.assert_allclose(got.values, expect, rtol=1e-12)

    def test_positive_exponent_variant(self):
        rng = np.random.default_rng(7)
        p = rng.dirichlet(np.ones(4), size=(1, 1)).transpose(2, 0, 1)
        q = rng.dirichlet(np.ones(4), size=(1, 1)).transpose(2, 0, 1)
        got = losses.focal_loss(
            gc.constant(p), gc.constant(q), 2.0, np.ones((1, 1), bool),
            positive_exponent=True,
        )
        qc = np.clip(q, 1e-12, 1 - 1e-12)
        expect = ((1 - qc) ** 2.0 * (-p * np.log(qc))).sum()
        np.testing.assert_allclose(got.values, expect, rtol=1e-12)

    def test_permutation_equivariant_over_depth(self):
        rng = np.random.default_rng(8)
        p = rng.dirichlet(np.ones(6), size=(2, 2)).transpose(2, 0, 1)
        q = rng.dirichlet(np.ones(6), size=(2, 2)).transpose(2, 0, 1)
        perm = rng.permutation(6)
        a = losses.focal_loss(gc.constant(p), gc.constant(q), 2.0, np.ones((2, 2), bool))
        b = losses.focal_loss(
            gc.constant(p[perm]), gc.constant(q[perm]), 2.0, np.ones((2, 2), bool)
        )
        np.testing.assert_allclose(a.values, b.values, rtol=1e-12)

    def test_differentiable_in_p_and_target(self):
        rng = np.random.default_rng(9)
        logits_p = rng.standard_normal((5, 2, 2))
        logits_q = rng.standard_normal((5, 2, 2))
        valid = np.ones((2, 2), bool)

        def build(lp, lq):
            return losses.focal_loss(
                gc.softmax(lp, axis=0), gc.softmax(lq, axis=0), 2.0, valid
            )

        check_grads(build, [logits_p, logits_q])


class TestSe3Geodesic:
    def test_zero_for_identical(self):
        g = initialize_poses(3, prior_velocity=(0, 0, 1))
        assert losses.se3_geodesic(g, g) == 0.0

    def test_pure_translation_offset(self):
        gt = initialize_poses(3)
        pred = gt.replaced(0, Se3Pose(np.eye(3), np.array([0.3, 0.0, 0.0])))
        np.testing.assert_allclose(losses.se3_geodesic(pred, gt), 0.3 / 2, rtol=1e-12)

    def test_rotation_angle_oracle(self):
        rng = np.random.default_rng(10)
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        angle = np.pi / 6
        gt = initialize_poses(3)
        rot = se3_exp(np.concatenate([np.zeros(3), axis * angle]))
        pred = gt.replaced(2, rot)
        np.testing.assert_allclose(losses.se3_geodesic(pred, gt), angle / 2, rtol=1e-9)


class TestPhotometric:
    def test_identical_images_zero(self):
        rng = np.random.default_rng(11)
        img = rng.random((3, 8, 10))
        got = losses.photometric(img, img)
        assert got.values < 1e-14

    def test_min_fusion_takes_pixelwise_minimum(self):
        a = gc.constant(np.full((4, 4), 0.2))
        b = gc.constant(np.full((4, 4), 0.1))
        np.testing.assert_allclose(losses.min_fusion([a, b]).values, 0.1, rtol=1e-12)

    def test_ssim_matches_reference_loops(self):
        rng = np.random.default_rng(12)
        x = np.full((6, 7), 0.5)
        y = x + rng.uniform(-0.05, 0.05, (6, 7))
        got_map = losses.photometric_map(x, y, alpha=1.0)
        ssim_got = 1.0 - 2.0 * got_map.values  # invert alpha*(1-ssim)/2 at alpha=1

        c1, c2 = 0.01**2, 0.03**2
        h, w = x.shape
        expect = np.zeros((h, w))
        for i in range(h):
            for j in range(w):
                i0, i1 = max(0, i - 1), min(h, i + 2)
                j0, j1 = max(0, j - 1), min(w, j + 2)
                px = x[i0:i1, j0:j1]
                py = y[i0:i1, j0:j1]
                mx, my = px.mean(), py.mean()
                vx = (px * px).mean() - mx * mx
                vy = (py * py).mean() - my * my
                vxy = (px * py).mean() - mx * my
                expect[i, j] = ((2 * mx * my + c1) * (2 * vxy + c2)) / (
                    (mx * mx + my * my + c1) * (vx + vy + c2)
                )
        np.testing.assert_allclose(ssim_got, expect, rtol=1e-10)

    def test_differentiable(self):
        rng = np.random.default_rng(13)
        x = rng.random((2, 4, 5))
        y0 = rng.random((2, 4, 5))
        check_grads(lambda y: losses.photometric(x, y, alpha=0.85), [y0])


class TestSequenceLoss:
    def test_single_prediction(self):
        assert losses.sequence_loss([5.0], 0.5).item() == 5.0

    def test_two_predictions(self):
        assert losses.sequence_loss([4.0, 2.0], 0.5).item() == 4.0

    def test_three_predictions(self):
        assert losses.sequence_loss([1.0, 1.0, 1.0], 0.5).item() == 1.75

    def test_monotone_in_each_term(self):
        rng = np.random.default_rng(14)
        base = list(rng.uniform(0.5, 2.0, 4))
        ref = losses.sequence_loss(base, 0.5).item()
        for i in range(4):
            bumped = list(base)
            bumped[i] += 0.1
            assert losses.sequence_loss(bumped, 0.5).item() > ref


def _perfect_setup():
    rng = np.random.default_rng(15)
    h, w = 16, 24
    k = CameraIntrinsics(fx=30.0, fy=30.0, cx=11.5, cy=7.5, width=w, height=h)
    z_gt = np.full((h, w), 10.0)
    graph = initialize_poses(3)
    for t in range(3):
        graph = graph.replaced(t, Se3Pose(np.eye(3), np.array([0.2 * (t - 1), 0, 0])))
    missing = np.zeros((h, w), bool)
    missing[1::2] = True  # constant plateau under the smoothness mask
    image = rng.random((3, h, w))
    return k, z_gt, graph, missing, image


class TestTotalSupervised:
    def test_perfect_prediction_reduces_to_focal_floor(self):
        k, z_gt, graph, missing, image = _perfect_setup()
        hyp = HYP
        kq = k.downscale(4)
        sigma_q = gc.constant(np.full((4, 6), 0.5))
        p_star = losses.unimodal_target(z_gt[::4, ::4], sigma_q, hyp)
        weights = losses.LossWeights()
        total, terms = losses.total_supervised(
            [gc.constant(z_gt)], [gc.constant(z_gt[::4, ::4])], [p_star],
            sigma_q, graph, graph, z_gt, missing, image, k, hyp, weights,
        )
        floor = losses.focal_loss(
            p_star, p_star, weights.focal_delta, ~missing[::4, ::4]
        )
        np.testing.assert_allclose(
            total.values, weights.supervised[2] * floor.values, rtol=1e-9, atol=1e-12
        )
        assert terms["l1"] == 0.0 and terms["flow"] == 0.0

    def test_default_weights(self):
        w = losses.LossWeights()
        assert w.supervised == (1.0, 0.02, 0.002, 1.0)
        assert w.semi == (10.0, 0.02, 10.0, 1.0)
        assert w.gamma == 0.5 and w.focal_delta == 2.0 and w.beta == 1.0
        assert w.sigma_scale == 2.0 and w.sigma_floor == 0.25

    def test_zero_focal_weight_isolates_uncertainty_gradient(self):
        k, z_gt, graph, missing, image = _perfect_setup()
        rng = np.random.default_rng(16)
        sigma_q = gc.parameter(rng.uniform(0.3, 2.0, (4, 6)))
        z_pred = gc.constant(z_gt + rng.uniform(-0.5, 0.5, z_gt.shape))
        p = gc.softmax(gc.constant(rng.standard_normal((32, 4, 6))), axis=0)

        weights = losses.LossWeights(supervised=(1.0, 0.02, 0.0, 1.0))
        total, _ = losses.total_supervised(
            [z_pred], [gc.constant(z_gt[::4, ::4])], [p], sigma_q,
            graph, graph, z_gt, missing, image, k, HYP, weights,
        )
        total.backward()
        assert sigma_q.grad is None or np.abs(sigma_q.grad).max() == 0.0

        sigma_q2 = gc.parameter(sigma_q.values.copy())
        weights2 = losses.LossWeights()
        total2, _ = losses.total_supervised(
            [z_pred], [gc.constant(z_gt[::4, ::4])], [p], sigma_q2,
            graph, graph, z_gt, missing, image, k, HYP, weights2,
        )
        total2.backward()
        assert sigma_q2.grad is not None and np.abs(sigma_q2.grad).max() > 0


class TestTotalSemiSupervised:
    def test_static_scene_with_exact_state_has_tiny_photometric(self):
        # integer-pixel flow so the bilinear warp reconstructs exactly
        h, w = 16, 24
        k = CameraIntrinsics(fx=10.0, fy=10.0, cx=11.5, cy=7.5, width=w, height=h)
        depth = 5.0
        shift = 2  # fx * tx / Z = 10 * 1 / 5
        rng = np.random.default_rng(17)
        key_img = rng.random((3, h, w))
        # camera for frame t displaced by tx=+1: g_t = (I, [-1, 0, 0]) world->cam
        img_right = np.zeros((3, h, w))
        img_right[:, :, : w - shift] = key_img[:, :, shift:]
        # frame 0 displaced by tx=-1
        img_left = np.zeros((3, h, w))
        img_left[:, :, shift:] = key_img[:, :, : w - shift]

        graph = PoseGraph(
            [
                Se3Pose(np.eye(3), np.array([1.0, 0, 0])),
                Se3Pose.identity(),
                Se3Pose(np.eye(3), np.array([-1.0, 0, 0])),
            ],
            1,
        )
        weights = losses.LossWeights(semi=(10.0, 0.0, 10.0, 1.0))
        total, terms = losses.total_semi_supervised(
            [gc.constant(np.full((h, w), depth))],
            graph, graph, [img_left, key_img, img_right], k, weights,
        )
        assert terms["photo_d"] < 1e-6
        assert terms["photo_m"] < 1e-6
        assert terms["se3"] == 0.0

    def test_semi_default_weights_used(self):
        w = losses.LossWeights()
        assert w.semi == (10.0, 0.02, 10.0, 1.0)
