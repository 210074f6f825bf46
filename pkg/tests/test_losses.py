"""Loss-stack tests: closed-form identities, scalar oracles, gradient checks."""

import numpy as np
import pytest

import oracles
from salgen import losses as L
from salgen import tensor as T
from salgen.losses import LossWeights, ScribbleMask
from salgen.tensor import Tensor

BIG = 40.0  # logit that saturates sigmoid to exactly 1.0 in float64


class TestEdgeWeight:
    def test_all_zero_mask_gives_unit_weight(self):
        w = L.edge_weight(Tensor(np.zeros((1, 1, 16, 16))))
        assert np.all(w.numpy() == 1.0)

    def test_all_ones_flat_away_from_borders(self):
        w = L.edge_weight(Tensor(np.ones((1, 1, 64, 64)))).numpy()[0, 0]
        assert np.all(w[15:-15, 15:-15] == 1.0)
        assert w[0, 0] > 1.0  # zero padding leaks in at the border

    def test_vertical_step_edge_peak(self):
        y = np.zeros((1, 1, 64, 64))
        y[:, :, :, 32:] = 1.0
        w = L.edge_weight(Tensor(y)).numpy()[0, 0]
        oracle = oracles.edge_weight_oracle(y[0, 0])
        np.testing.assert_allclose(w, oracle, atol=1e-10)
        peak = w[32, :].max()
        assert abs(peak - 3.5) <= 0.1

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            L.edge_weight(Tensor(np.full((1, 1, 4, 4), 0.5)))


class TestStructureAwareLoss:
    def test_perfect_prediction_is_zero(self, rng):
        y = (rng.random((2, 1, 8, 8)) > 0.5).astype(float)
        s = Tensor(np.where(y > 0, BIG, -BIG))
        loss = L.structure_aware_loss(s, Tensor(y)).item()
        assert 0.0 <= loss < 1e-12

    def test_disjoint_prediction_iou_closed_form(self):
        # all-background mask keeps omega == 1; sigma(s) == 1 everywhere
        y = np.zeros((1, 1, 8, 8))
        s = np.full((1, 1, 8, 8), BIG)
        total, _, iou = oracles.structure_loss_oracle(s, y)
        n = 64
        np.testing.assert_allclose(iou, 1.0 - 1.0 / (n + 1), atol=1e-12)
        got = L.structure_aware_loss(Tensor(s), Tensor(y)).item()
        np.testing.assert_allclose(got, total, atol=1e-10)

    def test_random_pair_matches_scalar_oracle(self, rng):
        for _ in range(3):
            y = (rng.random((2, 1, 8, 8)) > 0.5).astype(float)
            s = rng.standard_normal((2, 1, 8, 8)) * 2.0
            want, _, _ = oracles.structure_loss_oracle(s, y)
            got = L.structure_aware_loss(Tensor(s), Tensor(y)).item()
            np.testing.assert_allclose(got, want, atol=1e-10)

    def test_horizontal_flip_invariance(self, rng):
        y = (rng.random((1, 1, 8, 8)) > 0.5).astype(float)
        s = rng.standard_normal((1, 1, 8, 8))
        a = L.structure_aware_loss(Tensor(s), Tensor(y)).item()
        b = L.structure_aware_loss(Tensor(s[:, :, :, ::-1].copy()),
                                   Tensor(y[:, :, :, ::-1].copy())).item()
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_gradient_on_random_8x8_pair(self, rng):
        y = Tensor((rng.random((1, 1, 8, 8)) > 0.5).astype(float))
        err = T.finite_diff_check(lambda s: L.structure_aware_loss(s, y),
                                  Tensor(rng.standard_normal((1, 1, 8, 8))))
        assert err <= 1e-4

    def test_nan_rejected(self):
        s = np.zeros((1, 1, 4, 4))
        s[0, 0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            L.structure_aware_loss(Tensor(s), Tensor(np.zeros((1, 1, 4, 4))))


class TestDepthLoss:
    def test_identical_maps_zero(self, rng):
        d = Tensor(rng.random((1, 1, 8, 8)))
        w = LossWeights()
        assert L.depth_loss(d, d, w).item() == 0.0

    def test_constant_shift_l1_term(self, rng):
        w = LossWeights()
        gt = rng.random((1, 1, 8, 8)) * 0.9
        pred = gt + 0.1
        loss = L.depth_loss(Tensor(pred), Tensor(gt), w).item()
        ssim_part = w.beta_ssim * L.dssim(Tensor(pred), Tensor(gt)).item()
        np.testing.assert_allclose(loss, w.alpha_depth * (ssim_part + (1 - w.beta_ssim) * 0.1),
                                   atol=1e-12)

    def test_binary_complement_decomposition(self, rng):
        w = LossWeights()
        gt = (rng.random((1, 1, 8, 8)) > 0.5).astype(float)
        pred = 1.0 - gt
        dss = L.dssim(Tensor(pred), Tensor(gt)).item()
        want = w.alpha_depth * (w.beta_ssim * dss + (1 - w.beta_ssim) * 1.0)
        got = L.depth_loss(Tensor(pred), Tensor(gt), w).item()
        np.testing.assert_allclose(got, want, atol=1e-12)
        np.testing.assert_allclose(w.alpha_depth * (1 - w.beta_ssim) * 1.0, 0.015)

    def test_out_of_range_rejected(self):
        w = LossWeights()
        with pytest.raises(ValueError):
            L.depth_loss(Tensor(np.full((1, 1, 4, 4), 1.5)),
                         Tensor(np.zeros((1, 1, 4, 4))), w)

    def test_gradient(self, rng):
        w = LossWeights()
        gt = Tensor(rng.random((1, 1, 6, 6)))

        def f(t):
            return L.depth_loss(T.sigmoid(t), gt, w)

        assert T.finite_diff_check(f, Tensor(rng.standard_normal((1, 1, 6, 6)))) <= 1e-4


class TestGanLosses:
    def test_uniform_discriminator_values(self, rng):
        w = LossWeights()
        y = (rng.random((1, 1, 8, 8)) > 0.5).astype(float)
        s = rng.standard_normal((1, 1, 8, 8))
        x = Tensor(rng.random((1, 3, 8, 8)))
        half = Tensor(np.full((1, 1, 8, 8), 0.5))
        l_gen, l_dis = L.gan_losses(Tensor(s), Tensor(y), x, half, half, w)
        l_rec = L.structure_aware_loss(Tensor(s), Tensor(y)).item()
        np.testing.assert_allclose(l_gen.item() - l_rec, w.lambda_adv * np.log(2), atol=1e-10)
        np.testing.assert_allclose(l_dis.item(), 2 * np.log(2), atol=1e-10)

    def test_perfect_discriminator_loss_vanishes(self, rng):
        w = LossWeights()
        y = (rng.random((1, 1, 8, 8)) > 0.5).astype(float)
        s = rng.standard_normal((1, 1, 8, 8))
        x = Tensor(rng.random((1, 3, 8, 8)))
        fake = Tensor(np.zeros((1, 1, 8, 8)))
        real = Tensor(np.ones((1, 1, 8, 8)))
        _, l_dis = L.gan_losses(Tensor(s), Tensor(y), x, fake, real, w)
        assert l_dis.item() < 1e-5

    def test_random_case_matches_scalar_oracle(self, rng):
        w = LossWeights()
        y = (rng.random((2, 1, 6, 6)) > 0.5).astype(float)
        s = rng.standard_normal((2, 1, 6, 6))
        x = Tensor(rng.random((2, 3, 6, 6)))
        fake = rng.random((2, 1, 6, 6))
        real = rng.random((2, 1, 6, 6))
        l_gen, l_dis = L.gan_losses(Tensor(s), Tensor(y), x, Tensor(fake), Tensor(real), w)
        rec, _, _ = oracles.structure_loss_oracle(s, y)
        want_gen = rec + w.lambda_adv * oracles.bce_probs_oracle(fake, 1.0)
        want_dis = oracles.bce_probs_oracle(fake, 0.0) + oracles.bce_probs_oracle(real, 1.0)
        np.testing.assert_allclose(l_gen.item(), want_gen, atol=1e-10)
        np.testing.assert_allclose(l_dis.item(), want_dis, atol=1e-10)

    def test_dis_loss_does_not_reach_generator(self, rng):
        w = LossWeights()
        y = Tensor((rng.random((1, 1, 6, 6)) > 0.5).astype(float))
        s = Tensor(rng.standard_normal((1, 1, 6, 6)), requires_grad=True)
        x = Tensor(rng.random((1, 3, 6, 6)))
        fake_attached = T.sigmoid(s) * 0.5 + 0.25
        fake_detached = T.detach(fake_attached) * 1.0
        real = Tensor(rng.random((1, 1, 6, 6)) * 0.5 + 0.25)
        _, l_dis = L.gan_losses(s, y, x, fake_attached, real, w,
                                disc_out_fake_detached=fake_detached)
        l_dis.backward()
        assert s.grad is None


class TestCvaeLoss:
    def test_identical_gaussians_zero_kl(self, rng):
        mu = Tensor(rng.standard_normal((2, 4)))
        lv = Tensor(rng.standard_normal((2, 4)))
        assert L.kl_diag_gaussians(mu, lv, mu, lv).item() == 0.0

    def test_unit_shift_closed_form(self):
        kl = L.kl_diag_gaussians(Tensor([[1.0]]), Tensor([[0.0]]),
                                 Tensor([[0.0]]), Tensor([[0.0]]))
        np.testing.assert_allclose(kl.item(), 0.5, atol=1e-12)

    def test_matches_scalar_oracle(self, rng):
        mu_q, lv_q = rng.standard_normal((3, 5)), rng.standard_normal((3, 5)) * 0.5
        mu_p, lv_p = rng.standard_normal((3, 5)), rng.standard_normal((3, 5)) * 0.5
        got = L.kl_diag_gaussians(Tensor(mu_q), Tensor(lv_q), Tensor(mu_p), Tensor(lv_p)).item()
        want = oracles.kl_gaussian_oracle(mu_q, lv_q, mu_p, lv_p)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_matches_monte_carlo(self, rng):
        mu_q, lv_q = np.array([0.4, -0.3]), np.array([0.3, -0.6])
        mu_p, lv_p = np.array([-0.2, 0.5]), np.array([-0.1, 0.4])
        z = mu_q + np.exp(lv_q / 2) * rng.standard_normal((1_000_000, 2))
        logq = -0.5 * ((z - mu_q) ** 2 / np.exp(lv_q) + lv_q + np.log(2 * np.pi))
        logp = -0.5 * ((z - mu_p) ** 2 / np.exp(lv_p) + lv_p + np.log(2 * np.pi))
        mc = (logq - logp).sum(axis=1).mean()
        got = L.kl_diag_gaussians(Tensor(mu_q[None]), Tensor(lv_q[None]),
                                  Tensor(mu_p[None]), Tensor(lv_p[None])).item()
        assert abs(got - mc) / mc < 0.02

    def test_kl_gradient(self, rng):
        mu_p = Tensor(rng.standard_normal((1, 4)))
        lv_p = Tensor(rng.standard_normal((1, 4)) * 0.3)

        def f(t):
            mu_q = t[:, :4]
            lv_q = t[:, 4:]
            return L.kl_diag_gaussians(mu_q, lv_q, mu_p, lv_p)

        assert T.finite_diff_check(f, Tensor(rng.standard_normal((1, 8)) * 0.5)) <= 1e-4

    def test_cvae_total_is_rec_plus_kl(self, rng):
        y = (rng.random((1, 1, 6, 6)) > 0.5).astype(float)
        s = rng.standard_normal((1, 1, 6, 6))
        mu_q, lv_q = Tensor([[0.5, 0.1]]), Tensor([[0.0, -0.2]])
        mu_p, lv_p = Tensor([[0.0, 0.0]]), Tensor([[0.1, 0.0]])
        total = L.cvae_loss(Tensor(s), Tensor(y), mu_q, lv_q, mu_p, lv_p).item()
        want = (L.structure_aware_loss(Tensor(s), Tensor(y)).item()
                + L.kl_diag_gaussians(mu_q, lv_q, mu_p, lv_p).item())
        np.testing.assert_allclose(total, want, atol=1e-12)


class TestPartialCE:
    def _scribble(self, rng, shape=(1, 8, 8), frac=0.1):
        labels = np.zeros(shape, np.int8)
        flat = rng.choice(shape[1] * shape[2], size=12, replace=False)
        for n, idx in enumerate(flat):
            labels[0, idx // shape[2], idx % shape[2]] = L.SCRIBBLE_FG if n % 2 else L.SCRIBBLE_BG
        return ScribbleMask(labels)

    def test_all_unknown_rejected(self, rng):
        s = Tensor(rng.standard_normal((1, 1, 8, 8)))
        with pytest.raises(ValueError):
            L.partial_ce(s, ScribbleMask(np.zeros((1, 8, 8), np.int8)))

    def test_perfect_partial_prediction(self, rng):
        scr = self._scribble(rng)
        s = np.where(scr.fg(), BIG, -BIG)[:, None].astype(float)
        assert L.partial_ce(Tensor(s), scr).item() < 1e-12

    def test_gradient_zero_on_unknown_pixels(self, rng):
        scr = self._scribble(rng)
        s = Tensor(rng.standard_normal((1, 1, 8, 8)), requires_grad=True)
        L.partial_ce(s, scr).backward()
        unknown = ~scr.labeled()[:, None]
        assert np.all(s.grad[unknown] == 0.0)
        assert np.any(s.grad[~unknown] != 0.0)

    def test_gradient(self, rng):
        scr = self._scribble(rng)
        err = T.finite_diff_check(lambda t: L.partial_ce(t, scr),
                                  Tensor(rng.standard_normal((1, 1, 8, 8))))
        assert err <= 1e-4


class TestSmoothnessLoss:
    def test_constant_prediction_zero(self, rng):
        x = Tensor(rng.random((1, 3, 8, 8)))
        s = Tensor(np.full((1, 1, 8, 8), 0.4))
        assert L.smoothness_loss(s, x).item() == 0.0

    def test_image_edges_attenuate(self):
        s = np.zeros((1, 1, 8, 8))
        s[:, :, :, 4:] = 1.0
        flat = Tensor(np.full((1, 3, 8, 8), 0.5))
        edged = np.full((1, 3, 8, 8), 0.5)
        edged[:, :, :, 4:] = 1.0  # image step aligned with prediction step
        on_flat = L.smoothness_loss(Tensor(s), flat).item()
        on_edge = L.smoothness_loss(Tensor(s), Tensor(edged)).item()
        assert on_edge < on_flat

    def test_linear_in_step_height(self):
        x = Tensor(np.full((1, 3, 8, 8), 0.5))
        s1 = np.zeros((1, 1, 8, 8))
        s1[:, :, :, 4:] = 0.3
        s2 = s1 * 2.0
        a = L.smoothness_loss(Tensor(s1), x).item()
        b = L.smoothness_loss(Tensor(s2), x).item()
        np.testing.assert_allclose(b, 2 * a, rtol=1e-12)

    def test_gradient(self, rng):
        x = Tensor(rng.random((1, 3, 6, 6)))
        err = T.finite_diff_check(lambda t: L.smoothness_loss(T.sigmoid(t), x),
                                  Tensor(rng.standard_normal((1, 1, 6, 6))))
        assert err <= 1e-4


class TestGatedCrfLoss:
    def test_constant_prediction_zero(self, rng):
        x = Tensor(rng.random((1, 3, 6, 6)))
        s = Tensor(np.full((1, 1, 6, 6), 0.7))
        assert L.gated_crf_loss(s, x).item() == 0.0

    def test_two_pixel_closed_form(self):
        s = Tensor(np.array([0.0, 1.0]).reshape(1, 1, 1, 2))
        x = Tensor(np.full((1, 3, 1, 2), 0.5))
        want = np.exp(-1.0 / (2 * 3.0 ** 2))
        np.testing.assert_allclose(L.gated_crf_loss(s, x).item(), want, atol=1e-12)

    def test_matches_brute_force_pairs(self, rng):
        for size in (3, 6):
            s = rng.random((1, 1, size, size))
            x = rng.random((1, 3, size, size))
            got = L.gated_crf_loss(Tensor(s), Tensor(x)).item()
            want = oracles.gated_crf_oracle(s, x)
            np.testing.assert_allclose(got, want, atol=1e-10)

    def test_validity_gating_matches_brute_force(self, rng):
        s = rng.random((1, 1, 6, 6))
        x = rng.random((1, 3, 6, 6))
        valid = (rng.random((1, 1, 6, 6)) > 0.3).astype(float)
        got = L.gated_crf_loss(Tensor(s), Tensor(x), valid).item()
        want = oracles.gated_crf_oracle(s, x, valid)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_gradient(self, rng):
        x = Tensor(rng.random((1, 3, 6, 6)))
        err = T.finite_diff_check(lambda t: L.gated_crf_loss(T.sigmoid(t), x),
                                  Tensor(rng.standard_normal((1, 1, 6, 6))))
        assert err <= 1e-4


class TestRotationConsistency:
    def test_constant_model_zero(self):
        w = LossWeights()

        def predict(x):
            return Tensor(np.full((x.shape[0], 1, x.shape[2], x.shape[3]), 0.3))

        x = Tensor(np.random.default_rng(0).random((1, 3, 8, 8)))
        for k in L.ROTATION_CHOICES:
            assert L.rotation_consistency_loss(predict, x, w, rotation_k=k).item() == 0.0

    def test_pixelwise_model_is_equivariant(self, rng):
        w = LossWeights()

        def predict(x):
            return T.tmean(x, axis=1, keepdims=True)  # per-pixel grayscale

        x = Tensor(rng.random((1, 3, 8, 8)))
        for k in L.ROTATION_CHOICES:
            assert L.rotation_consistency_loss(predict, x, w, rotation_k=k).item() < 1e-14

    def test_generic_model_positive(self, rng):
        w = LossWeights()
        kern = Tensor(rng.standard_normal((1, 3, 3, 3)))

        def predict(x):
            return T.conv2d(x, kern, padding=1)

        x = Tensor(rng.random((1, 3, 8, 8)))
        loss = L.rotation_consistency_loss(predict, x, w, rotation_k=1).item()
        assert loss > 1e-6

    def test_rng_rotation_choice_is_used(self, rng):
        w = LossWeights()
        kern = Tensor(rng.standard_normal((1, 3, 3, 3)))

        def predict(x):
            return T.conv2d(x, kern, padding=1)

        x = Tensor(rng.random((1, 3, 8, 8)))
        val = L.rotation_consistency_loss(predict, x, w, rng=np.random.default_rng(3))
        assert val.item() >= 0.0
        with pytest.raises(ValueError):
            L.rotation_consistency_loss(predict, x, w)


class TestWeakLoss:
    def _setup(self, rng):
        labels = np.zeros((1, 8, 8), np.int8)
        labels[0, 2, 2:5] = L.SCRIBBLE_FG
        labels[0, 6, 1:6] = L.SCRIBBLE_BG
        scr = ScribbleMask(labels)
        x = Tensor(rng.random((1, 3, 8, 8)))
        kern = Tensor(rng.standard_normal((1, 3, 3, 3)) * 0.5)

        def predict(img):
            return T.conv2d(img, kern, padding=1)

        return scr, x, predict

    def test_weighted_sum_of_components(self, rng):
        w = LossWeights()
        scr, x, predict = self._setup(rng)
        s = predict(x)
        total = L.weak_loss(s, x, scr, w, predict_fn=predict, rotation_k=1).item()
        terms = L.weak_loss_terms(s, x, scr, w, predict_fn=predict, rotation_k=1)
        want = (terms["pce"].item() + w.lambda1 * terms["smooth"].item()
                + w.lambda2 * terms["gcrf"].item()
                + w.lambda3 * terms["consistency"].item())
        np.testing.assert_allclose(total, want, atol=1e-12)

    def test_zeroing_lambda3_removes_consistency_exactly(self, rng):
        scr, x, predict = self._setup(rng)
        s = predict(x)
        w_full = LossWeights()
        w_no_ss = LossWeights(lambda3=0.0)
        full = L.weak_loss(s, x, scr, w_full, predict_fn=predict, rotation_k=2).item()
        no_ss = L.weak_loss(s, x, scr, w_no_ss, predict_fn=predict, rotation_k=2).item()
        cons = L.weak_loss_terms(s, x, scr, w_full, predict_fn=predict,
                                 rotation_k=2)["consistency"].item()
        np.testing.assert_allclose(full - no_ss, w_full.lambda3 * cons, atol=1e-12)

    def test_gradient(self, rng):
        w = LossWeights()
        scr, x, _ = self._setup(rng)
        err = T.finite_diff_check(lambda t: L.weak_loss(t, x, scr, w),
                                  Tensor(rng.standard_normal((1, 1, 8, 8))))
        assert err <= 1e-4


class TestLossWeights:
    def test_defaults_match_contract(self):
        w = LossWeights()
        assert (w.lambda_adv, w.alpha_depth, w.beta_ssim, w.alpha_ss) == (0.1, 0.1, 0.85, 0.85)
        assert (w.lambda1, w.lambda2, w.lambda3) == (0.3, 1.0, 1.2)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda1=-0.1)


class TestNonnegativity:
    def test_losses_nonnegative_on_random_inputs(self, rng):
        w = LossWeights()
        for _ in range(5):
            y = (rng.random((1, 1, 6, 6)) > 0.5).astype(float)
            s = rng.standard_normal((1, 1, 6, 6)) * 2.0
            x = Tensor(rng.random((1, 3, 6, 6)))
            assert L.structure_aware_loss(Tensor(s), Tensor(y)).item() >= 0.0
            assert L.depth_loss(Tensor(rng.random((1, 1, 6, 6))),
                                Tensor(rng.random((1, 1, 6, 6))), w).item() >= 0.0
            assert L.smoothness_loss(T.sigmoid(Tensor(s)), x).item() >= 0.0
            assert L.gated_crf_loss(T.sigmoid(Tensor(s)), x).item() >= 0.0
