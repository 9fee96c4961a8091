"""Tests for training objectives and the frozen perceptual space."""

import math

import pytest
import torch
import torch.nn as nn

from dicfsr.collaboration import CollaborationModel, StepTrace
from dicfsr.losses import (
    Discriminator,
    LossWeights,
    RandomFeaturePyramid,
    align_loss,
    build_feature_extractor,
    d_loss,
    g_adv_loss,
    perceptual_loss,
    pixel_loss,
    total_g_loss,
)
from fdgrad import fd_check, to_f64


class MeanProbe(nn.Module):
    """Stub discriminator whose probability is the input mean."""

    def forward(self, image):
        return image.flatten(1).mean(dim=1)


class FirstTwoPixels(nn.Module):
    """Stub feature extractor reading the first two values of the image."""

    def forward(self, image):
        return image.flatten(1)[:, :2]


def const_image(value, batch=1):
    return torch.full((batch, 3, 8, 8), float(value))


class TestLossWeights:
    def test_phase_presets(self):
        psnr = LossWeights.for_phase("psnr")
        assert (psnr.lambda_adv, psnr.lambda_perc, psnr.beta_align) == (0.0, 0.0, 0.1)
        gan = LossWeights.for_phase("gan")
        assert (gan.lambda_adv, gan.lambda_perc, gan.beta_align) == (0.005, 0.1, 0.1)

    def test_unknown_phase_rejected(self):
        with pytest.raises(ValueError):
            LossWeights.for_phase("warmup")

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_adv=-0.1)


class TestPixelAndAlignLosses:
    def test_zero_when_prediction_matches_target(self):
        hr = torch.rand(2, 3, 16, 16)
        trace = StepTrace(sr_images=[hr.clone(), hr.clone()])
        assert pixel_loss(trace, hr).item() == 0.0

    def test_constant_offset_gives_squared_offset(self):
        hr = torch.rand(1, 3, 16, 16)
        trace = StepTrace(sr_images=[hr + 0.1])
        assert pixel_loss(trace, hr).item() == pytest.approx(0.01, abs=1e-7)

    def test_mean_over_steps(self):
        hr = torch.rand(1, 3, 16, 16)
        trace = StepTrace(sr_images=[hr + 0.1, hr + 0.2])
        assert pixel_loss(trace, hr).item() == pytest.approx(0.025, abs=1e-6)

    def test_align_offset_golden(self):
        gt = torch.rand(1, 68, 8, 8)
        trace = StepTrace(heatmaps=[gt + 0.2])
        assert align_loss(trace, gt).item() == pytest.approx(0.04, abs=1e-6)

    def test_empty_trace_rejected(self):
        hr = torch.rand(1, 3, 16, 16)
        with pytest.raises(ValueError):
            pixel_loss(StepTrace(), hr)
        with pytest.raises(ValueError):
            align_loss(StepTrace(), torch.rand(1, 68, 8, 8))

    def test_shape_mismatch_rejected(self):
        hr = torch.rand(1, 3, 16, 16)
        trace = StepTrace(sr_images=[torch.rand(1, 3, 8, 8)])
        with pytest.raises(ValueError):
            pixel_loss(trace, hr)


class TestAdversarialLosses:
    def test_confident_correct_discriminator_has_near_zero_loss(self):
        disc = MeanProbe()
        loss = d_loss(disc, const_image(1.0 - 1e-6), const_image(1e-6))
        assert loss.item() == pytest.approx(0.0, abs=1e-4)

    def test_coin_flip_discriminator_golden(self):
        disc = MeanProbe()
        loss = d_loss(disc, const_image(0.5), const_image(0.5))
        assert loss.item() == pytest.approx(2.0 * math.log(2.0), abs=1e-4)

    def test_saturated_probabilities_stay_finite(self):
        disc = MeanProbe()
        loss = d_loss(disc, const_image(0.0), const_image(1.0))
        assert torch.isfinite(loss)

    def test_generator_adversarial_golden_and_monotone(self):
        disc = MeanProbe()
        at_half = g_adv_loss(disc, const_image(0.5)).item()
        assert at_half == pytest.approx(math.log(2.0), abs=1e-6)
        assert g_adv_loss(disc, const_image(0.9)).item() < at_half
        assert at_half < g_adv_loss(disc, const_image(0.1)).item()

    def test_d_loss_detaches_generator_output(self):
        torch.manual_seed(0)
        disc = Discriminator(base_channels=8)
        sr = torch.rand(1, 3, 32, 32, requires_grad=True)
        hr = torch.rand(1, 3, 32, 32)
        d_loss(disc, hr, sr).backward()
        assert sr.grad is None
        assert any(p.grad is not None and p.grad.abs().sum() > 0
                   for p in disc.parameters())

    def test_g_adv_reaches_generator_output(self):
        torch.manual_seed(0)
        disc = Discriminator(base_channels=8)
        sr = torch.rand(1, 3, 32, 32, requires_grad=True)
        g_adv_loss(disc, sr).backward()
        assert sr.grad is not None
        assert sr.grad.abs().sum() > 0

    def test_discriminator_outputs_probabilities(self):
        torch.manual_seed(1)
        disc = Discriminator(base_channels=8)
        with torch.no_grad():
            p = disc(torch.rand(2, 3, 128, 128))
        assert p.shape == (2,)
        assert ((p > 0) & (p < 1)).all()


class TestOptimizerIsolation:
    def test_d_step_leaves_generator_unchanged_and_vice_versa(self):
        torch.manual_seed(2)
        model = CollaborationModel(
            variant="dic", n_steps=1, channels=8, feedback_pairs=2,
            fusion_depth=1, align_channels=16, hourglass_levels=2,
        )
        disc = Discriminator(base_channels=8)
        opt_g = torch.optim.Adam(model.parameters(), lr=1e-3)
        opt_d = torch.optim.Adam(disc.parameters(), lr=1e-3)
        lr_img = torch.rand(1, 3, 16, 16)
        hr_img = torch.rand(1, 3, 128, 128)

        g_before = {k: v.clone() for k, v in model.state_dict().items()}
        sr = model(lr_img).final_sr
        opt_d.zero_grad()
        d_loss(disc, hr_img, sr).backward()
        opt_d.step()
        assert all(torch.equal(v, g_before[k])
                   for k, v in model.state_dict().items())

        d_before = {k: v.clone() for k, v in disc.state_dict().items()}
        opt_g.zero_grad()
        trace = model(lr_img)
        parts = {"pixel": pixel_loss(trace, hr_img),
                 "adv": g_adv_loss(disc, trace.final_sr)}
        total_g_loss(parts, LossWeights.for_phase("gan")).backward()
        opt_g.step()
        assert all(torch.equal(v, d_before[k])
                   for k, v in disc.state_dict().items())


class TestPerceptual:
    def test_identical_images_have_zero_loss(self):
        phi = RandomFeaturePyramid()
        img = torch.rand(1, 3, 64, 64)
        assert perceptual_loss(phi, img, img.clone()).item() == 0.0

    def test_mean_absolute_difference_golden(self):
        phi = FirstTwoPixels()
        sr = torch.zeros(1, 3, 8, 8)
        hr = torch.zeros(1, 3, 8, 8)
        sr.view(-1)[0], sr.view(-1)[1] = 1.0, 2.0
        hr.view(-1)[0], hr.view(-1)[1] = 1.0, 3.0
        assert perceptual_loss(phi, sr, hr).item() == pytest.approx(0.5)

    def test_extractor_is_frozen(self):
        phi = RandomFeaturePyramid()
        assert all(not p.requires_grad for p in phi.parameters())
        sr = torch.rand(1, 3, 64, 64, requires_grad=True)
        perceptual_loss(phi, sr, torch.rand(1, 3, 64, 64)).backward()
        assert sr.grad is not None
        assert all(p.grad is None for p in phi.parameters())

    def test_same_seed_reproduces_extractor(self):
        a = RandomFeaturePyramid(seed=77)
        b = RandomFeaturePyramid(seed=77)
        img = torch.rand(1, 3, 64, 64)
        with torch.no_grad():
            assert torch.equal(a(img), b(img))
        c = RandomFeaturePyramid(seed=78)
        with torch.no_grad():
            assert not torch.allclose(a(img), c(img))

    def test_feature_width(self):
        phi = RandomFeaturePyramid(channels=(16, 32, 64), pool_size=8)
        with torch.no_grad():
            out = phi(torch.rand(2, 3, 128, 128))
        assert out.shape == (2, (16 + 32 + 64) * 64)

    def test_registry(self):
        phi = build_feature_extractor("random-pyramid", seed=5)
        assert isinstance(phi, RandomFeaturePyramid)
        with pytest.raises(ValueError):
            build_feature_extractor("vgg-19")


class TestTotalLoss:
    def test_exact_weighted_sum(self):
        parts = {"pixel": torch.tensor(0.3, dtype=torch.float64),
                 "adv": torch.tensor(0.7, dtype=torch.float64),
                 "perc": torch.tensor(0.11, dtype=torch.float64),
                 "align": torch.tensor(0.05, dtype=torch.float64)}
        weights = LossWeights(lambda_adv=0.005, lambda_perc=0.1, beta_align=0.1)
        expected = 0.3 + 0.005 * 0.7 + 0.1 * 0.11 + 0.1 * 0.05
        assert total_g_loss(parts, weights).item() == pytest.approx(expected, abs=1e-9)

    def test_missing_terms_count_as_zero(self):
        parts = {"pixel": torch.tensor(0.3, dtype=torch.float64),
                 "align": torch.tensor(0.1, dtype=torch.float64)}
        weights = LossWeights.for_phase("psnr")
        assert total_g_loss(parts, weights).item() == pytest.approx(0.31, abs=1e-9)


class TestGradients:
    def test_total_loss_matches_finite_differences(self):
        torch.manual_seed(3)
        model = to_f64(CollaborationModel(
            variant="dic", n_steps=2, channels=8, feedback_pairs=2,
            fusion_depth=1, align_channels=16, hourglass_levels=2,
        ))
        lr = torch.rand(1, 3, 8, 8, dtype=torch.float64, requires_grad=True)
        hr = torch.rand(1, 3, 64, 64, dtype=torch.float64, requires_grad=True)
        gt = torch.rand(1, 68, 16, 16, dtype=torch.float64, requires_grad=True)
        weights = LossWeights.for_phase("psnr")

        def fn(lr_, hr_, gt_):
            trace = model(lr_)
            parts = {"pixel": pixel_loss(trace, hr_),
                     "align": align_loss(trace, gt_)}
            return total_g_loss(parts, weights)

        fd_check(fn, [lr, hr, gt], n_coords=12, h=1e-4)
