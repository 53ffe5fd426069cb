import math

import numpy as np
import pytest
import torch

from utility_ir.config import LossWeights
from utility_ir.errors import ConfigError, ShapeError
from utility_ir.losses import (
    LossComponents,
    RandomConvPyramid,
    RankPair,
    batch_contrastive,
    contrastive,
    direct_iqa_baseline,
    l1,
    mqrl,
    mrl_baseline,
    perceptual,
    severity_loss,
    ssim_loss,
    total_loss,
)


def value(tensor):
    return float(tensor)


class TestMQRL:
    def test_signs_match_beyond_margin(self):
        assert value(mqrl(RankPair(0.8, 0.5, 0.7, 0.6), 0.05)) == pytest.approx(0.15, abs=1e-6)

    def test_sign_mismatch_takes_full_difference(self):
        assert value(mqrl(RankPair(0.0, 0.2, 0.1, 0.0), 0.05)) == pytest.approx(0.3, abs=1e-6)

    def test_margin_absorbs_small_interval_error(self):
        assert value(mqrl(RankPair(0.12, 0.0, 0.10, 0.0), 0.05)) == 0.0

    def test_negative_margin(self):
        with pytest.raises(ConfigError):
            mqrl(RankPair(0.1, 0.2, 0.3, 0.4), -0.01)

    def test_tied_ground_truth_is_compatible(self):
        assert value(mqrl(RankPair(0.6, 0.4, 0.5, 0.5), 0.05)) == pytest.approx(0.15, abs=1e-6)

    def test_nonnegative_and_symmetric(self):
        rng = np.random.default_rng(0)
        pred = torch.tensor(rng.uniform(size=(2, 64)), dtype=torch.float64)
        gt = torch.tensor(rng.uniform(size=(2, 64)), dtype=torch.float64)
        forward = mqrl(RankPair(pred[0], pred[1], gt[0], gt[1]), 0.05)
        swapped = mqrl(RankPair(pred[1], pred[0], gt[1], gt[0]), 0.05)
        assert value(forward) >= 0
        assert value(forward) == pytest.approx(value(swapped), abs=1e-12)

    def test_gradcheck(self):
        pred_a = torch.tensor([0.8, 0.3, 0.6, 0.2], dtype=torch.float64, requires_grad=True)
        pred_b = torch.tensor([0.5, 0.5, 0.1, 0.4], dtype=torch.float64, requires_grad=True)
        gt_a = torch.tensor([0.7, 0.2, 0.9, 0.6], dtype=torch.float64)
        gt_b = torch.tensor([0.6, 0.6, 0.2, 0.5], dtype=torch.float64)
        run = lambda a, b: mqrl(RankPair(a, b, gt_a, gt_b), 0.05)
        assert torch.autograd.gradcheck(run, (pred_a, pred_b), eps=1e-3, atol=1e-6, rtol=1e-4)


class TestBaselines:
    def test_mrl_correct_order(self):
        assert value(mrl_baseline(RankPair(0.9, 0.5, 0.8, 0.4), 0.05)) == 0.0

    def test_mrl_reversed_order(self):
        assert value(mrl_baseline(RankPair(0.4, 0.6, 0.8, 0.4), 0.05)) > 0.0

    def test_mrl_is_interval_blind(self):
        gt = (0.9, 0.5)
        narrow = RankPair(0.6, 0.5, *gt)
        exact = RankPair(0.95, 0.55, *gt)
        assert value(mrl_baseline(narrow, 0.05)) == 0.0
        assert value(mrl_baseline(exact, 0.05)) == 0.0
        assert value(mqrl(narrow, 0.05)) - value(mqrl(exact, 0.05)) >= 0.05

    def test_direct_regression(self):
        assert value(direct_iqa_baseline(0.4, 0.4)) == 0.0
        assert value(direct_iqa_baseline(0.2, 0.7)) == pytest.approx(0.25, abs=1e-6)

    def test_direct_gradcheck(self):
        pred = torch.tensor([0.1, 0.5, 0.9], dtype=torch.float64, requires_grad=True)
        gt = torch.tensor([0.3, 0.3, 0.3], dtype=torch.float64)
        assert torch.autograd.gradcheck(lambda p: direct_iqa_baseline(p, gt), (pred,), eps=1e-3, rtol=1e-4)

    def test_severity_loss_dispatch(self):
        pred = torch.tensor([0.8, 0.5])
        gt = torch.tensor([0.7, 0.6])
        assert value(severity_loss("none", pred, gt, 0.05)) == 0.0
        assert value(severity_loss("mqrl", pred, gt, 0.05)) == pytest.approx(0.15, abs=1e-6)
        assert value(severity_loss("direct", pred, gt, 0.05)) == pytest.approx(0.01, abs=1e-6)
        with pytest.raises(ConfigError):
            severity_loss("hinge", pred, gt, 0.05)


def softmax_oracle(anchor, positive, negatives, temperature):
    def cosine(x, y):
        return float(np.dot(x, y) / (np.linalg.norm(x) * np.linalg.norm(y)))

    numerator = math.exp(cosine(anchor, positive) / temperature)
    denominator = numerator + sum(math.exp(cosine(anchor, n) / temperature) for n in negatives)
    return -math.log(numerator / denominator)


class TestContrastive:
    def test_equal_similarities(self):
        vector = torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64)
        loss = contrastive(vector, vector, vector.expand(3, 3), 0.25)
        assert value(loss) == pytest.approx(math.log(4), abs=1e-6)

    def test_saturation(self):
        anchor = torch.tensor([1.0, 0.0], dtype=torch.float64)
        loss = contrastive(anchor, anchor, -anchor.expand(4, 2), 0.07)
        assert abs(value(loss)) < 1e-9

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        anchor, positive = rng.normal(size=16), rng.normal(size=16)
        negatives = rng.normal(size=(5, 16))
        loss = contrastive(
            torch.tensor(anchor), torch.tensor(positive), torch.tensor(negatives), 0.25
        )
        assert value(loss) == pytest.approx(softmax_oracle(anchor, positive, negatives, 0.25), abs=1e-6)

    def test_scale_invariant(self):
        torch.manual_seed(0)
        anchor, positive, negatives = torch.randn(8, dtype=torch.float64), torch.randn(8, dtype=torch.float64), torch.randn(3, 8, dtype=torch.float64)
        base = contrastive(anchor, positive, negatives)
        scaled = contrastive(3.7 * anchor, 0.2 * positive, negatives * torch.tensor([[2.0], [5.0], [0.1]], dtype=torch.float64))
        assert value(scaled) == pytest.approx(value(base), abs=1e-12)

    def test_zero_norm(self):
        with pytest.raises(ShapeError):
            contrastive(torch.zeros(4), torch.ones(4), torch.ones(2, 4))

    def test_temperature_must_be_positive(self):
        with pytest.raises(ConfigError):
            contrastive(torch.ones(4), torch.ones(4), torch.ones(2, 4), 0.0)

    def test_needs_a_negative(self):
        with pytest.raises(ShapeError):
            contrastive(torch.ones(4), torch.ones(4), torch.ones(0, 4))

    def test_batch_uses_other_kinds_as_negatives(self):
        torch.manual_seed(1)
        features = torch.randn(4, 1, 2, 2, dtype=torch.float64)
        flat = features.flatten(1)
        loss = batch_contrastive(features, ["haze", "haze", "snow", "snow"], [1, 0, 3, 2], 0.25)
        expected = np.mean(
            [
                value(contrastive(flat[0], flat[1], flat[[2, 3]], 0.25)),
                value(contrastive(flat[1], flat[0], flat[[2, 3]], 0.25)),
                value(contrastive(flat[2], flat[3], flat[[0, 1]], 0.25)),
                value(contrastive(flat[3], flat[2], flat[[0, 1]], 0.25)),
            ]
        )
        assert value(loss) == pytest.approx(expected, abs=1e-9)

    def test_batch_single_kind(self):
        assert batch_contrastive(torch.randn(2, 1, 2, 2), ["haze", "haze"], [1, 0]) is None

    def test_gradcheck(self):
        torch.manual_seed(2)
        anchor = torch.randn(6, dtype=torch.float64, requires_grad=True)
        positive = torch.randn(6, dtype=torch.float64, requires_grad=True)
        negatives = torch.randn(3, 6, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(
            lambda a, p, n: contrastive(a, p, n, 0.25), (anchor, positive, negatives), eps=1e-3, atol=1e-6, rtol=1e-3
        )


def gaussian_window(size=11, sigma=1.5):
    coords = np.arange(size) - size // 2
    g = np.exp(-(coords**2) / (2 * sigma**2))
    return g / g.sum()


def ssim_oracle(a, b):
    """Valid-window Gaussian SSIM per channel with explicit window sums"""
    window = np.outer(gaussian_window(), gaussian_window())
    c1, c2 = 0.01**2, 0.03**2
    channels, height, width = a.shape
    values = []
    for c in range(channels):
        for y in range(height - 10):
            for x in range(width - 10):
                pa, pb = a[c, y : y + 11, x : x + 11], b[c, y : y + 11, x : x + 11]
                mu_a, mu_b = (window * pa).sum(), (window * pb).sum()
                var_a = (window * pa * pa).sum() - mu_a**2
                var_b = (window * pb * pb).sum() - mu_b**2
                cov = (window * pa * pb).sum() - mu_a * mu_b
                luminance = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
                values.append(luminance * (2 * cov + c2) / (var_a + var_b + c2))
    return float(np.mean(values))


class TestFidelity:
    def test_l1_cases(self):
        image = torch.rand(1, 3, 8, 8)
        assert value(l1(image, image)) == 0.0
        assert value(l1(torch.zeros(1, 3, 4, 4), torch.ones(1, 3, 4, 4))) == 1.0

    def test_l1_loop_oracle(self):
        rng = np.random.default_rng(3)
        a, b = rng.uniform(size=(1, 3, 5, 5)), rng.uniform(size=(1, 3, 5, 5))
        expected = sum(abs(x - y) for x, y in zip(a.ravel(), b.ravel())) / a.size
        assert value(l1(torch.tensor(a), torch.tensor(b))) == pytest.approx(expected, abs=1e-12)

    def test_ssim_loss_identical_and_range(self):
        image = torch.rand(1, 3, 16, 16)
        assert value(ssim_loss(image, image)) == pytest.approx(0.0, abs=1e-6)
        assert 0.0 <= value(ssim_loss(image, 1 - image)) <= 2.0

    def test_ssim_loss_matches_window_oracle(self):
        rng = np.random.default_rng(4)
        a, b = rng.uniform(size=(3, 16, 16)), rng.uniform(size=(3, 16, 16))
        loss = ssim_loss(torch.tensor(a)[None], torch.tensor(b)[None])
        assert value(loss) == pytest.approx(1.0 - ssim_oracle(a, b), abs=1e-5)

    def test_ssim_loss_gradcheck(self):
        torch.manual_seed(5)
        target = torch.rand(1, 1, 12, 12, dtype=torch.float64).expand(1, 3, 12, 12).contiguous()
        restored = torch.rand(1, 3, 12, 12, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(
            lambda r: ssim_loss(r, target), (restored,), eps=1e-3, atol=1e-6, rtol=1e-3, fast_mode=True
        )

    def test_perceptual_identical_and_nonnegative(self):
        extractor = RandomConvPyramid(seed=0)
        image = torch.rand(2, 3, 16, 16)
        assert value(perceptual(image, image, extractor)) == 0.0
        assert value(perceptual(image, torch.rand(2, 3, 16, 16), extractor)) > 0.0

    def test_perceptual_per_stage_oracle(self):
        extractor = RandomConvPyramid(seed=0).double()
        a, b = torch.rand(1, 3, 8, 8, dtype=torch.float64), torch.rand(1, 3, 8, 8, dtype=torch.float64)
        expected = 0.0
        for fa, fb in zip(extractor(a), extractor(b)):
            _, c, h, w = fa.shape
            expected += float(((fa - fb) ** 2).sum()) / (c * h * w)
        assert value(perceptual(a, b, extractor)) == pytest.approx(expected, rel=1e-10)

    def test_perceptual_extractor_is_seeded_and_frozen(self):
        first, second = RandomConvPyramid(seed=7), RandomConvPyramid(seed=7)
        for p, q in zip(first.parameters(), second.parameters()):
            assert torch.equal(p, q)
            assert not p.requires_grad

    def test_perceptual_gradcheck(self):
        extractor = RandomConvPyramid(seed=1).double()
        restored = torch.rand(1, 3, 8, 8, dtype=torch.float64, requires_grad=True)
        target = torch.rand(1, 3, 8, 8, dtype=torch.float64)
        assert torch.autograd.gradcheck(
            lambda r: perceptual(r, target, extractor), (restored,), eps=1e-3, atol=1e-6, rtol=1e-3, fast_mode=True
        )


class TestTotal:
    def test_all_zero(self):
        assert total_loss(LossComponents(), LossWeights()) == 0.0

    def test_only_l1_weight(self):
        components = LossComponents(severity=0.3, contrastive=2.0, l1=0.5, ssim=0.7, perceptual=1.1)
        weights = LossWeights(cl=0.0, l1=1.0, ssim=0.0, per=0.0)
        assert total_loss(components, weights) == pytest.approx(0.8)

    def test_linear_in_each_component(self):
        weights = LossWeights()
        base = LossComponents(0.1, 0.2, 0.3, 0.4, 0.5)
        for name, weight in (("severity", 1.0), ("contrastive", 0.2), ("l1", 1.0), ("ssim", 0.5), ("perceptual", 0.04)):
            bumped = LossComponents(**{**base.__dict__, name: getattr(base, name) + 1.0})
            assert total_loss(bumped, weights) - total_loss(base, weights) == pytest.approx(weight)
