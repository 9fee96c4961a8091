"""Training objectives: per-step pixel/alignment losses, GAN losses,
perceptual loss with a pluggable frozen feature extractor, and the
weighted total."""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .fusion import LEAKY_SLOPE

PROB_EPS = 1e-7


@dataclass
class LossWeights:
    lambda_adv: float = 0.0
    lambda_perc: float = 0.0
    beta_align: float = 0.1

    def __post_init__(self):
        if min(self.lambda_adv, self.lambda_perc, self.beta_align) < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def for_phase(cls, phase):
        if phase == "psnr":
            return cls(lambda_adv=0.0, lambda_perc=0.0, beta_align=0.1)
        if phase == "gan":
            return cls(lambda_adv=0.005, lambda_perc=0.1, beta_align=0.1)
        raise ValueError(f"unknown phase {phase!r}")


def pixel_loss(trace, hr):
    """Mean over steps of the per-element MSE between each SR image and HR."""
    if not trace.sr_images:
        raise ValueError("trace has no SR images")
    total = 0.0
    for sr in trace.sr_images:
        if sr.shape != hr.shape:
            raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
        total = total + F.mse_loss(sr, hr)
    return total / len(trace.sr_images)


def align_loss(trace, gt_heatmaps):
    """Mean over steps of the per-element MSE between predicted and
    ground-truth heatmaps."""
    if not trace.heatmaps:
        raise ValueError("trace has no heatmaps")
    total = 0.0
    for heat in trace.heatmaps:
        if heat.shape != gt_heatmaps.shape:
            raise ValueError(
                f"shape mismatch: {tuple(heat.shape)} vs {tuple(gt_heatmaps.shape)}"
            )
        total = total + F.mse_loss(heat, gt_heatmaps)
    return total / len(trace.heatmaps)


class Discriminator(nn.Module):
    """Strided conv stack mapping an HR image to a real/fake probability."""

    def __init__(self, base_channels=64):
        super().__init__()
        c = base_channels
        spec = [(3, c, 1), (c, c, 2), (c, 2 * c, 1), (2 * c, 2 * c, 2),
                (2 * c, 4 * c, 1), (4 * c, 4 * c, 2), (4 * c, 8 * c, 1),
                (8 * c, 8 * c, 2)]
        layers = []
        for cin, cout, stride in spec:
            layers.append(nn.Conv2d(cin, cout, 3, stride=stride, padding=1))
            layers.append(nn.LeakyReLU(LEAKY_SLOPE, inplace=True))
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(4)
        self.head = nn.Sequential(
            nn.Linear(8 * c * 16, 128),
            nn.LeakyReLU(LEAKY_SLOPE, inplace=True),
            nn.Linear(128, 1),
        )

    def forward(self, image):
        x = self.pool(self.features(image)).flatten(1)
        return torch.sigmoid(self.head(x)).squeeze(1)


def _clamp_prob(p):
    return p.clamp(PROB_EPS, 1.0 - PROB_EPS)


def d_loss(disc, hr, sr):
    """Discriminator objective: -log D(HR) - log(1 - D(SR)), batch mean.

    The SR input is detached here so generator parameters never receive
    gradient from this loss.
    """
    p_real = _clamp_prob(disc(hr))
    p_fake = _clamp_prob(disc(sr.detach()))
    return (-torch.log(p_real) - torch.log(1.0 - p_fake)).mean()


def g_adv_loss(disc, sr):
    """Generator adversarial objective: -log D(SR), batch mean."""
    return (-torch.log(_clamp_prob(disc(sr)))).mean()


class RandomFeaturePyramid(nn.Module):
    """Frozen random conv pyramid used as the default perceptual space.

    A reproducible stand-in for a pretrained face descriptor: weights
    are drawn once from a seeded generator and never trained. Each stage
    is pooled to a fixed grid and the flattened stages are concatenated.
    """

    def __init__(self, seed=1234, channels=(16, 32, 64), pool_size=8):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        cin = 3
        for cout in channels:
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            fan_in = cin * 9
            std = (2.0 / ((1.0 + LEAKY_SLOPE ** 2) * fan_in)) ** 0.5
            with torch.no_grad():
                conv.weight.normal_(0.0, std, generator=gen)
                conv.bias.zero_()
            convs.append(conv)
            cin = cout
        self.convs = nn.ModuleList(convs)
        self.pool_size = pool_size
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, image):
        feats = []
        x = image
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LEAKY_SLOPE)
            feats.append(F.adaptive_avg_pool2d(x, self.pool_size).flatten(1))
        return torch.cat(feats, dim=1)


FEATURE_EXTRACTORS = {"random-pyramid": RandomFeaturePyramid}


def build_feature_extractor(name, **kwargs):
    try:
        factory = FEATURE_EXTRACTORS[name]
    except KeyError:
        raise ValueError(
            f"unknown feature extractor {name!r}; "
            f"registered: {sorted(FEATURE_EXTRACTORS)}"
        ) from None
    return factory(**kwargs)


def perceptual_loss(phi, sr, hr):
    """Per-element mean absolute difference in the frozen feature space."""
    return (phi(sr) - phi(hr)).abs().mean()


def total_g_loss(parts, weights):
    """Weighted sum: pixel + lambda_adv*adv + lambda_perc*perc + beta*align.

    ``parts`` maps loss names to scalars; missing terms count as zero.
    """
    total = parts["pixel"]
    total = total + weights.lambda_adv * parts.get("adv", 0.0)
    total = total + weights.lambda_perc * parts.get("perc", 0.0)
    total = total + weights.beta_align * parts.get("align", 0.0)
    return total
