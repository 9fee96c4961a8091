"""Recurrent face alignment branch.

A1 is a batch-norm-free stem that maps the SR image to quarter
resolution, A_R mixes the stem features with the previous step's
feedback and runs a recurrent hourglass, and A2 regresses 68 landmark
heatmaps from half of the hourglass output while the other half is
carried to the next step.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .fusion import LEAKY_SLOPE
from .sr_branch import init_conv_weights

N_HEATMAPS = 68


def _act(x):
    # leaky rectifiers throughout: without normalisation layers a unit
    # with a plain rectifier that saturates early in training never
    # recovers, which stalls heatmap regression wholesale
    return F.leaky_relu(x, LEAKY_SLOPE)


class ResidualBlock(nn.Module):
    """Pre-activation bottleneck residual block without normalisation."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        mid = out_channels // 2
        self.conv1 = nn.Conv2d(in_channels, mid, 1)
        self.conv2 = nn.Conv2d(mid, mid, 3, padding=1)
        self.conv3 = nn.Conv2d(mid, out_channels, 1)
        if in_channels != out_channels:
            self.skip = nn.Conv2d(in_channels, out_channels, 1)
        else:
            self.skip = None

    def forward(self, x):
        y = self.conv1(_act(x))
        y = self.conv2(_act(y))
        y = self.conv3(_act(y))
        s = x if self.skip is None else self.skip(x)
        return s + y


class Hourglass(nn.Module):
    """Recursive hourglass: symmetric encoder/decoder with skip merges.

    Average pooling halves resolution on the way down; nearest-neighbor
    upsampling restores it on the way up. Output spatial size equals the
    input spatial size. The skip and the upsampled path are averaged
    rather than summed: with no normalisation layers the module is
    applied recurrently to its own feedback, and a summed merge grows
    activation scale per level and per step until late-step outputs
    drown the early ones.
    """

    def __init__(self, levels, channels):
        super().__init__()
        if levels < 1:
            raise ValueError("levels must be >= 1")
        self.levels = levels
        self.up1 = ResidualBlock(channels, channels)
        self.low1 = ResidualBlock(channels, channels)
        if levels > 1:
            self.low2 = Hourglass(levels - 1, channels)
        else:
            self.low2 = ResidualBlock(channels, channels)
        self.low3 = ResidualBlock(channels, channels)

    def forward(self, x):
        up = self.up1(x)
        low = self.low1(F.avg_pool2d(x, 2))
        low = self.low2(low)
        low = self.low3(low)
        return 0.5 * (up + F.interpolate(low, scale_factor=2, mode="nearest"))


class AlignBranch(nn.Module):
    """Shared-weight alignment network applied at every step."""

    def __init__(self, channels=256, hourglass_levels=4):
        super().__init__()
        if channels % 4 != 0:
            raise ValueError("channels must be divisible by 4")
        self.channels = channels
        quarter, half = channels // 4, channels // 2
        self.stem_conv = nn.Conv2d(3, quarter, 7, stride=2, padding=3)
        self.stem_res1 = ResidualBlock(quarter, half)
        self.stem_res2 = ResidualBlock(half, half)
        self.stem_res3 = ResidualBlock(half, channels)
        self.ar_conv = nn.Conv2d(channels * 2, channels * 2, 3, padding=1)
        self.hourglass = Hourglass(hourglass_levels, channels * 2)
        self.a2_conv1 = nn.Conv2d(channels, channels, 1)
        self.a2_conv2 = nn.Conv2d(channels, N_HEATMAPS, 1)
        init_conv_weights(self, slope=LEAKY_SLOPE)
        # With no normalisation layers, residual accumulation across the
        # stem/hourglass/recurrence compounds multiplicatively; damping
        # each residual branch (x0.1 per block caps the variance growth
        # at ~1% per block) and starting the heatmap head small keeps
        # early activations and the alignment loss at unit scale while
        # still letting gradients reach the whole trunk from step one.
        with torch.no_grad():
            for m in self.modules():
                if isinstance(m, ResidualBlock):
                    m.conv3.weight.mul_(0.1)
            nn.init.normal_(self.a2_conv2.weight, std=0.1 / channels ** 0.5)

    def stem(self, image):
        """A1: (B, 3, 4s, 4s) image -> (B, C, s, s) features."""
        x = _act(self.stem_conv(image))
        x = self.stem_res1(x)
        x = F.avg_pool2d(x, 2)
        x = self.stem_res2(x)
        return self.stem_res3(x)

    def init_feedback(self, sr1):
        """Initial feedback state: the stem applied to the step-1 SR image."""
        return self.stem(sr1)

    def step(self, sr, feedback):
        """One alignment step: returns (heatmaps, new feedback state)."""
        x = torch.cat([self.stem(sr), feedback], dim=1)
        x = _act(self.ar_conv(x))
        x = self.hourglass(x)
        new_feedback, head = torch.split(x, self.channels, dim=1)
        heatmaps = self.a2_conv2(_act(self.a2_conv1(head)))
        return heatmaps, new_feedback
