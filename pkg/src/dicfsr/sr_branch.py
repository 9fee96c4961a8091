"""Recurrent SR branch.

G1 lifts the LR image to feature space (conv then depth-to-space),
the recursive block G_R mixes those features with the previous step's
feedback and the landmark-gated fusion, and G2 renders an HR residual
that is added to a bicubic upsample of the input.
"""

import torch
import torch.nn as nn

from .data.resize import resize_matrices
from .fusion import LEAKY_SLOPE, AttentiveFusion

SCALE = 8
FUSION_MODES = ("attentive", "concat", "none")


def init_conv_weights(module, slope=LEAKY_SLOPE):
    """Kaiming fan-in init for every conv in ``module``; biases to zero."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_normal_(
                m.weight, a=slope, mode="fan_in", nonlinearity="leaky_relu"
            )
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Linear):
            nn.init.kaiming_normal_(
                m.weight, a=slope, mode="fan_in", nonlinearity="leaky_relu"
            )
            nn.init.zeros_(m.bias)


class BicubicUpsample(nn.Module):
    """Differentiable bicubic upsampling via cached dense resize matrices.

    The matrices reproduce the data pipeline's bicubic kernel, so the
    global skip connection matches file-level bicubic resizing.
    """

    def __init__(self, scale=SCALE):
        super().__init__()
        self.scale = scale
        self._matrices = {}

    def forward(self, img):
        _, _, h, w = img.shape
        key = (h, w)
        if key not in self._matrices:
            mh, mw = resize_matrices(h, w, h * self.scale, w * self.scale)
            self._matrices[key] = (torch.from_numpy(mh), torch.from_numpy(mw))
        mh, mw = self._matrices[key]
        mh = mh.to(img.device)
        mw = mw.to(img.device)
        x = img.to(torch.float64)
        x = torch.einsum("oh,bchw->bcow", mh, x)
        x = torch.einsum("pw,bcow->bcop", mw, x)
        return x.to(img.dtype)


class FeedbackBlock(nn.Module):
    """Iterative up/down projection pairs with dense compressed skips.

    Each pair lifts the running LR-resolution state by 4x with a
    transposed conv and projects it back with a strided conv; all
    earlier states at the same resolution are concatenated and squeezed
    through a 1x1 conv before each projection.
    """

    def __init__(self, channels, pairs=6):
        super().__init__()
        if pairs < 1:
            raise ValueError("pairs must be >= 1")
        self.pairs = pairs
        self.up_blocks = nn.ModuleList(
            nn.ConvTranspose2d(channels, channels, 8, stride=4, padding=2)
            for _ in range(pairs)
        )
        self.down_blocks = nn.ModuleList(
            nn.Conv2d(channels, channels, 8, stride=4, padding=2)
            for _ in range(pairs)
        )
        self.up_compress = nn.ModuleList(
            nn.Conv2d(channels * (i + 2), channels, 1) for i in range(pairs - 1)
        )
        self.down_compress = nn.ModuleList(
            nn.Conv2d(channels * (i + 2), channels, 1) for i in range(pairs - 1)
        )
        self.out_compress = nn.Conv2d(channels * pairs, channels, 1)
        self.act = nn.LeakyReLU(LEAKY_SLOPE, inplace=True)

    def forward(self, x):
        lr_states = [x]
        hr_states = []
        for i in range(self.pairs):
            t = torch.cat(lr_states, dim=1)
            if i > 0:
                t = self.act(self.up_compress[i - 1](t))
            hr_states.append(self.act(self.up_blocks[i](t)))
            t = torch.cat(hr_states, dim=1)
            if i > 0:
                t = self.act(self.down_compress[i - 1](t))
            lr_states.append(self.act(self.down_blocks[i](t)))
        return self.act(self.out_compress(torch.cat(lr_states[1:], dim=1)))


class SrBranch(nn.Module):
    """The shared-weight SR generator used at every collaboration step.

    fusion mode: "attentive" gates grouped component features with
    landmark attention, "concat" appends the raw 68 landmark channels
    followed by a 1x1 squeeze, "none" skips the landmark path entirely.
    """

    def __init__(self, channels=48, feedback_pairs=6, fusion="attentive",
                 fusion_depth=2):
        super().__init__()
        if fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}, got {fusion!r}")
        self.channels = channels
        self.fusion_mode = fusion
        self.g1_conv = nn.Conv2d(3, channels * 4, 3, padding=1)
        self.g1_shuffle = nn.PixelShuffle(2)
        self.concat_conv = nn.Conv2d(channels * 2, channels, 3, padding=1)
        if fusion == "attentive":
            self.fuse = AttentiveFusion(channels, depth=fusion_depth)
        elif fusion == "concat":
            self.cl_conv = nn.Conv2d(channels + 68, channels, 1)
        self.feedback_block = FeedbackBlock(channels, feedback_pairs)
        self.init_conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.init_block = FeedbackBlock(channels, feedback_pairs)
        self.g2_deconv = nn.ConvTranspose2d(channels, channels, 8, stride=4, padding=2)
        self.g2_conv = nn.Conv2d(channels, 3, 3, padding=1)
        self.upsample = BicubicUpsample(SCALE)
        self.act = nn.LeakyReLU(LEAKY_SLOPE, inplace=True)
        init_conv_weights(self)

    def extract_lr_features(self, lr):
        """G1: (B, 3, h, w) -> (B, C, 2h, 2w) via conv + depth-to-space."""
        return self.act(self.g1_shuffle(self.g1_conv(lr)))

    def init_feedback(self, lr_feat):
        """Initial feedback state from LR features alone (no landmarks)."""
        return self.init_block(self.act(self.init_conv(lr_feat)))

    def step(self, lr_feat, feedback, heatmaps, lr, keep=None):
        """One SR step: returns (sr image, new feedback state)."""
        x = self.act(self.concat_conv(torch.cat([lr_feat, feedback], dim=1)))
        if self.fusion_mode == "attentive":
            x = self.fuse(x, heatmaps, keep=keep)
        elif self.fusion_mode == "concat":
            x = self.act(self.cl_conv(torch.cat([x, heatmaps], dim=1)))
        new_feedback = self.feedback_block(x)
        residual = self.g2_conv(self.act(self.g2_deconv(new_feedback)))
        return residual + self.upsample(lr), new_feedback
