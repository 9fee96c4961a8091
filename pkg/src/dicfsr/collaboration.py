"""N-step iterative collaboration between the SR and alignment branches.

Each step super-resolves with the landmark estimate from the previous
step, then re-estimates landmarks from the new SR image. Variants:
"dic" (full model), "dic-nl" (no alignment branch, no fusion), and
"dic-cl" (landmark channels concatenated instead of attentively fused).
"""

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .align_branch import N_HEATMAPS, AlignBranch
from .sr_branch import SrBranch

VARIANTS = ("dic", "dic-nl", "dic-cl")
_FUSION_FOR_VARIANT = {"dic": "attentive", "dic-nl": "none", "dic-cl": "concat"}


def normalize_variant(variant):
    name = str(variant).strip().lower().replace("_", "-")
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return name


@dataclass
class StepTrace:
    """Per-step outputs of one forward pass.

    sr_images holds N tensors (B, 3, 8h, 8w); heatmaps holds N tensors
    (B, 68, 2h, 2w), or is empty for the landmark-free variant.
    """

    sr_images: list = field(default_factory=list)
    heatmaps: list = field(default_factory=list)

    @property
    def final_sr(self):
        return self.sr_images[-1]


class CollaborationModel(nn.Module):
    """Recurrent two-branch model with shared weights across steps."""

    def __init__(self, variant="dic", n_steps=4, channels=48, feedback_pairs=6,
                 fusion_depth=2, align_channels=256, hourglass_levels=4):
        super().__init__()
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        self.variant = normalize_variant(variant)
        self.n_steps = n_steps
        self.sr = SrBranch(
            channels=channels,
            feedback_pairs=feedback_pairs,
            fusion=_FUSION_FOR_VARIANT[self.variant],
            fusion_depth=fusion_depth,
        )
        if self.variant == "dic-nl":
            self.align = None
        else:
            self.align = AlignBranch(align_channels, hourglass_levels)

    def forward(self, lr, keep_last=None):
        """Run all steps; ``keep_last`` masks fusion attention at the final
        step only (component ablation rendering)."""
        if keep_last is not None and self.variant != "dic":
            raise ValueError("component masking requires the attentive variant")
        lr_feat = self.sr.extract_lr_features(lr)
        feedback = self.sr.init_feedback(lr_feat)
        trace = StepTrace()
        prev_heat = None
        if self.align is not None:
            b, _, fh, fw = lr_feat.shape
            prev_heat = torch.zeros(
                b, N_HEATMAPS, fh, fw, dtype=lr_feat.dtype, device=lr_feat.device
            )
        align_feedback = None
        for n in range(self.n_steps):
            keep = keep_last if n == self.n_steps - 1 else None
            sr, feedback = self.sr.step(lr_feat, feedback, prev_heat, lr, keep=keep)
            trace.sr_images.append(sr)
            if self.align is not None:
                if align_feedback is None:
                    align_feedback = self.align.init_feedback(sr)
                heat, align_feedback = self.align.step(sr, align_feedback)
                trace.heatmaps.append(heat)
                prev_heat = heat
        return trace

    @torch.no_grad()
    def infer(self, lr):
        """Final-step SR image."""
        return self.forward(lr).final_sr

    @torch.no_grad()
    def component_ablation_render(self, lr, keep):
        """Final-step SR image with only the given facial components
        (indices 0..4 or names) surviving in the last fusion."""
        return self.forward(lr, keep_last=keep).final_sr
