"""Attentive fusion of facial-component features gated by landmark heatmaps.

The 68 landmark heatmap channels are pooled into five facial components
(left eye with its brow, right eye with its brow, nose, mouth, jawline).
A per-pixel softmax over the pooled maps yields soft attention masks
that weight component-specific feature branches produced by grouped
convolutions.
"""

import json

import torch
import torch.nn as nn
import torch.nn.functional as F

# Landmark index ranges follow the common 68-point annotation layout:
# jaw 0-16, brows 17-26, nose 27-35, eyes 36-47, mouth 48-67.
COMPONENT_GROUPS = {
    "left_eye": tuple(range(17, 22)) + tuple(range(36, 42)),
    "right_eye": tuple(range(22, 27)) + tuple(range(42, 48)),
    "nose": tuple(range(27, 36)),
    "mouth": tuple(range(48, 68)),
    "jawline": tuple(range(0, 17)),
}

COMPONENT_NAMES = tuple(COMPONENT_GROUPS)
N_COMPONENTS = len(COMPONENT_GROUPS)
LEAKY_SLOPE = 0.2


def _grouping_matrix():
    mat = torch.zeros(N_COMPONENTS, 68)
    for row, name in enumerate(COMPONENT_NAMES):
        for idx in COMPONENT_GROUPS[name]:
            mat[row, idx] = 1.0
    return mat


def group_components(heatmaps):
    """Pool (B, 68, H, W) landmark heatmaps into (B, 5, H, W) component maps.

    Each component map is the sum of its member landmark channels.
    """
    if heatmaps.dim() != 4 or heatmaps.shape[1] != 68:
        raise ValueError(f"expected (B, 68, H, W) heatmaps, got {tuple(heatmaps.shape)}")
    mat = _grouping_matrix().to(dtype=heatmaps.dtype, device=heatmaps.device)
    return torch.einsum("pk,bkhw->bphw", mat, heatmaps)


def attention_softmax(component_maps):
    """Per-pixel softmax across the component axis of (B, 5, H, W) maps."""
    if component_maps.dim() != 4 or component_maps.shape[1] != N_COMPONENTS:
        raise ValueError(
            f"expected (B, {N_COMPONENTS}, H, W) component maps, got "
            f"{tuple(component_maps.shape)}"
        )
    if not torch.isfinite(component_maps).all():
        raise ValueError("component maps contain non-finite values")
    return F.softmax(component_maps, dim=1)


def normalize_keep(keep):
    """Resolve component indices or names to a sorted index tuple."""
    indices = set()
    for item in keep:
        if isinstance(item, str):
            if item not in COMPONENT_NAMES:
                raise ValueError(f"unknown component name: {item!r}")
            indices.add(COMPONENT_NAMES.index(item))
        else:
            idx = int(item)
            if not 0 <= idx < N_COMPONENTS:
                raise ValueError(f"component index out of range: {idx}")
            indices.add(idx)
    return tuple(sorted(indices))


def mask_components(attention, keep):
    """Zero the attention channels of components not in ``keep``.

    ``keep`` holds component indices (0..4) or names. The surviving
    channels are left as-is (no renormalisation), so the fused output is
    exactly the sum of the kept component branches.
    """
    indices = normalize_keep(keep)
    mask = torch.zeros(N_COMPONENTS, dtype=attention.dtype, device=attention.device)
    for idx in indices:
        mask[idx] = 1.0
    return attention * mask.view(1, -1, 1, 1)


def component_groups_json():
    """Serialise the component grouping (name -> landmark indices) as JSON."""
    payload = {name: list(idx) for name, idx in COMPONENT_GROUPS.items()}
    return json.dumps(payload, indent=2) + "\n"


def fuse_features(attention, branches):
    """Attention-weighted sum of per-component features.

    attention: (B, 5, H, W); branches: (B, 5, C, H, W). Returns the sum
    over components of M_p * f_p, shape (B, C, H, W). Linear in the
    branch features for fixed attention.
    """
    return (branches * attention.unsqueeze(2)).sum(dim=1)


class AttentiveFusion(nn.Module):
    """Fuse SR features with landmark attention.

    Features are expanded to one branch per component, refined by grouped
    convolutions, and recombined as an attention-weighted sum:
    ``out = sum_p M_p * f_p``.
    """

    def __init__(self, channels, depth=2):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.channels = channels
        self.expand = nn.Conv2d(channels, channels * N_COMPONENTS, 3, padding=1)
        self.branch_convs = nn.ModuleList(
            nn.Conv2d(
                channels * N_COMPONENTS,
                channels * N_COMPONENTS,
                3,
                padding=1,
                groups=N_COMPONENTS,
            )
            for _ in range(depth)
        )
        self.act = nn.LeakyReLU(LEAKY_SLOPE, inplace=True)

    def component_features(self, features):
        """Per-component branch features f_p, shape (B, 5, C, H, W)."""
        x = self.act(self.expand(features))
        for conv in self.branch_convs:
            x = self.act(conv(x))
        b, _, h, w = x.shape
        return x.view(b, N_COMPONENTS, self.channels, h, w)

    def forward(self, features, heatmaps, keep=None):
        attn = attention_softmax(group_components(heatmaps))
        if keep is not None:
            attn = mask_components(attn, keep)
        return fuse_features(attn, self.component_features(features))
