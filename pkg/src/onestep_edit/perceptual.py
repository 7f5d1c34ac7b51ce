"""Self-contained structure/texture perceptual distance.

Follows the structure+texture decomposition of deep perceptual similarity
metrics, but over a fixed, seeded, randomly initialized 3-stage conv pyramid
instead of a pretrained backbone.  Per stage and channel we compare spatial
feature means ("texture") and feature correlations ("structure"); the raw
input is included as stage 0 so that a distance of 0 implies pixel equality.

The returned distance is symmetric and bounded in [0, 1].
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from onestep_edit.schedule import InvalidArgument

_C_STAB = 1e-6


class FeaturePyramid(nn.Module):
    """Frozen 3-stage conv feature extractor with a fixed seed."""

    def __init__(self, seed: int = 97):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        chans = [3, 8, 16, 32]
        self.convs = nn.ModuleList(
            [nn.Conv2d(chans[i], chans[i + 1], 3, padding=1) for i in range(3)]
        )
        for conv in self.convs:
            nn.init.normal_(conv.weight, std=0.2, generator=gen)
            nn.init.zeros_(conv.bias)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = [x]
        h = x
        for conv in self.convs:
            h = F.avg_pool2d(F.relu(conv(h)), 2)
            feats.append(h)
        return feats


_DEFAULT_NET: FeaturePyramid | None = None


def default_feature_net() -> FeaturePyramid:
    global _DEFAULT_NET
    if _DEFAULT_NET is None:
        _DEFAULT_NET = FeaturePyramid()
    return _DEFAULT_NET


def _stage_similarity(fa: torch.Tensor, fb: torch.Tensor) -> torch.Tensor:
    """Mean over channels of 0.5 * texture + 0.5 * structure similarity."""
    a = fa.flatten(-2)  # [..., C, HW]
    b = fb.flatten(-2)
    mu_a, mu_b = a.mean(-1), b.mean(-1)
    var_a = a.var(-1, unbiased=False)
    var_b = b.var(-1, unbiased=False)
    cov = ((a - mu_a.unsqueeze(-1)) * (b - mu_b.unsqueeze(-1))).mean(-1)
    texture = (2 * mu_a * mu_b + _C_STAB) / (mu_a**2 + mu_b**2 + _C_STAB)
    structure = (2 * cov + _C_STAB) / (var_a + var_b + _C_STAB)
    return (0.5 * texture + 0.5 * structure).mean(-1)


def perceptual_distance(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    feature_net: FeaturePyramid | None = None,
) -> torch.Tensor:
    """Structure/texture distance in [0, 1]; 0 iff the images are equal.

    Accepts [3, H, W] or [B, 3, H, W]; returns a scalar (or [B]) tensor that
    participates in autograd through ``x_hat``.
    """
    if x.shape != x_hat.shape:
        raise InvalidArgument(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    net = feature_net if feature_net is not None else default_feature_net()
    single = x.dim() == 3
    if single:
        x, x_hat = x.unsqueeze(0), x_hat.unsqueeze(0)
    sims = [_stage_similarity(fa, fb) for fa, fb in zip(net(x), net(x_hat))]
    similarity = torch.stack(sims, dim=0).mean(0)  # equal stage weights, in [-1, 1]
    dist = (1 - similarity) / 2
    dist = dist.clamp(0.0, 1.0)
    return dist[0] if single else dist
