"""Decoupled text/image cross-attention and its mask-rescaled variant.

The two functional forms at the heart of the editing pipeline:

  decoupled:  h = Attn(Q, K_y, V_y) + s_x * Attn(Q, K_x, V_x)

  rescaled:   h = s_y * M * Attn(Q, K_y, V_y)
                + s_edit * M * Attn(Q, K_x, V_x)
                + s_non_edit * (1 - M) * Attn(Q, K_x, V_x)

where M holds one weight in [0, 1] per query (spatial) position and
broadcasts across feature channels.  With M == 1, s_y = 1 and s_edit = s the
rescaled form reduces exactly to the decoupled one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from onestep_edit.schedule import InvalidArgument


@dataclass(frozen=True)
class ScaleConfig:
    """Region-specific attention scales; defaults follow the editing recipe."""

    s_y: float = 2.0
    s_edit: float = 0.0
    s_non_edit: float = 1.0
    s_x: float = 1.0  # legacy global image-condition scale

    def validate(self) -> None:
        for name in ("s_y", "s_edit", "s_non_edit", "s_x"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidArgument(f"{name} must be finite and >= 0, got {v}")


class AttentionParams(nn.Module):
    """Projections for one decoupled cross-attention layer.

    Only ``W_K_x`` / ``W_V_x`` (the image-branch key/value maps) are marked
    trainable during stage-1 inversion training; everything is frozen in
    stage 2.
    """

    def __init__(self, d_model: int, d_attn: int, d_cond: int | None = None):
        super().__init__()
        d_cond = d_cond if d_cond is not None else d_model
        self.d_attn = d_attn
        self.W_Q = nn.Linear(d_model, d_attn, bias=False)
        self.W_K_y = nn.Linear(d_cond, d_attn, bias=False)
        self.W_V_y = nn.Linear(d_cond, d_attn, bias=False)
        self.W_K_x = nn.Linear(d_cond, d_attn, bias=False)
        self.W_V_x = nn.Linear(d_cond, d_attn, bias=False)

    def stage1_trainable(self) -> list[nn.Parameter]:
        return list(self.W_K_x.parameters()) + list(self.W_V_x.parameters())


def _attn(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Plain row-softmax attention on [B, L, d] tensors."""
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    return torch.softmax(scores, dim=-1) @ v


def decoupled_cross_attention(
    Z_l: torch.Tensor,
    c_y: torch.Tensor,
    c_x: torch.Tensor,
    s_x: float,
    params: AttentionParams,
) -> torch.Tensor:
    """Text attention plus globally scaled image attention, shared queries."""
    q = params.W_Q(Z_l)
    text = _attn(q, params.W_K_y(c_y), params.W_V_y(c_y))
    image = _attn(q, params.W_K_x(c_x), params.W_V_x(c_x))
    return text + s_x * image


def aram_cross_attention(
    Z_l: torch.Tensor,
    c_y: torch.Tensor,
    c_x: torch.Tensor,
    M_l: torch.Tensor,
    scales: ScaleConfig,
    params: AttentionParams,
) -> torch.Tensor:
    """Mask-rescaled decoupled attention; M_l holds one weight per query."""
    scales.validate()
    if M_l.shape[-1] != Z_l.shape[-2]:
        raise InvalidArgument(
            f"mask has {M_l.shape[-1]} weights for {Z_l.shape[-2]} query positions"
        )
    if torch.any(M_l < 0) or torch.any(M_l > 1):
        raise InvalidArgument("mask weights must lie in [0, 1]")
    q = params.W_Q(Z_l)
    text = _attn(q, params.W_K_y(c_y), params.W_V_y(c_y))
    image = _attn(q, params.W_K_x(c_x), params.W_V_x(c_x))
    m = M_l.unsqueeze(-1)  # broadcast across channels
    return scales.s_y * m * text + scales.s_edit * m * image + scales.s_non_edit * (1 - m) * image


def resize_mask(M: torch.Tensor, target_resolution: int) -> torch.Tensor:
    """Resample a [H, W] mask to [target, target].

    Downsampling area-averages, upsampling is nearest-neighbor; either way the
    output stays in [0, 1].  Resolutions must divide each other.
    """
    h, w = M.shape[-2], M.shape[-1]
    if h != w:
        raise InvalidArgument("masks are square")
    r = target_resolution
    m = M.unsqueeze(0).unsqueeze(0).float() if M.dim() == 2 else M.unsqueeze(1).float()
    if r == h:
        out = m
    elif r < h:
        if h % r != 0:
            raise InvalidArgument(f"cannot area-average {h} -> {r}")
        out = F.avg_pool2d(m, kernel_size=h // r)
    else:
        if r % h != 0:
            raise InvalidArgument(f"cannot nearest-upsample {h} -> {r}")
        out = F.interpolate(m, size=(r, r), mode="nearest")
    return out.squeeze(1).squeeze(0) if M.dim() == 2 else out.squeeze(1)


def mask_to_query_weights(M: torch.Tensor, resolution: int) -> torch.Tensor:
    """Resize a [H, W] (or [B, H, W]) mask and flatten to per-query weights."""
    m = resize_mask(M, resolution)
    return m.reshape(*m.shape[:-2], resolution * resolution)
