"""Tiny U-shaped denoiser and the models built from it.

One architecture serves three roles:

  * teacher          -- epsilon prediction from (z_t, t, c_y), multi-step prior
  * one-step G       -- (eps, c_y) -> latent at a fixed terminal timestep
  * inversion net F  -- (z, c_y) -> inverted noise, same architecture as G

The image-condition (IP) branch augments G into G^IP: a strided conv encoder
produces N = 4 image tokens, and every cross-attention layer carries extra
key/value projections for them.  With the global image scale at 0 the branch
contributes exact zeros, so G^IP degenerates bitwise to G.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from onestep_edit.attention import (
    AttentionParams,
    ScaleConfig,
    aram_cross_attention,
    decoupled_cross_attention,
    mask_to_query_weights,
    _attn,
)
from onestep_edit.schedule import InvalidArgument

IMAGE_TOKENS = 4
D_COND = 64
RESOLUTION = 32


@dataclass
class ImageCondState:
    """How the image branch participates in one forward pass."""

    tokens: torch.Tensor  # [B, IMAGE_TOKENS, D_COND]
    mode: str = "global"  # "global" | "mask"
    s_x: float = 1.0
    scales: ScaleConfig | None = None
    mask: torch.Tensor | None = None  # [B, H, W], required in mask mode

    def validate(self) -> None:
        if self.mode not in ("global", "mask"):
            raise InvalidArgument(f"unknown image-condition mode {self.mode!r}")
        if self.mode == "mask":
            if self.mask is None or self.scales is None:
                raise InvalidArgument("mask mode requires both a mask and a ScaleConfig")
            self.scales.validate()


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sinusoidal embedding of integer timesteps."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, temb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(4, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, c_out)
        self.norm2 = nn.GroupNorm(4, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb_proj(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class CrossAttnLayer(nn.Module):
    """Spatial tokens attend to text tokens, optionally also to image tokens."""

    def __init__(self, channels: int, resolution: int, d_attn: int = 64):
        super().__init__()
        self.resolution = resolution
        self.norm = nn.GroupNorm(4, channels)
        self.params = AttentionParams(d_model=channels, d_attn=d_attn, d_cond=D_COND)
        self.proj_out = nn.Linear(d_attn, channels)

    def forward(self, x: torch.Tensor, c_y: torch.Tensor, ic: ImageCondState | None) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)  # [B, HW, C]
        if ic is None:
            q = self.params.W_Q(tokens)
            out = _attn(q, self.params.W_K_y(c_y), self.params.W_V_y(c_y))
        elif ic.mode == "global":
            out = decoupled_cross_attention(tokens, c_y, ic.tokens, ic.s_x, self.params)
        else:
            m = mask_to_query_weights(ic.mask, self.resolution)
            out = aram_cross_attention(tokens, c_y, ic.tokens, m, ic.scales, self.params)
        out = self.proj_out(out).transpose(1, 2).reshape(b, c, h, w)
        return x + out


class CondUNet(nn.Module):
    """3-level U-net at 32x32 with cross-attention at 16x16 and 8x8.

    ``forward_calls`` counts network evaluations; the one-forward-pass
    contracts of generation/inversion are asserted against it.
    """

    def __init__(self, base: int = 16, temb_dim: int = 64):
        super().__init__()
        self.temb_dim = temb_dim
        self.temb_mlp = nn.Sequential(nn.Linear(temb_dim, temb_dim), nn.SiLU(), nn.Linear(temb_dim, temb_dim))
        c1, c2, c3 = base, base * 2, base * 4
        self.conv_in = nn.Conv2d(3, c1, 3, padding=1)
        self.rb_down1 = ResBlock(c1, c1, temb_dim)
        self.down1 = nn.Conv2d(c1, c1, 3, stride=2, padding=1)
        self.rb_down2 = ResBlock(c1, c2, temb_dim)
        self.attn_down = CrossAttnLayer(c2, 16)
        self.down2 = nn.Conv2d(c2, c2, 3, stride=2, padding=1)
        self.rb_mid1 = ResBlock(c2, c3, temb_dim)
        self.attn_mid = CrossAttnLayer(c3, 8)
        self.rb_mid2 = ResBlock(c3, c3, temb_dim)
        self.up2 = nn.Upsample(scale_factor=2, mode="nearest")
        self.rb_up2 = ResBlock(c3 + c2, c2, temb_dim)
        self.attn_up = CrossAttnLayer(c2, 16)
        self.up1 = nn.Upsample(scale_factor=2, mode="nearest")
        self.rb_up1 = ResBlock(c2 + c1, c1, temb_dim)
        self.norm_out = nn.GroupNorm(4, c1)
        self.conv_out = nn.Conv2d(c1, 3, 3, padding=1)
        self.forward_calls = 0

    def attention_layers(self) -> list[CrossAttnLayer]:
        return [self.attn_down, self.attn_mid, self.attn_up]

    def forward(
        self,
        z: torch.Tensor,
        t: torch.Tensor,
        c_y: torch.Tensor,
        image_cond: ImageCondState | None = None,
    ) -> torch.Tensor:
        if z.dim() != 4 or z.shape[1] != 3:
            raise InvalidArgument(f"expected [B, 3, H, W] latent, got {tuple(z.shape)}")
        if image_cond is not None:
            image_cond.validate()
        self.forward_calls += 1
        temb = self.temb_mlp(timestep_embedding(t, self.temb_dim))
        h1 = self.rb_down1(self.conv_in(z), temb)
        h2 = self.rb_down2(self.down1(h1), temb)
        h2 = self.attn_down(h2, c_y, image_cond)
        h3 = self.rb_mid1(self.down2(h2), temb)
        h3 = self.attn_mid(h3, c_y, image_cond)
        h3 = self.rb_mid2(h3, temb)
        u2 = self.rb_up2(torch.cat([self.up2(h3), h2], dim=1), temb)
        u2 = self.attn_up(u2, c_y, image_cond)
        u1 = self.rb_up1(torch.cat([self.up1(u2), h1], dim=1), temb)
        return self.conv_out(F.silu(self.norm_out(u1)))


class ImageEncoder(nn.Module):
    """4-layer strided conv encoder + linear projection to IMAGE_TOKENS tokens."""

    def __init__(self, d: int = D_COND):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.SiLU(),   # 16x16
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.SiLU(),  # 8x8
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.SiLU(),  # 4x4
            nn.Conv2d(64, d, 3, stride=2, padding=1),              # 2x2 -> 4 tokens
        )
        self.proj = nn.Linear(d, d)
        self.forward_calls = 0

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.forward_calls += 1
        if x.shape[-1] != RESOLUTION or x.shape[-2] != RESOLUTION:
            raise InvalidArgument(f"image encoder expects {RESOLUTION}x{RESOLUTION} inputs")
        single = x.dim() == 3
        if single:
            x = x.unsqueeze(0)
        feat = self.net(x)  # [B, d, 2, 2]
        tokens = self.proj(feat.flatten(2).transpose(1, 2))  # [B, 4, d]
        return tokens[0] if single else tokens


class OneStepGenerator(nn.Module):
    """One forward pass from noise to latent, at a fixed terminal timestep."""

    def __init__(self, unet: CondUNet | None = None, terminal_t: int = 1000):
        super().__init__()
        self.unet = unet if unet is not None else CondUNet()
        self.terminal_t = terminal_t

    @property
    def forward_calls(self) -> int:
        return self.unet.forward_calls

    def forward(self, eps: torch.Tensor, c_y: torch.Tensor, image_cond: ImageCondState | None = None) -> torch.Tensor:
        single = eps.dim() == 3
        if single:
            eps, c_y = eps.unsqueeze(0), c_y.unsqueeze(0)
        t = torch.full((eps.shape[0],), self.terminal_t, dtype=torch.long)
        out = self.unet(eps, t, c_y, image_cond)
        return out[0] if single else out


class IPAugmentedGenerator(nn.Module):
    """Generator plus the image-condition branch (encoder + per-layer K/V maps).

    The per-layer image key/value projections live inside the shared U-net's
    attention layers; ``ip_parameters`` collects exactly the members trained in
    stage 1 (and frozen in stage 2).
    """

    def __init__(self, base: OneStepGenerator, image_encoder: ImageEncoder | None = None):
        super().__init__()
        self.base = base
        self.image_encoder = image_encoder if image_encoder is not None else ImageEncoder()

    def ip_parameters(self) -> list[nn.Parameter]:
        params = list(self.image_encoder.parameters())
        for layer in self.base.unet.attention_layers():
            params += layer.params.stage1_trainable()
        return params

    def encode_image(self, x: torch.Tensor) -> torch.Tensor:
        return self.image_encoder(x)

    def forward(
        self,
        eps: torch.Tensor,
        c_y: torch.Tensor,
        c_x: torch.Tensor,
        mode: str = "global",
        s_x: float = 1.0,
        scales: ScaleConfig | None = None,
        mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        ic = ImageCondState(tokens=c_x, mode=mode, s_x=s_x, scales=scales, mask=mask)
        return self.base(eps, c_y, image_cond=ic)


class InversionNet(nn.Module):
    """Same architecture as the generator; maps (z, c_y) -> inverted noise."""

    def __init__(self, unet: CondUNet | None = None, terminal_t: int = 1000):
        super().__init__()
        self.unet = unet if unet is not None else CondUNet()
        self.terminal_t = terminal_t

    @classmethod
    def init_from_generator(cls, g: OneStepGenerator) -> "InversionNet":
        net = cls(terminal_t=g.terminal_t)
        net.unet.load_state_dict(g.unet.state_dict())
        net.unet.forward_calls = 0
        return net

    @property
    def forward_calls(self) -> int:
        return self.unet.forward_calls

    def forward(self, z: torch.Tensor, c_y: torch.Tensor) -> torch.Tensor:
        single = z.dim() == 3
        if single:
            z, c_y = z.unsqueeze(0), c_y.unsqueeze(0)
        t = torch.full((z.shape[0],), self.terminal_t, dtype=torch.long)
        out = self.unet(z, t, c_y)
        return out[0] if single else out


class TinyGenerator(nn.Module):
    """A deliberately different, smaller one-step generator.

    Exists to exercise the generator-interface pluggability contract: the
    inversion machinery must train against anything exposing
    ``forward(eps, c_y)`` with matching shapes.
    """

    def __init__(self, hidden: int = 24):
        super().__init__()
        self.cond = nn.Linear(D_COND, hidden)
        self.net = nn.Sequential(
            nn.Conv2d(3, hidden, 3, padding=1), nn.SiLU(),
            nn.Conv2d(hidden, hidden, 3, padding=1), nn.SiLU(),
            nn.Conv2d(hidden, 3, 3, padding=1),
        )
        self.forward_calls = 0

    def forward(self, eps: torch.Tensor, c_y: torch.Tensor) -> torch.Tensor:
        single = eps.dim() == 3
        if single:
            eps, c_y = eps.unsqueeze(0), c_y.unsqueeze(0)
        self.forward_calls += 1
        h = self.net[0](eps)
        h = h + self.cond(c_y.mean(dim=1))[:, :, None, None]
        for layer in self.net[1:]:
            h = layer(h)
        return h[0] if single else h
