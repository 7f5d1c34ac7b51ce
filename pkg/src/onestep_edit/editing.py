"""Inference-time pipeline: invert, self-guided mask, attention-rescaled edit.

A self-guided edit costs exactly two U-net evaluations: one batched inversion
forward (source and edit prompts stacked into a batch of 2) and one generator
forward, plus one image-encoder evaluation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from onestep_edit.attention import ScaleConfig
from onestep_edit.losses import InvalidState
from onestep_edit.networks import InversionNet, IPAugmentedGenerator
from onestep_edit.prompts import PromptSpec, encode_prompt, make_vocab_weights
from onestep_edit.schedule import InvalidArgument, NoiseSchedule

MASK_BLUR_SIGMA = 1.5
MASK_GUIDED_RADIUS = 3
MASK_GUIDED_EPS = 1e-3
DEGENERATE_EPS = 1e-8


@dataclass
class EditMask:
    weights: torch.Tensor  # [H, W] in [0, 1]
    provenance: str = "self-guided"  # self-guided | user-supplied | ground-truth
    degenerate: bool = False

    def validate(self) -> None:
        if torch.any(self.weights < 0) or torch.any(self.weights > 1) or not torch.isfinite(self.weights).all():
            raise InvalidArgument("mask weights must be finite and in [0, 1]")


@dataclass
class EditRequest:
    source_image: torch.Tensor  # [3, H, W] in [-1, 1]
    source_prompt: PromptSpec
    edit_prompt: PromptSpec
    scales: ScaleConfig = field(default_factory=ScaleConfig)
    user_mask: EditMask | None = None
    seed: int = 0


@dataclass
class ModelBundle:
    """Everything inference needs, loaded once and treated as immutable."""

    inv: InversionNet
    g_ip: IPAugmentedGenerator
    schedule: NoiseSchedule
    vocab: torch.Tensor
    s_x: float = 1.0  # 0.0 for variants trained without the image branch

    @staticmethod
    def check(models: "ModelBundle") -> None:
        if models is None or models.inv is None or models.g_ip is None:
            raise InvalidState("inference requires trained inversion and generator models")


def _gaussian_kernel(sigma: float) -> torch.Tensor:
    radius = max(1, int(round(3 * sigma)))
    xs = torch.arange(-radius, radius + 1, dtype=torch.float32)
    k1 = torch.exp(-(xs**2) / (2 * sigma**2))
    k1 = k1 / k1.sum()
    return k1.outer(k1)


_KERNEL = _gaussian_kernel(MASK_BLUR_SIGMA)


def _blur(m: torch.Tensor) -> torch.Tensor:
    k = _KERNEL.to(m.dtype)
    pad = k.shape[0] // 2
    x = m[None, None]
    x = F.pad(x, (pad, pad, pad, pad), mode="replicate")
    return F.conv2d(x, k[None, None])[0, 0]


def _box_filter(x: torch.Tensor, radius: int) -> torch.Tensor:
    size = 2 * radius + 1
    k = torch.full((1, 1, size, size), 1.0 / (size * size), dtype=x.dtype)
    y = F.pad(x[None, None], (radius,) * 4, mode="replicate")
    return F.conv2d(y, k)[0, 0]


def _guided_filter(p: torch.Tensor, guide: torch.Tensor) -> torch.Tensor:
    """Edge-aware smoothing of map ``p`` guided by the (grayscale) source image.

    Snaps the blurred difference map to the image's region boundaries, which
    the map itself localizes only coarsely.
    """
    g = guide.mean(dim=0)
    r, e = MASK_GUIDED_RADIUS, MASK_GUIDED_EPS
    mean_g, mean_p = _box_filter(g, r), _box_filter(p, r)
    var_g = _box_filter(g * g, r) - mean_g * mean_g
    cov_gp = _box_filter(g * p, r) - mean_g * mean_p
    a = cov_gp / (var_g + e)
    b = mean_p - a * mean_g
    return _box_filter(a, r) * g + _box_filter(b, r)


def normalize_difference_map(diff: torch.Tensor, guide: torch.Tensor | None = None) -> EditMask:
    """Channel-L2, Gaussian blur, optional guided refinement, min-max to [0, 1].

    A near-constant map (max - min below 1e-8) cannot be normalized; it is
    returned as an all-zeros mask flagged degenerate.
    """
    mag = torch.sqrt((diff**2).sum(dim=0))
    mag = _blur(mag)
    if guide is not None:
        mag = _guided_filter(mag, guide)
    lo, hi = float(mag.min()), float(mag.max())
    if hi - lo < DEGENERATE_EPS:
        return EditMask(torch.zeros_like(mag), provenance="self-guided", degenerate=True)
    return EditMask(((mag - lo) / (hi - lo)).clamp(0, 1), provenance="self-guided")


def extract_mask(
    inv: InversionNet,
    z_src: torch.Tensor,
    c_src: torch.Tensor,
    c_edit: torch.Tensor,
) -> EditMask:
    """Self-guided editing mask from one batched two-prompt inversion forward."""
    with torch.no_grad():
        batch_z = torch.stack([z_src, z_src])
        batch_c = torch.stack([c_src, c_edit])
        eps = inv(batch_z, batch_c)
    return normalize_difference_map(eps[0] - eps[1], guide=z_src)


@torch.no_grad()
def invert(inv: InversionNet, z: torch.Tensor, c_y: torch.Tensor) -> torch.Tensor:
    """Single-forward inversion to noise."""
    return inv(z, c_y)


@torch.no_grad()
def reconstruct(models: ModelBundle, x_src: torch.Tensor, c_src: PromptSpec) -> torch.Tensor:
    """Invert then regenerate under the source prompt (global image condition)."""
    ModelBundle.check(models)
    c_y = encode_prompt(c_src, models.vocab)
    eps_hat = models.inv(x_src, c_y)
    c_x = models.g_ip.encode_image(x_src)
    return models.g_ip(eps_hat, c_y, c_x, mode="global", s_x=models.s_x)


@torch.no_grad()
def edit_image(models: ModelBundle, req: EditRequest) -> dict:
    """Run the full edit pipeline; returns edited image, mask used, timings.

    With a degenerate self-guided mask (edit prompt indistinguishable from the
    source) the pipeline returns the plain reconstruction.
    """
    ModelBundle.check(models)
    req.source_prompt.validate()
    req.edit_prompt.validate()
    req.scales.validate()
    z_src = req.source_image
    if z_src.shape[-2:] != (32, 32):
        raise InvalidArgument(f"expected 32x32 source image, got {tuple(z_src.shape)}")
    c_src = encode_prompt(req.source_prompt, models.vocab)
    c_edit = encode_prompt(req.edit_prompt, models.vocab)
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    if req.user_mask is not None:
        req.user_mask.validate()
        if req.user_mask.weights.shape != z_src.shape[-2:]:
            raise InvalidArgument("user mask resolution does not match the image")
        eps_hat = models.inv(z_src, c_src)
        mask = req.user_mask
        timings["invert"] = (time.perf_counter() - t0) * 1000
        timings["mask"] = 0.0
    else:
        eps_pair = models.inv(torch.stack([z_src, z_src]), torch.stack([c_src, c_edit]))
        timings["invert"] = (time.perf_counter() - t0) * 1000
        t1 = time.perf_counter()
        eps_hat = eps_pair[0]
        mask = normalize_difference_map(eps_pair[0] - eps_pair[1], guide=z_src)
        timings["mask"] = (time.perf_counter() - t1) * 1000

    t2 = time.perf_counter()
    c_x = models.g_ip.encode_image(z_src)
    if mask.degenerate and mask.provenance == "self-guided":
        # No-op edit: reproduce the plain reconstruction exactly.  The batched
        # two-prompt forward above is not bitwise identical to a single-sample
        # forward on this backend, so invert again through the single path.
        eps_hat = models.inv(z_src, c_edit)
        edited = models.g_ip(eps_hat, c_edit, c_x, mode="global", s_x=models.s_x)
    else:
        edited = models.g_ip(
            eps_hat, c_edit, c_x, mode="mask", scales=req.scales, mask=mask.weights.unsqueeze(0)
        )
    timings["generate"] = (time.perf_counter() - t2) * 1000
    timings["total"] = (time.perf_counter() - t0) * 1000
    return {"edited": edited.clamp(-1, 1), "mask": mask, "timings_ms": timings}
