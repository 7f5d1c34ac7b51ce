"""Background-preservation metrics over the unedited region.

MSE is averaged over pixels weighted by (1 - mask) and PSNR is reported
against a peak of 1.0 (images are compared on the [0, 1] scale), capped at
99 dB for numerically exact matches.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch

from onestep_edit.schedule import InvalidArgument

PSNR_CAP = 99.0


@dataclass
class MetricsReport:
    background_psnr: float
    background_mse: float
    semantic_whole: float = float("nan")
    semantic_edited: float = float("nan")
    mask_iou: float = float("nan")
    wall_ms: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def to_unit(img: torch.Tensor) -> torch.Tensor:
    """[-1, 1] latent scale -> [0, 1] image scale."""
    return (img.clamp(-1, 1) + 1) / 2


def background_metrics(src: torch.Tensor, edited: torch.Tensor, mask: torch.Tensor, peak: float = 1.0) -> dict:
    """PSNR/MSE over the region where mask is 0 (weights are 1 - mask)."""
    if src.shape != edited.shape:
        raise InvalidArgument("source/edited shape mismatch")
    if torch.any(mask < 0) or torch.any(mask > 1):
        raise InvalidArgument("mask must lie in [0, 1]")
    w = (1 - mask).to(src.dtype)
    if w.dim() == src.dim() - 1:
        w = w.unsqueeze(-3)  # broadcast over channels
    total = float((w * torch.ones_like(src)).sum())
    if total <= 0:
        return {"psnr": float("nan"), "mse": float("nan"), "degenerate": True}
    mse = float((w * (src - edited) ** 2).sum() / total)
    if mse < 1e-10:
        psnr = PSNR_CAP
    else:
        psnr = min(PSNR_CAP, 10 * torch.log10(torch.tensor(peak**2 / mse)).item())
    return {"psnr": psnr, "mse": mse, "degenerate": False}


def mask_iou(a: torch.Tensor, b: torch.Tensor, threshold: float = 0.5) -> float:
    """IoU between two soft masks binarized at ``threshold``."""
    ab = a >= threshold
    bb = b >= threshold
    union = float((ab | bb).sum())
    if union == 0:
        return 1.0
    return float((ab & bb).sum()) / union
