"""Toy attribute classifier: the prompt-alignment surrogate.

A small conv net with one softmax head per prompt attribute (shape, subject
color, background style, background color).  Trained once with a fixed seed
on rendered scenes, with noise/blur/masking augmentation so it stays reliable
on generator outputs and on subject-only (masked) crops.  The semantic score
of (image, prompt) is the mean predicted probability of the prompt's
attributes, a calibrated stand-in for a CLIP alignment score.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from onestep_edit.config import StageConfig
from onestep_edit.datagen import ToyScene
from onestep_edit.losses import InvalidState
from onestep_edit.prompts import BG_STYLES, COLORS, SHAPES, PromptSpec
from onestep_edit.schedule import InvalidArgument

HEADS = {
    "shape": list(SHAPES),
    "subject_color": list(COLORS),
    "background_style": list(BG_STYLES),
    "background_color": list(COLORS),
}
SUBJECT_HEADS = ("shape", "subject_color")


class AttributeClassifier(nn.Module):
    def __init__(self, width: int = 24):
        super().__init__()
        self.backbone = nn.Sequential(
            nn.Conv2d(3, width, 3, stride=2, padding=1), nn.SiLU(),       # 16
            nn.Conv2d(width, width * 2, 3, stride=2, padding=1), nn.SiLU(),  # 8
            nn.Conv2d(width * 2, width * 2, 3, stride=2, padding=1), nn.SiLU(),  # 4
        )
        self.heads = nn.ModuleDict(
            {name: nn.Linear(width * 2, len(values)) for name, values in HEADS.items()}
        )
        self.trained = False

    def forward(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        feat = self.backbone(x).mean(dim=(2, 3))
        return {name: head(feat) for name, head in self.heads.items()}


def _labels(p: PromptSpec) -> dict[str, int]:
    return {
        "shape": SHAPES.index(p.subject_shape),
        "subject_color": COLORS.index(p.subject_color),
        "background_style": BG_STYLES.index(p.background_style),
        "background_color": COLORS.index(p.background_color),
    }


def train_classifier(scenes: list[ToyScene], config: StageConfig) -> AttributeClassifier:
    """Train the frozen evaluation classifier with a fixed seed."""
    if not scenes:
        raise InvalidArgument("classifier needs a non-empty dataset")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    clf = AttributeClassifier()
    opt = torch.optim.Adam(clf.parameters(), lr=config.learning_rate)
    for _ in range(config.iterations):
        idx = rng.integers(len(scenes), size=config.batch_size)
        images = torch.stack([scenes[i].image for i in idx])
        labels = [_labels(scenes[i].prompt) for i in idx]
        # robustness augmentation: noise, blur, and subject-only crops
        images = images + torch.randn_like(images) * float(rng.uniform(0, 0.15))
        if rng.random() < 0.3:
            images = F.avg_pool2d(F.pad(images, (1, 1, 1, 1), mode="replicate"), 3, stride=1)
        masked = rng.random() < 0.4
        if masked:
            masks = torch.stack([scenes[i].gt_mask for i in idx]).unsqueeze(1)
            images = images * masks + (-1) * (1 - masks)
        logits = clf(images)
        loss = 0.0
        for name in HEADS:
            if masked and name not in SUBJECT_HEADS:
                continue  # background is hidden in masked crops
            target = torch.tensor([l[name] for l in labels])
            loss = loss + F.cross_entropy(logits[name], target)
        opt.zero_grad()
        loss.backward()
        opt.step()
    clf.trained = True
    clf.eval()
    for p in clf.parameters():
        p.requires_grad_(False)
    return clf


@torch.no_grad()
def semantic_score(
    image: torch.Tensor,
    prompt: PromptSpec,
    classifier: AttributeClassifier,
    region: str = "whole",
    mask: torch.Tensor | None = None,
) -> float:
    """Mean predicted probability of the prompt's attributes in the region.

    ``whole`` scores all four attributes on the full image; ``masked`` scores
    the subject attributes on the mask-cropped image (background blanked).
    """
    if not getattr(classifier, "trained", False):
        raise InvalidState("semantic_score requires a trained classifier")
    if region not in ("whole", "masked"):
        raise InvalidArgument(f"unknown region {region!r}")
    prompt.validate()
    x = image
    heads = list(HEADS)
    if region == "masked":
        if mask is None:
            raise InvalidArgument("masked scoring needs a mask")
        m = mask.unsqueeze(0)
        x = image * m + (-1) * (1 - m)
        heads = list(SUBJECT_HEADS)
    logits = classifier(x)
    labels = _labels(prompt)
    probs = [float(torch.softmax(logits[h][0], dim=-1)[labels[h]]) for h in heads]
    return float(np.mean(probs))


@torch.no_grad()
def predicted_attributes(image: torch.Tensor, classifier: AttributeClassifier) -> dict[str, str]:
    """Argmax attribute predictions, used for edit success counting."""
    if not getattr(classifier, "trained", False):
        raise InvalidState("classifier not trained")
    logits = classifier(image)
    return {name: HEADS[name][int(logits[name][0].argmax())] for name in HEADS}
