"""Procedural 32x32 toy scenes with exact ground-truth edit masks.

Each scene is one colored shape (circle / square / triangle, 6 colors) on a
plain or striped colored background.  Two splits:

  * ``synthetic-style`` -- hard-edged rendering, the domain the generator is
    distilled on;
  * ``real-like``       -- anti-aliased rendering plus noise texture and
    brightness jitter, a deliberately shifted domain for stage-2 training.

Images are stored as [3, 32, 32] tensors in [-1, 1]; the ground-truth mask
exactly covers the rendered subject pixels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from onestep_edit.prompts import BG_STYLES, COLORS, COLOR_RGB, SHAPES, PromptSpec
from onestep_edit.schedule import InvalidArgument

RESOLUTION = 32
SPLITS = ("synthetic-style", "real-like")


@dataclass
class ToyScene:
    image: torch.Tensor         # [3, 32, 32] in [-1, 1]
    prompt: PromptSpec
    gt_mask: torch.Tensor       # [32, 32] in {0, 1}
    bbox: tuple[int, int, int, int] = (0, 0, 0, 0)  # x0, y0, x1, y1 inclusive
    split: str = "synthetic-style"
    meta: dict = field(default_factory=dict)


def _shape_coverage(shape: str, cx: float, cy: float, r: float, supersample: int) -> np.ndarray:
    """Fraction of each pixel covered by the subject, via supersampling."""
    n = RESOLUTION * supersample
    ys, xs = np.mgrid[0:n, 0:n]
    xs = (xs + 0.5) / supersample
    ys = (ys + 0.5) / supersample
    if shape == "circle":
        inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= r**2
    elif shape == "square":
        half = r * 0.85
        inside = (np.abs(xs - cx) <= half) & (np.abs(ys - cy) <= half)
    elif shape == "triangle":
        # Upward-pointing triangle inscribed in the radius-r circle.
        top = cy - r
        base = cy + r * 0.6
        inside = (ys >= top) & (ys <= base)
        frac = np.clip((ys - top) / (base - top), 0, 1)
        inside &= np.abs(xs - cx) <= r * 0.9 * frac
    else:
        raise InvalidArgument(f"unknown shape {shape!r}")
    cov = inside.astype(np.float64).reshape(RESOLUTION, supersample, RESOLUTION, supersample)
    return cov.mean(axis=(1, 3))


def _background(prompt: PromptSpec) -> np.ndarray:
    color = np.array(COLOR_RGB[prompt.background_color])
    bg = np.tile(color, (RESOLUTION, RESOLUTION, 1))
    if prompt.background_style == "striped":
        rows = (np.arange(RESOLUTION) // 4) % 2 == 1
        bg[rows] *= 0.55
    return bg


def render_scene(
    prompt: PromptSpec,
    rng: np.random.Generator,
    split: str = "synthetic-style",
) -> ToyScene:
    """Render one scene with randomized subject placement."""
    if split not in SPLITS:
        raise InvalidArgument(f"unknown split {split!r}")
    prompt.validate()
    cx = 16.0 + rng.uniform(-4, 4)
    cy = 16.0 + rng.uniform(-4, 4)
    r = rng.uniform(6.5, 9.5)
    supersample = 4 if split == "real-like" else 1
    cov = _shape_coverage(prompt.subject_shape, cx, cy, r, supersample)
    mask = (cov >= 0.5).astype(np.float32)

    img = _background(prompt)
    subject = np.array(COLOR_RGB[prompt.subject_color])
    img = img * (1 - cov[..., None]) + subject * cov[..., None]

    if split == "real-like":
        img = img + rng.normal(0, 0.04, img.shape)
        img = img * (1 + rng.uniform(-0.05, 0.05))
    img = np.clip(img, 0, 1)

    ys, xs = np.nonzero(mask)
    bbox = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
    return ToyScene(
        image=torch.from_numpy((img * 2 - 1).transpose(2, 0, 1)).float(),
        prompt=prompt,
        gt_mask=torch.from_numpy(mask),
        bbox=bbox,
        split=split,
    )


def sample_prompt(rng: np.random.Generator) -> PromptSpec:
    """Uniform draw from the grammar; background color differs from subject."""
    color = COLORS[rng.integers(len(COLORS))]
    others = [c for c in COLORS if c != color]
    return PromptSpec(
        subject_shape=SHAPES[rng.integers(len(SHAPES))],
        subject_color=color,
        background_style=BG_STYLES[rng.integers(len(BG_STYLES))],
        background_color=others[rng.integers(len(others))],
    )


def generate_dataset(n: int, split: str = "synthetic-style", seed: int = 0) -> list[ToyScene]:
    """Deterministic scene set; same (n, split, seed) -> identical pixels."""
    if n < 1:
        raise InvalidArgument(f"dataset size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    return [render_scene(sample_prompt(rng), rng, split) for _ in range(n)]


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """[3, H, W] in [-1, 1] -> [H, W, 3] uint8."""
    arr = ((image.clamp(-1, 1) + 1) / 2 * 255).round().byte().numpy()
    return arr.transpose(1, 2, 0)


def from_uint8(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(arr.transpose(2, 0, 1).astype(np.float32) / 255 * 2 - 1)


def save_dataset(scenes: list[ToyScene], out_dir: str | Path) -> None:
    """PNG per scene + mask PNG + JSON sidecar, the on-disk dataset layout."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, scene in enumerate(scenes):
        stem = f"scene_{i:05d}"
        Image.fromarray(to_uint8(scene.image)).save(out / f"{stem}.png")
        Image.fromarray((scene.gt_mask.numpy() * 255).astype(np.uint8)).save(out / f"{stem}.mask.png")
        sidecar = {
            "prompt": scene.prompt.to_dict(),
            "bbox": list(scene.bbox),
            "mask_path": f"{stem}.mask.png",
            "split": scene.split,
        }
        (out / f"{stem}.json").write_text(json.dumps(sidecar, indent=2))


def load_dataset(in_dir: str | Path) -> list[ToyScene]:
    out: list[ToyScene] = []
    for sidecar_path in sorted(Path(in_dir).glob("scene_*.json")):
        meta = json.loads(sidecar_path.read_text())
        stem = sidecar_path.stem
        img = np.asarray(Image.open(sidecar_path.parent / f"{stem}.png"))
        mask = np.asarray(Image.open(sidecar_path.parent / meta["mask_path"])).astype(np.float32) / 255
        out.append(
            ToyScene(
                image=from_uint8(img),
                prompt=PromptSpec.from_dict(meta["prompt"]),
                gt_mask=torch.from_numpy(mask),
                bbox=tuple(meta["bbox"]),
                split=meta["split"],
            )
        )
    return out
