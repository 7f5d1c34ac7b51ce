"""Toy prompt grammar and the fixed text-condition encoder.

Prompts are structured, not free text: one subject shape + color on one
background style + color, e.g. "red circle/plain blue".  A prompt encodes to
L_TEXT = 5 token embeddings (shape, subject color, background style,
background color, terminator) drawn from a fixed seeded embedding table that
stands in for a pretrained text encoder.  The null prompt encodes to a
dedicated null-token sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch

from onestep_edit.schedule import InvalidArgument

SHAPES = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue", "yellow", "magenta", "cyan")
BG_STYLES = ("plain", "striped")

D_MODEL = 64
L_TEXT = 5

GRAMMAR = {
    "shapes": list(SHAPES),
    "colors": list(COLORS),
    "background_styles": list(BG_STYLES),
    "background_colors": list(COLORS),
}

COLOR_RGB = {
    "red": (0.9, 0.15, 0.15),
    "green": (0.15, 0.8, 0.2),
    "blue": (0.2, 0.25, 0.9),
    "yellow": (0.9, 0.85, 0.15),
    "magenta": (0.85, 0.2, 0.8),
    "cyan": (0.2, 0.8, 0.85),
}


@dataclass(frozen=True)
class PromptSpec:
    """A point in the toy grammar; ``empty=True`` means the null prompt."""

    subject_shape: str = "circle"
    subject_color: str = "red"
    background_style: str = "plain"
    background_color: str = "blue"
    empty: bool = False

    def validate(self) -> None:
        if self.empty:
            return
        if self.subject_shape not in SHAPES:
            raise InvalidArgument(f"unknown shape {self.subject_shape!r}")
        if self.subject_color not in COLORS:
            raise InvalidArgument(f"unknown color {self.subject_color!r}")
        if self.background_style not in BG_STYLES:
            raise InvalidArgument(f"unknown background style {self.background_style!r}")
        if self.background_color not in COLORS:
            raise InvalidArgument(f"unknown background color {self.background_color!r}")

    def to_text(self) -> str:
        if self.empty:
            return ""
        return (
            f"{self.subject_color} {self.subject_shape}"
            f"/{self.background_style} {self.background_color}"
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "PromptSpec":
        spec = PromptSpec(**d)
        spec.validate()
        return spec

    @staticmethod
    def parse(text: str) -> "PromptSpec":
        """Parse "COLOR SHAPE/STYLE BGCOLOR"; empty string is the null prompt."""
        text = text.strip()
        if not text:
            return PromptSpec(empty=True)
        try:
            subject, background = text.split("/")
            color, shape = subject.strip().split()
            style, bg_color = background.strip().split()
        except ValueError as e:
            raise InvalidArgument(f"malformed prompt {text!r}: expected 'COLOR SHAPE/STYLE BGCOLOR'") from e
        spec = PromptSpec(shape, color, style, bg_color)
        spec.validate()
        return spec


# Vocabulary layout: one id per attribute value, plus terminator + null tokens.
_VOCAB = (
    [f"shape:{s}" for s in SHAPES]
    + [f"color:{c}" for c in COLORS]
    + [f"bg_style:{b}" for b in BG_STYLES]
    + [f"bg_color:{c}" for c in COLORS]
    + ["<end>", "<null>"]
)
_TOK = {name: i for i, name in enumerate(_VOCAB)}
VOCAB_SIZE = len(_VOCAB)


def make_vocab_weights(seed: int = 7, d: int = D_MODEL) -> torch.Tensor:
    """The fixed [VOCAB_SIZE, d] embedding table (seeded, never trained)."""
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(VOCAB_SIZE, d, generator=gen)


def token_ids(p: PromptSpec) -> list[int]:
    if p.empty:
        return [_TOK["<null>"]] * L_TEXT
    p.validate()
    return [
        _TOK[f"shape:{p.subject_shape}"],
        _TOK[f"color:{p.subject_color}"],
        _TOK[f"bg_style:{p.background_style}"],
        _TOK[f"bg_color:{p.background_color}"],
        _TOK["<end>"],
    ]


def encode_prompt(p: PromptSpec, vocab_weights: torch.Tensor) -> torch.Tensor:
    """Encode a prompt to its [L_TEXT, d] token embedding sequence."""
    ids = token_ids(p)
    if vocab_weights.shape[0] != VOCAB_SIZE:
        raise InvalidArgument(
            f"vocab table has {vocab_weights.shape[0]} rows, expected {VOCAB_SIZE}"
        )
    return vocab_weights[torch.tensor(ids)]


def encode_prompts(specs: list[PromptSpec], vocab_weights: torch.Tensor) -> torch.Tensor:
    """Batch version: stack to [B, L_TEXT, d]."""
    return torch.stack([encode_prompt(p, vocab_weights) for p in specs])
