"""One-step diffusion inversion and instant mask-aware image editing, at desk scale.

The package trains everything it needs from scratch on a procedural 32x32
toy domain: a small multi-step epsilon-prediction teacher, a one-step
generator distilled from it, an image-conditioned (IP) branch, and a
one-step inversion network trained in two stages.  Editing runs as
invert -> self-guided mask -> regenerate with attention rescaling.
"""

from onestep_edit.schedule import NoiseSchedule, make_schedule, forward_diffuse, ddim_step
from onestep_edit.prompts import PromptSpec, GRAMMAR
from onestep_edit.attention import ScaleConfig

__all__ = [
    "NoiseSchedule",
    "make_schedule",
    "forward_diffuse",
    "ddim_step",
    "PromptSpec",
    "GRAMMAR",
    "ScaleConfig",
]

__version__ = "0.1.0"
