import numpy as np
import pytest
import torch

from onestep_edit.datagen import (
    from_uint8,
    generate_dataset,
    load_dataset,
    render_scene,
    sample_prompt,
    save_dataset,
    to_uint8,
)
from onestep_edit.prompts import PromptSpec
from onestep_edit.schedule import InvalidArgument


def test_generate_dataset_shapes_and_ranges():
    scenes = generate_dataset(8, "real-like", seed=0)
    assert len(scenes) == 8
    for s in scenes:
        assert s.image.shape == (3, 32, 32)
        assert float(s.image.min()) >= -1.0 and float(s.image.max()) <= 1.0
        assert s.gt_mask.shape == (32, 32)
        assert set(s.gt_mask.unique().tolist()) <= {0.0, 1.0}
        assert s.split == "real-like"
        s.prompt.validate()


def test_generate_dataset_deterministic():
    a = generate_dataset(4, "synthetic-style", seed=3)
    b = generate_dataset(4, "synthetic-style", seed=3)
    for x, y in zip(a, b):
        assert torch.equal(x.image, y.image)
        assert x.prompt == y.prompt


def test_splits_differ():
    prompt = sample_prompt(np.random.default_rng(0))
    clean = render_scene(prompt, np.random.default_rng(5), "synthetic-style")
    noisy = render_scene(prompt, np.random.default_rng(5), "real-like")
    assert not torch.equal(clean.image, noisy.image)


def test_mask_covers_subject_color():
    """Inside the mask the dominant color is the subject's, outside it isn't."""
    from onestep_edit.prompts import COLOR_RGB

    prompt = PromptSpec("square", "red", "plain", "blue")
    scene = render_scene(prompt, np.random.default_rng(1), "synthetic-style")
    m = scene.gt_mask.bool()
    assert 20 < int(m.sum()) < 500
    inside = scene.image[:, m].mean(dim=1)
    target = torch.tensor(COLOR_RGB["red"]) * 2 - 1
    assert (inside - target).abs().max() < 0.2


def test_subject_color_never_matches_background():
    rng = np.random.default_rng(7)
    for _ in range(50):
        p = sample_prompt(rng)
        assert p.subject_color != p.background_color


def test_uint8_round_trip():
    g = torch.Generator().manual_seed(0)
    x = torch.rand(3, 32, 32, generator=g) * 2 - 1
    back = from_uint8(to_uint8(x))
    assert (back - x).abs().max() < 1.0 / 255 + 1e-6


def test_save_load_round_trip(tmp_path):
    scenes = generate_dataset(3, "real-like", seed=2)
    save_dataset(scenes, tmp_path)
    loaded = load_dataset(tmp_path)
    assert len(loaded) == 3
    for a, b in zip(scenes, loaded):
        assert (a.image - b.image).abs().max() < 1.0 / 255 + 1e-6
        assert torch.equal(a.gt_mask, b.gt_mask)
        assert a.prompt == b.prompt
        assert a.split == b.split


def test_empty_dataset_rejected():
    with pytest.raises(InvalidArgument):
        generate_dataset(0, "real-like")
    with pytest.raises(InvalidArgument):
        generate_dataset(4, "no-such-split")
