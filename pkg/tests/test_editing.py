import pytest
import torch

from onestep_edit.attention import ScaleConfig
from onestep_edit.editing import (
    EditMask,
    EditRequest,
    ModelBundle,
    edit_image,
    extract_mask,
    normalize_difference_map,
    reconstruct,
)
from onestep_edit.losses import InvalidState
from onestep_edit.networks import ImageEncoder, InversionNet, IPAugmentedGenerator, OneStepGenerator
from onestep_edit.prompts import PromptSpec, encode_prompt, make_vocab_weights
from onestep_edit.schedule import InvalidArgument, make_schedule


def _bundle(seed=0):
    torch.manual_seed(seed)
    schedule = make_schedule(1000, "cosine")
    base = OneStepGenerator(terminal_t=schedule.T)
    base.trained = True
    g_ip = IPAugmentedGenerator(base, ImageEncoder())
    inv = InversionNet.init_from_generator(base)
    return ModelBundle(inv=inv, g_ip=g_ip, schedule=schedule,
                       vocab=make_vocab_weights())


def _image(seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(3, 32, 32, generator=g) * 2 - 1


def test_normalize_difference_map_range_and_blur():
    g = torch.Generator().manual_seed(0)
    diff = torch.randn(3, 32, 32, generator=g)
    mask = normalize_difference_map(diff)
    assert mask.weights.shape == (32, 32)
    assert float(mask.weights.min()) == 0.0
    assert float(mask.weights.max()) == 1.0
    assert not mask.degenerate


def test_normalize_difference_map_degenerate():
    mask = normalize_difference_map(torch.zeros(3, 32, 32))
    assert mask.degenerate
    assert torch.equal(mask.weights, torch.zeros(32, 32))


def test_identical_prompts_fall_back_to_reconstruction():
    """Editing toward the source prompt must return exactly reconstruct()."""
    models = _bundle()
    img = _image()
    prompt = PromptSpec.parse("red circle/plain blue")
    req = EditRequest(source_image=img, source_prompt=prompt, edit_prompt=prompt,
                      scales=ScaleConfig())
    out = edit_image(models, req)
    assert out["mask"].degenerate
    rec = reconstruct(models, img, prompt).clamp(-1, 1)
    mse = float(((out["edited"] - rec) ** 2).mean())
    assert mse == 0.0


def test_self_guided_edit_counts_model_calls():
    """Exactly two denoiser evaluations and one image encode per edit."""
    models = _bundle(seed=1)
    img = _image(1)
    models.inv.unet.forward_calls = 0
    models.g_ip.base.unet.forward_calls = 0
    models.g_ip.image_encoder.forward_calls = 0
    req = EditRequest(
        source_image=img,
        source_prompt=PromptSpec.parse("red circle/plain blue"),
        edit_prompt=PromptSpec.parse("green circle/plain blue"),
        scales=ScaleConfig(),
    )
    out = edit_image(models, req)
    unet_calls = models.inv.unet.forward_calls + models.g_ip.base.unet.forward_calls
    assert unet_calls == 2
    assert models.g_ip.image_encoder.forward_calls == 1
    assert set(out["timings_ms"]) == {"invert", "mask", "generate", "total"}


def test_user_mask_skips_extraction():
    models = _bundle(seed=2)
    img = _image(2)
    weights = torch.zeros(32, 32)
    weights[10:20, 10:20] = 1.0
    req = EditRequest(
        source_image=img,
        source_prompt=PromptSpec.parse("red circle/plain blue"),
        edit_prompt=PromptSpec.parse("green circle/plain blue"),
        scales=ScaleConfig(),
        user_mask=EditMask(weights, provenance="user-supplied"),
    )
    out = edit_image(models, req)
    assert torch.equal(out["mask"].weights, weights)
    assert out["timings_ms"]["mask"] == 0.0
    assert float(out["edited"].min()) >= -1.0 and float(out["edited"].max()) <= 1.0


def test_extract_mask_uses_one_batched_forward():
    models = _bundle(seed=3)
    models.inv.unet.forward_calls = 0
    c1 = encode_prompt(PromptSpec.parse("red circle/plain blue"), models.vocab)
    c2 = encode_prompt(PromptSpec.parse("red square/plain blue"), models.vocab)
    mask = extract_mask(models.inv, _image(3), c1, c2)
    assert models.inv.unet.forward_calls == 1
    assert mask.weights.shape == (32, 32)


def test_bad_inputs_rejected():
    models = _bundle()
    prompt = PromptSpec.parse("red circle/plain blue")
    other = PromptSpec.parse("green circle/plain blue")
    with pytest.raises(InvalidArgument):
        edit_image(models, EditRequest(torch.rand(3, 16, 16), prompt, other, ScaleConfig()))
    bad_mask = EditMask(torch.full((32, 32), 2.0), provenance="user-supplied")
    with pytest.raises(InvalidArgument):
        edit_image(models, EditRequest(_image(), prompt, other, ScaleConfig(),
                                       user_mask=bad_mask))
    with pytest.raises(InvalidState):
        edit_image(ModelBundle(None, None, models.schedule, models.vocab),
                   EditRequest(_image(), prompt, other, ScaleConfig()))


def test_edit_is_deterministic():
    models = _bundle(seed=4)
    img = _image(4)
    req = EditRequest(
        source_image=img,
        source_prompt=PromptSpec.parse("red circle/plain blue"),
        edit_prompt=PromptSpec.parse("blue circle/plain red"),
        scales=ScaleConfig(),
    )
    a = edit_image(models, req)
    b = edit_image(models, req)
    assert torch.equal(a["edited"], b["edited"])
    assert torch.equal(a["mask"].weights, b["mask"].weights)
