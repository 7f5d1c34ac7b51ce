import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from onestep_edit.prompts import (
    BG_STYLES,
    COLORS,
    L_TEXT,
    SHAPES,
    VOCAB_SIZE,
    PromptSpec,
    encode_prompt,
    encode_prompts,
    make_vocab_weights,
    token_ids,
)
from onestep_edit.schedule import InvalidArgument


@settings(deadline=None, max_examples=40)
@given(
    shape=st.sampled_from(SHAPES),
    color=st.sampled_from(COLORS),
    style=st.sampled_from(BG_STYLES),
    bg=st.sampled_from(COLORS),
)
def test_parse_round_trip(shape, color, style, bg):
    spec = PromptSpec(shape, color, style, bg)
    assert PromptSpec.parse(spec.to_text()) == spec


def test_null_prompt():
    spec = PromptSpec.parse("")
    assert spec.empty
    ids = token_ids(spec)
    assert len(ids) == L_TEXT and len(set(ids)) == 1


def test_parse_rejects_garbage():
    for bad in ("red circle", "purple circle/plain blue", "red blob/plain blue",
                "red circle/odd blue", "a/b/c"):
        with pytest.raises(InvalidArgument):
            PromptSpec.parse(bad)


def test_encode_shapes_and_determinism():
    vocab = make_vocab_weights()
    assert vocab.shape == (VOCAB_SIZE, 64)
    assert torch.equal(vocab, make_vocab_weights())
    spec = PromptSpec.parse("red circle/plain blue")
    e = encode_prompt(spec, vocab)
    assert e.shape == (L_TEXT, 64)
    batch = encode_prompts([spec, PromptSpec(empty=True)], vocab)
    assert batch.shape == (2, L_TEXT, 64)
    assert torch.equal(batch[0], e)


def test_distinct_prompts_get_distinct_encodings():
    vocab = make_vocab_weights()
    a = encode_prompt(PromptSpec.parse("red circle/plain blue"), vocab)
    b = encode_prompt(PromptSpec.parse("green circle/plain blue"), vocab)
    assert not torch.equal(a, b)


def test_wrong_vocab_size_rejected():
    with pytest.raises(InvalidArgument):
        encode_prompt(PromptSpec(), torch.zeros(3, 64))


def test_from_dict_validates():
    with pytest.raises(InvalidArgument):
        PromptSpec.from_dict({"subject_shape": "blob", "subject_color": "red",
                              "background_style": "plain", "background_color": "blue"})
