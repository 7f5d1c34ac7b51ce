import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from onestep_edit.attention import (
    AttentionParams,
    ScaleConfig,
    aram_cross_attention,
    decoupled_cross_attention,
    mask_to_query_weights,
    resize_mask,
)
from onestep_edit.schedule import InvalidArgument


def _brute_force_attention(q, k, v):
    """Triple-loop scalar softmax attention; the independent oracle."""
    L, d = q.shape
    Lk = k.shape[0]
    out = torch.zeros(L, v.shape[1], dtype=torch.float64)
    for i in range(L):
        scores = [sum(float(q[i, a]) * float(k[j, a]) for a in range(d)) / math.sqrt(d)
                  for j in range(Lk)]
        mx = max(scores)
        exps = [math.exp(s - mx) for s in scores]
        total = sum(exps)
        for j in range(Lk):
            w = exps[j] / total
            for a in range(v.shape[1]):
                out[i, a] += w * float(v[j, a])
    return out.float()


def _setup(seed=0, L=6, d=8):
    g = torch.Generator().manual_seed(seed)
    params = AttentionParams(d, d, d)
    for p in params.parameters():
        p.data = torch.randn(p.shape, generator=g) * 0.5
    Z = torch.randn(1, L, d, generator=g)
    c_y = torch.randn(1, 5, d, generator=g)
    c_x = torch.randn(1, 4, d, generator=g)
    return params, Z, c_y, c_x


def test_rescaled_attention_matches_brute_force_oracle():
    """Full formula vs a scalar triple-loop implementation, 1e-6."""
    params, Z, c_y, c_x = _setup()
    M = torch.tensor([[0.0, 0.2, 0.5, 0.8, 1.0, 0.3]])
    scales = ScaleConfig(s_y=2.0, s_edit=0.25, s_non_edit=1.0)
    got = aram_cross_attention(Z, c_y, c_x, M, scales, params)

    q = params.W_Q(Z[0]).detach()
    text = _brute_force_attention(q, params.W_K_y(c_y[0]).detach(), params.W_V_y(c_y[0]).detach())
    image = _brute_force_attention(q, params.W_K_x(c_x[0]).detach(), params.W_V_x(c_x[0]).detach())
    m = M[0].unsqueeze(-1)
    expect = scales.s_y * m * text + scales.s_edit * m * image + scales.s_non_edit * (1 - m) * image
    assert (got[0] - expect).abs().max() < 1e-6


def test_decoupled_matches_brute_force_oracle():
    params, Z, c_y, c_x = _setup(seed=4)
    got = decoupled_cross_attention(Z, c_y, c_x, 0.7, params)
    q = params.W_Q(Z[0]).detach()
    text = _brute_force_attention(q, params.W_K_y(c_y[0]).detach(), params.W_V_y(c_y[0]).detach())
    image = _brute_force_attention(q, params.W_K_x(c_x[0]).detach(), params.W_V_x(c_x[0]).detach())
    assert (got[0] - (text + 0.7 * image)).abs().max() < 1e-6


@settings(deadline=None, max_examples=20)
@given(s_x=st.floats(0.0, 2.0), seed=st.integers(0, 1000))
def test_full_mask_reduces_to_decoupled(s_x, seed):
    """M == 1 with s_y = 1, s_edit = s_x recovers the decoupled form."""
    params, Z, c_y, c_x = _setup(seed=seed)
    M = torch.ones(1, Z.shape[1])
    scales = ScaleConfig(s_y=1.0, s_edit=s_x, s_non_edit=0.0)
    a = aram_cross_attention(Z, c_y, c_x, M, scales, params)
    b = decoupled_cross_attention(Z, c_y, c_x, s_x, params)
    assert (a - b).abs().max() < 1e-6


def test_zero_mask_keeps_only_image_attention():
    params, Z, c_y, c_x = _setup(seed=2)
    M = torch.zeros(1, Z.shape[1])
    a = aram_cross_attention(Z, c_y, c_x, M, ScaleConfig(2.0, 0.0, 1.0), params)
    b = decoupled_cross_attention(Z, c_y, c_x, 1.0, params) \
        - decoupled_cross_attention(Z, c_y, c_x, 0.0, params)
    assert (a - b).abs().max() < 1e-6


@settings(deadline=None, max_examples=15)
@given(c=st.floats(0.1, 3.0), seed=st.integers(0, 500))
def test_output_linear_in_scales(c, seed):
    """Scaling all three region weights by c scales the output by c."""
    params, Z, c_y, c_x = _setup(seed=seed)
    M = torch.rand(1, Z.shape[1])
    s1 = ScaleConfig(1.3, 0.4, 0.9)
    s2 = ScaleConfig(1.3 * c, 0.4 * c, 0.9 * c)
    a = aram_cross_attention(Z, c_y, c_x, M, s1, params)
    b = aram_cross_attention(Z, c_y, c_x, M, s2, params)
    assert (c * a - b).abs().max() < 1e-4


def test_mask_validation():
    params, Z, c_y, c_x = _setup()
    with pytest.raises(InvalidArgument):
        aram_cross_attention(Z, c_y, c_x, torch.full((1, 6), 1.5),
                             ScaleConfig(), params)
    with pytest.raises(InvalidArgument):
        aram_cross_attention(Z, c_y, c_x, torch.zeros(1, 5), ScaleConfig(), params)
    with pytest.raises(InvalidArgument):
        ScaleConfig(s_y=-1.0).validate()
    with pytest.raises(InvalidArgument):
        ScaleConfig(s_edit=float("nan")).validate()


def test_resize_mask_area_average_closed_form():
    """Checkerboard downsampled 2x averages to exactly 0.5 everywhere."""
    M = torch.zeros(8, 8)
    M[::2, ::2] = 1.0
    M[1::2, 1::2] = 1.0
    out = resize_mask(M, 4)
    assert out.shape == (4, 4)
    assert torch.allclose(out, torch.full((4, 4), 0.5))


def test_resize_mask_upsample_repeats():
    M = torch.tensor([[0.0, 1.0], [1.0, 0.0]])
    out = resize_mask(M, 4)
    assert float(out[0, 0]) == 0.0 and float(out[0, 2]) == 1.0
    assert float(out[2, 1]) == 1.0 and float(out[3, 3]) == 0.0


def test_resize_mask_divisibility():
    with pytest.raises(InvalidArgument):
        resize_mask(torch.zeros(6, 6), 4)


def test_mask_to_query_weights_flattens():
    M = torch.rand(32, 32)
    w = mask_to_query_weights(M, 16)
    assert w.shape == (256,)
    assert float(w.min()) >= 0.0 and float(w.max()) <= 1.0


def test_softmax_rows_convexity():
    """Attention outputs stay inside the convex hull of the value rows."""
    params, Z, c_y, c_x = _setup(seed=9)
    q = params.W_Q(Z[0]).detach()
    v = params.W_V_y(c_y[0]).detach()
    out = _brute_force_attention(q, params.W_K_y(c_y[0]).detach(), v)
    lo, hi = v.min(dim=0).values, v.max(dim=0).values
    assert (out >= lo - 1e-6).all() and (out <= hi + 1e-6).all()
