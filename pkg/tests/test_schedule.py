import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from onestep_edit.schedule import (
    InvalidArgument,
    ddim_step,
    forward_diffuse,
    make_schedule,
    sample_multistep,
    sampling_timesteps,
)


def test_variance_preserving():
    s = make_schedule(1000, "cosine")
    err = np.abs(s.alphas**2 + s.sigmas**2 - 1).max()
    assert err < 1e-6


def test_alpha_monotone_decreasing():
    s = make_schedule(1000, "cosine")
    assert (s.alphas[1:] <= s.alphas[:-1] + 1e-12).all()
    assert s.alphas[0] > 0.99
    assert s.sigmas[-1] > 0.99


def test_linear_beta_variant():
    s = make_schedule(200, "linear-beta")
    assert np.abs(s.alphas**2 + s.sigmas**2 - 1).max() < 1e-6


def test_forward_diffuse_elementwise_oracle():
    """Mixing rule checked against an explicit python loop."""
    s = make_schedule(50, "cosine")
    g = torch.Generator().manual_seed(0)
    z = torch.randn(3, 4, 4, generator=g)
    eps = torch.randn(3, 4, 4, generator=g)
    t = 17
    out = forward_diffuse(z, eps, t, s)
    a, sg = float(s.alpha(t)), float(s.sigma(t))
    for c in range(3):
        for i in range(4):
            for j in range(4):
                expect = a * float(z[c, i, j]) + sg * float(eps[c, i, j])
                assert abs(float(out[c, i, j]) - expect) < 1e-6


def test_ddim_round_trip():
    """If the noise prediction were exact, one reverse step recovers z."""
    s = make_schedule(1000, "cosine")
    g = torch.Generator().manual_seed(1)
    z = torch.randn(3, 8, 8, generator=g)
    eps = torch.randn(3, 8, 8, generator=g)
    for t in (1, 250, 500, 900):
        z_t = forward_diffuse(z, eps, t, s)
        z_back = ddim_step(z_t, t, eps, s)
        assert (z_back - z).abs().max() < 1e-5


def test_sampling_timesteps_shape():
    ts = sampling_timesteps(1000, 50)
    assert ts[0] == 1000 and ts[-1] == 1
    assert all(a > b for a, b in zip(ts, ts[1:]))
    assert sampling_timesteps(1000, 1) == [1000]


def test_bad_arguments():
    with pytest.raises(InvalidArgument):
        make_schedule(0, "cosine")
    with pytest.raises(InvalidArgument):
        make_schedule(100, "nope")
    s = make_schedule(10, "cosine")
    with pytest.raises(InvalidArgument):
        s.alpha(0)
    with pytest.raises(InvalidArgument):
        s.alpha(11)


class _OracleNoiseModel(torch.nn.Module):
    """Knows the true noise that generated z_t from a fixed clean latent."""

    def __init__(self, z0, schedule):
        super().__init__()
        self.z0, self.s = z0, schedule

    def forward(self, z_t, t, c_y):
        # invert the mixing rule exactly: eps = (z_t - alpha * z0) / sigma
        tt = int(t[0])
        return (z_t - self.s.alpha(tt) * self.z0) / self.s.sigma(tt)


def test_multistep_with_oracle_model_recovers_target():
    s = make_schedule(100, "cosine")
    g = torch.Generator().manual_seed(3)
    z0 = torch.rand(1, 3, 8, 8, generator=g) * 1.6 - 0.8
    model = _OracleNoiseModel(z0, s)
    out = sample_multistep(model, torch.zeros(1, 5, 64), steps=8, seed=0,
                           schedule=s, shape=(3, 8, 8))
    assert (out - z0).abs().max() < 1e-4


def test_multistep_deterministic():
    s = make_schedule(100, "cosine")
    model = _OracleNoiseModel(torch.zeros(1, 3, 8, 8), s)
    a = sample_multistep(model, torch.zeros(1, 5, 64), 5, 7, s, shape=(3, 8, 8))
    b = sample_multistep(model, torch.zeros(1, 5, 64), 5, 7, s, shape=(3, 8, 8))
    assert torch.equal(a, b)


@settings(deadline=None, max_examples=25)
@given(t=st.integers(min_value=1, max_value=100))
def test_schedule_is_variance_preserving_at_every_t(t):
    s = make_schedule(100, "cosine")
    a, sg = float(s.alpha(t)), float(s.sigma(t))
    assert abs(a * a + sg * sg - 1.0) < 1e-6
