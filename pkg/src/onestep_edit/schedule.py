"""Variance-preserving noise schedules, forward diffusion, and DDIM stepping.

Coefficient convention: a latent noised to level t is

    z_t = alpha_t * z + sigma_t * eps,      alpha_t^2 + sigma_t^2 = 1,

and the deterministic reverse update recovers the clean estimate

    z0_hat = (z_t - sigma_t * eps_pred) / alpha_t  (+ delta_t * fresh noise).

All deltas are zero in DDIM mode, which is the only mode this package uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class InvalidArgument(ValueError):
    """Raised when an operation's precondition is violated."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete diffusion coefficients, indexed by t in [1, T].

    ``alphas[t-1]``, ``sigmas[t-1]``, ``deltas[t-1]``, ``weights[t-1]`` hold the
    coefficients for timestep t.  ``weights`` is the per-timestep scaling used
    by the distillation-style regularizer (constant 1 by default).
    """

    T: int
    alphas: np.ndarray
    sigmas: np.ndarray
    deltas: np.ndarray
    weights: np.ndarray

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t - 1])

    def sigma(self, t: int) -> float:
        self._check_t(t)
        return float(self.sigmas[t - 1])

    def delta(self, t: int) -> float:
        self._check_t(t)
        return float(self.deltas[t - 1])

    def weight(self, t: int) -> float:
        self._check_t(t)
        return float(self.weights[t - 1])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise InvalidArgument(f"timestep {t} outside [1, {self.T}]")


SCHEDULE_KINDS = ("linear-beta", "cosine")


def make_schedule(T: int, kind: str = "cosine") -> NoiseSchedule:
    """Build a deterministic (all deltas zero) variance-preserving schedule."""
    if T < 2:
        raise InvalidArgument(f"schedule needs T >= 2, got {T}")
    if kind not in SCHEDULE_KINDS:
        raise InvalidArgument(f"unknown schedule kind {kind!r}, expected one of {SCHEDULE_KINDS}")

    ts = np.arange(1, T + 1, dtype=np.float64)
    if kind == "cosine":
        # Squared-cosine cumulative signal level, clipped away from 0/1 so
        # alpha never vanishes (DDIM division by alpha must stay finite).
        s = 0.008
        f = np.cos((ts / T + s) / (1 + s) * np.pi / 2) ** 2
        f0 = np.cos((s / (1 + s)) * np.pi / 2) ** 2
        abar = np.clip(f / f0, 1e-5, 1.0 - 1e-7)
    else:
        betas = np.linspace(1e-4, 0.02, T)
        abar = np.clip(np.cumprod(1.0 - betas), 1e-5, 1.0 - 1e-7)

    abar = np.minimum.accumulate(abar)  # enforce monotonicity after clipping
    alphas = np.sqrt(abar)
    sigmas = np.sqrt(1.0 - abar)
    return NoiseSchedule(
        T=T,
        alphas=alphas,
        sigmas=sigmas,
        deltas=np.zeros(T),
        weights=np.ones(T),
    )


def forward_diffuse(z: torch.Tensor, eps: torch.Tensor, t: int, s: NoiseSchedule) -> torch.Tensor:
    """Noise a clean latent to level t: alpha_t * z + sigma_t * eps."""
    if z.shape != eps.shape:
        raise InvalidArgument(f"shape mismatch: z {tuple(z.shape)} vs eps {tuple(eps.shape)}")
    return s.alpha(t) * z + s.sigma(t) * eps


def ddim_step(
    z_t: torch.Tensor,
    t: int,
    eps_pred: torch.Tensor,
    s: NoiseSchedule,
    fresh_noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """One reverse update: (z_t - sigma_t * eps_pred) / alpha_t + delta_t * fresh_noise.

    With delta_t = 0 (DDIM) the result is the clean-latent estimate implied by
    ``eps_pred`` and is deterministic.
    """
    if z_t.shape != eps_pred.shape:
        raise InvalidArgument("z_t and eps_pred shapes differ")
    alpha, delta = s.alpha(t), s.delta(t)
    out = (z_t - s.sigma(t) * eps_pred) / alpha
    if delta > 0:
        if fresh_noise is None:
            raise InvalidArgument("fresh_noise required when delta_t > 0")
        out = out + delta * fresh_noise
    return out


def sampling_timesteps(T: int, steps: int) -> list[int]:
    """Evenly spaced decreasing timestep subsequence ending at 1."""
    if steps > T:
        raise InvalidArgument(f"steps {steps} exceeds T {T}")
    ts = np.linspace(T, 1, steps).round().astype(int)
    return sorted(set(int(t) for t in ts), reverse=True)


@torch.no_grad()
def sample_multistep(
    teacher,
    c_y: torch.Tensor,
    steps: int,
    seed: int,
    schedule: NoiseSchedule,
    shape: tuple[int, int, int] = (3, 32, 32),
    clip_denoised: bool = True,
    guidance_scale: float = 1.0,
    c_null: torch.Tensor | None = None,
) -> torch.Tensor:
    """DDIM sampling along a shortened trajectory.

    Each step forms the clean estimate via :func:`ddim_step` and re-noises it
    to the next (lower) level with the same predicted noise; the final step
    leaves the clean estimate.  ``clip_denoised`` clamps each clean estimate
    to the latent range, which keeps early-step extrapolation errors from
    compounding.  With ``guidance_scale`` != 1 the noise prediction is the
    classifier-free combination eps_null + w * (eps_cond - eps_null), which
    needs ``c_null`` (the encoded null prompt).  Deterministic given
    (weights, c_y, seed, steps).
    """
    if guidance_scale != 1.0 and c_null is None:
        raise InvalidArgument("guided sampling requires c_null")
    gen = torch.Generator().manual_seed(seed)
    batch = c_y.shape[0] if c_y.dim() == 3 else 1
    tokens = c_y if c_y.dim() == 3 else c_y.unsqueeze(0)
    null_tokens = None
    if guidance_scale != 1.0:
        null_tokens = c_null if c_null.dim() == 3 else c_null.unsqueeze(0)
        null_tokens = null_tokens.expand(batch, -1, -1)
    z = torch.randn((batch, *shape), generator=gen)
    ts = sampling_timesteps(schedule.T, steps)
    for i, t in enumerate(ts):
        tt = torch.full((batch,), t, dtype=torch.long)
        eps_pred = teacher(z, tt, tokens)
        if guidance_scale != 1.0:
            eps_null = teacher(z, tt, null_tokens)
            eps_pred = eps_null + guidance_scale * (eps_pred - eps_null)
        z0 = ddim_step(z, t, eps_pred, schedule)
        if clip_denoised:
            z0 = z0.clamp(-1.0, 1.0)
        if i + 1 < len(ts):
            z = forward_diffuse(z0, eps_pred, ts[i + 1], schedule)
        else:
            z = z0
    out = z.clamp(-1.0, 1.0)
    return out if c_y.dim() == 3 else out[0]
