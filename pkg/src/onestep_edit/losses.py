"""Training objectives for the two-stage inversion recipe.

Stage 1 (synthetic pairs):   L = ||z - z_hat||^2 + lambda * ||eps - eps_hat||^2
Stage 2 (real-like images):  L = perceptual(x, x_hat) + lambda * L_regu

L_regu is the distillation-style regularizer: noise the clean latent with the
*inverted* noise, ask the multi-step teacher what noise it sees, and pull the
inverted noise toward that prediction.  Its gradient w.r.t. the inversion
parameters is

    w(t) * (eps_hat - teacher(z_t, t, c_y)) * d eps_hat / d theta,

with the teacher treated as a constant (no gradient flows into it, and the
teacher-Jacobian path through z_t is deliberately dropped).  The surrogate
scalar below reproduces exactly this gradient under reverse-mode autodiff.
"""

from __future__ import annotations

from typing import Callable, Sequence

import torch

from onestep_edit.schedule import InvalidArgument, NoiseSchedule


class InvalidState(RuntimeError):
    """Raised when a required model/checkpoint precondition is unmet."""


def uniform_t_sampler(
    schedule: NoiseSchedule,
    lo_frac: float = 0.02,
    hi_frac: float = 0.98,
    seed: int = 0,
) -> Callable[[int], list[int]]:
    """Uniform timestep draws over [lo_frac*T, hi_frac*T], endpoint-safe."""
    lo = max(1, int(round(lo_frac * schedule.T)))
    hi = min(schedule.T, int(round(hi_frac * schedule.T)))
    gen = torch.Generator().manual_seed(seed)

    def sample(batch: int) -> list[int]:
        return torch.randint(lo, hi + 1, (batch,), generator=gen).tolist()

    return sample


def stage1_loss(
    inv,
    g_ip,
    batch: tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor],
    lambda_stage1: float = 1.0,
    s_x: float = 1.0,
) -> dict:
    """Reconstruction + noise-regression loss on synthetic (eps, z) pairs.

    ``batch`` is (eps, z, c_y, c_x); returns the differentiable total plus
    detached components.  ``s_x=0`` disables the image branch (the no-IP
    ablation trains through the bare generator).
    """
    if lambda_stage1 < 0:
        raise InvalidArgument(f"lambda_stage1 must be >= 0, got {lambda_stage1}")
    eps, z, c_y, c_x = batch
    eps_hat = inv(z, c_y)
    z_hat = g_ip(eps_hat, c_y, c_x, mode="global", s_x=s_x)
    l_rec = ((z - z_hat) ** 2).mean()
    l_regr = ((eps - eps_hat) ** 2).mean()
    total = l_rec + lambda_stage1 * l_regr
    return {
        "total": total,
        "rec": float(l_rec.detach()),
        "regr": float(l_regr.detach()),
        "eps_hat": eps_hat.detach(),
    }


def _per_sample_coeffs(schedule: NoiseSchedule, ts: Sequence[int]) -> tuple[torch.Tensor, ...]:
    a = torch.tensor([schedule.alpha(t) for t in ts]).float().view(-1, 1, 1, 1)
    s = torch.tensor([schedule.sigma(t) for t in ts]).float().view(-1, 1, 1, 1)
    w = torch.tensor([schedule.weight(t) for t in ts]).float().view(-1, 1, 1, 1)
    return a, s, w


def _check_teacher(teacher) -> None:
    if not getattr(teacher, "trained", True):
        raise InvalidState("teacher model is flagged untrained")


def regu_surrogate(
    eps_hat: torch.Tensor,
    teacher,
    z: torch.Tensor,
    c_y: torch.Tensor,
    schedule: NoiseSchedule,
    ts: Sequence[int],
) -> tuple[torch.Tensor, float]:
    """Scalar whose autograd gradient equals the stated regularizer gradient.

    Returns (surrogate, residual_mse) where residual_mse is the detached
    monitored quantity w(t) * ||eps_hat - teacher prediction||^2.
    """
    a, s, w = _per_sample_coeffs(schedule, ts)
    with torch.no_grad():
        z_t = a * z + s * eps_hat
        t_tensor = torch.tensor(list(ts), dtype=torch.long)
        eps_teacher = teacher(z_t, t_tensor, c_y)
        resid = eps_hat - eps_teacher
    surrogate = (w * resid * eps_hat).mean()
    value = float((w * resid**2).mean())
    return surrogate, value


def regularization_loss(
    inv,
    teacher,
    z: torch.Tensor,
    c_y: torch.Tensor,
    schedule: NoiseSchedule,
    t_sampler: Callable[[int], list[int]],
) -> dict:
    """Standalone regularizer evaluation: forward the inversion net and build
    the gradient surrogate."""
    _check_teacher(teacher)
    eps_hat = inv(z, c_y)
    ts = t_sampler(z.shape[0])
    surrogate, value = regu_surrogate(eps_hat, teacher, z, c_y, schedule, ts)
    return {"total": surrogate, "regu": value, "eps_hat": eps_hat.detach(), "ts": list(ts)}


def stage2_loss(
    inv,
    g_ip,
    teacher,
    batch: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    lambda_stage2: float = 1.0,
    schedule: NoiseSchedule | None = None,
    t_sampler: Callable[[int], list[int]] | None = None,
    feature_net=None,
    s_x: float = 1.0,
) -> dict:
    """Perceptual + regularization loss on real-like images; trains only the
    inversion parameters (the caller owns the freeze)."""
    from onestep_edit.perceptual import perceptual_distance

    if lambda_stage2 < 0:
        raise InvalidArgument(f"lambda_stage2 must be >= 0, got {lambda_stage2}")
    x, c_y, c_x = batch
    eps_hat = inv(x, c_y)
    x_hat = g_ip(eps_hat, c_y, c_x, mode="global", s_x=s_x)
    l_perc = perceptual_distance(x, x_hat, feature_net).mean()
    total = l_perc
    regu_value = 0.0
    if lambda_stage2 > 0:
        _check_teacher(teacher)
        ts = t_sampler(x.shape[0])
        surrogate, regu_value = regu_surrogate(eps_hat, teacher, x, c_y, schedule, ts)
        total = total + lambda_stage2 * surrogate
    return {
        "total": total,
        "perceptual": float(l_perc.detach()),
        "regu": regu_value,
        "eps_hat": eps_hat.detach(),
    }


def noise_stats(eps_hat: torch.Tensor) -> dict:
    """Summary statistics of a batch of inverted noises.

    Returns mean, std, excess kurtosis, and lag-1 spatial autocorrelation
    (average of horizontal and vertical neighbor correlations).  A batch with
    (near-)zero variance is reported with ``degenerate=True``.
    """
    if eps_hat.dim() != 4 or eps_hat.shape[0] < 2:
        raise InvalidArgument("noise_stats needs a [B>=2, C, H, W] batch")
    x = eps_hat.double()
    mean = x.mean()
    std = x.std(unbiased=False)
    if float(std) < 1e-12:
        return {
            "mean": float(mean),
            "std": float(std),
            "excess_kurtosis": float("nan"),
            "autocorr_lag1": float("nan"),
            "degenerate": True,
        }
    zc = (x - mean) / std
    kurt = float((zc**4).mean()) - 3.0

    def _corr(a: torch.Tensor, b: torch.Tensor) -> float:
        a = a - a.mean()
        b = b - b.mean()
        return float((a * b).mean() / (a.std(unbiased=False) * b.std(unbiased=False) + 1e-12))

    horiz = _corr(x[..., :, :-1], x[..., :, 1:])
    vert = _corr(x[..., :-1, :], x[..., 1:, :])
    return {
        "mean": float(mean),
        "std": float(std),
        "excess_kurtosis": kurt,
        "autocorr_lag1": (horiz + vert) / 2,
        "degenerate": False,
    }
