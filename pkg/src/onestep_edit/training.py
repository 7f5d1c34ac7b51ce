"""Training drivers: teacher, one-step distillation, and two-stage inversion.

All drivers are single-threaded, deterministic under a fixed seed, and write
checkpoints in the shared format together with newline-delimited JSON logs.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np
import torch

from onestep_edit.checkpoint import save_module
from onestep_edit.config import StageConfig
from onestep_edit.datagen import ToyScene, sample_prompt
from onestep_edit.losses import (
    InvalidState,
    noise_stats,
    stage1_loss,
    stage2_loss,
    uniform_t_sampler,
)
from onestep_edit.networks import CondUNet, InversionNet, IPAugmentedGenerator, OneStepGenerator
from onestep_edit.prompts import PromptSpec, encode_prompts, make_vocab_weights
from onestep_edit.schedule import InvalidArgument, NoiseSchedule, sample_multistep
from onestep_edit.perceptual import FeaturePyramid


class EMA:
    """Exponential moving average of a module's parameters, updated per iteration."""

    def __init__(self, module: torch.nn.Module, decay: float):
        if not 0 <= decay < 1:
            raise InvalidArgument("EMA decay must lie in [0, 1)")
        self.decay = decay
        self.shadow = {k: v.detach().clone() for k, v in module.state_dict().items()}

    @torch.no_grad()
    def update(self, module: torch.nn.Module) -> None:
        for k, v in module.state_dict().items():
            if v.dtype.is_floating_point:
                self.shadow[k].mul_(self.decay).add_(v, alpha=1 - self.decay)
            else:
                self.shadow[k] = v.detach().clone()

    def copy_to(self, module: torch.nn.Module) -> None:
        module.load_state_dict(self.shadow)


def _scene_batch(scenes: list[ToyScene], rng: np.random.Generator, batch: int):
    idx = rng.integers(len(scenes), size=batch)
    images = torch.stack([scenes[i].image for i in idx])
    prompts = [scenes[i].prompt for i in idx]
    return images, prompts


def train_teacher(
    scenes: list[ToyScene],
    config: StageConfig,
    schedule: NoiseSchedule,
    vocab: torch.Tensor | None = None,
) -> CondUNet:
    """Epsilon-prediction training of the multi-step teacher.

    Holds out ~10% of the scenes and requires the held-out loss to decrease
    versus initialization.
    """
    if not scenes:
        raise InvalidArgument("train_teacher needs a non-empty dataset")
    config.validate()
    vocab = vocab if vocab is not None else make_vocab_weights()
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    n_hold = max(1, len(scenes) // 10) if len(scenes) > 1 else 0
    train, held = (scenes[n_hold:], scenes[:n_hold]) if n_hold else (scenes, scenes)

    teacher = CondUNet()
    opt = torch.optim.Adam(teacher.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)

    def held_loss() -> float:
        gen = torch.Generator().manual_seed(1234)
        with torch.no_grad():
            images = torch.stack([s.image for s in held])
            c_y = encode_prompts([s.prompt for s in held], vocab)
            ts = torch.randint(1, schedule.T + 1, (len(held),), generator=gen)
            eps = torch.randn(images.shape, generator=gen)
            a = torch.tensor([schedule.alpha(int(t)) for t in ts]).float().view(-1, 1, 1, 1)
            sg = torch.tensor([schedule.sigma(int(t)) for t in ts]).float().view(-1, 1, 1, 1)
            pred = teacher(a * images + sg * eps, ts, c_y)
            return float(((pred - eps) ** 2).mean())

    initial = held_loss()
    null = PromptSpec(empty=True)
    for _ in range(config.iterations):
        images, prompts = _scene_batch(train, rng, config.batch_size)
        if config.cond_dropout > 0:
            # null-prompt dropout so the teacher also models the
            # unconditional score, enabling guided sampling
            prompts = [null if rng.random() < config.cond_dropout else p for p in prompts]
        c_y = encode_prompts(prompts, vocab)
        ts = torch.from_numpy(rng.integers(1, schedule.T + 1, size=config.batch_size))
        eps = torch.randn_like(images)
        a = torch.tensor([schedule.alpha(int(t)) for t in ts]).float().view(-1, 1, 1, 1)
        sg = torch.tensor([schedule.sigma(int(t)) for t in ts]).float().view(-1, 1, 1, 1)
        pred = teacher(a * images + sg * eps, ts, c_y)
        loss = ((pred - eps) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()

    final = held_loss()
    teacher.trained = final < initial
    teacher.held_loss = final
    teacher.eval()
    return teacher


@torch.no_grad()
def make_distill_pairs(
    teacher: CondUNet,
    schedule: NoiseSchedule,
    n_pairs: int,
    steps: int,
    seed: int,
    vocab: torch.Tensor,
    chunk: int = 32,
    guidance_scale: float = 1.0,
) -> tuple[torch.Tensor, list[PromptSpec], torch.Tensor]:
    """(noise, prompt, multi-step endpoint) triples for endpoint regression."""
    rng = np.random.default_rng(seed)
    prompts = [sample_prompt(rng) for _ in range(n_pairs)]
    gen = torch.Generator().manual_seed(seed)
    eps = torch.randn(n_pairs, 3, 32, 32, generator=gen)
    endpoints = []
    for i in range(0, n_pairs, chunk):
        c_y = encode_prompts(prompts[i : i + chunk], vocab)
        # reuse the fixed eps block as the trajectory start
        z = _multistep_from(teacher, eps[i : i + chunk], c_y, schedule, steps,
                            guidance_scale=guidance_scale, vocab=vocab)
        endpoints.append(z)
    return eps, prompts, torch.cat(endpoints)


@torch.no_grad()
def _multistep_from(
    teacher,
    z0: torch.Tensor,
    c_y: torch.Tensor,
    schedule: NoiseSchedule,
    steps: int,
    guidance_scale: float = 1.0,
    vocab: torch.Tensor | None = None,
) -> torch.Tensor:
    from onestep_edit.schedule import ddim_step, forward_diffuse, sampling_timesteps

    c_null = None
    if guidance_scale != 1.0:
        vocab = vocab if vocab is not None else make_vocab_weights()
        null = encode_prompts([PromptSpec(empty=True)], vocab)
        c_null = null.expand(z0.shape[0], -1, -1)
    z = z0.clone()
    ts = sampling_timesteps(schedule.T, steps)
    for i, t in enumerate(ts):
        tt = torch.full((z.shape[0],), t, dtype=torch.long)
        eps_pred = teacher(z, tt, c_y)
        if guidance_scale != 1.0:
            eps_null = teacher(z, tt, c_null)
            eps_pred = eps_null + guidance_scale * (eps_pred - eps_null)
        # clamp the clean estimate every step so early extrapolation errors
        # cannot compound into saturated, information-free endpoints
        z_clean = ddim_step(z, t, eps_pred, schedule).clamp(-1, 1)
        z = forward_diffuse(z_clean, eps_pred, ts[i + 1], schedule) if i + 1 < len(ts) else z_clean
    return z.clamp(-1, 1)


def distill_generator(
    teacher: CondUNet,
    config: StageConfig,
    schedule: NoiseSchedule,
    vocab: torch.Tensor | None = None,
    n_pairs: int = 768,
    steps: int = 50,
) -> OneStepGenerator:
    """Regress a one-step generator onto multi-step sampling endpoints."""
    if not getattr(teacher, "trained", True):
        raise InvalidState("cannot distill from an untrained teacher")
    config.validate()
    vocab = vocab if vocab is not None else make_vocab_weights()
    torch.manual_seed(config.seed)
    eps, prompts, endpoints = make_distill_pairs(
        teacher, schedule, n_pairs, steps, config.seed, vocab,
        guidance_scale=config.guidance_scale,
    )
    g = OneStepGenerator(terminal_t=schedule.T)
    opt = torch.optim.Adam(g.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.iterations):
        idx = rng.integers(n_pairs, size=config.batch_size)
        c_y = encode_prompts([prompts[i] for i in idx], vocab)
        pred = g(eps[idx], c_y)
        loss = ((pred - endpoints[idx]) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    g.trained = True
    g.eval()
    return g


def _write_logs(out_dir: Path | None, records: list[dict], curve_name: str = "loss_curve.png") -> None:
    if out_dir is None or not records:
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "train_log.ndjson", "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        iters = [r["iter"] for r in records]
        for key in records[0]:
            if key in ("iter",) or not isinstance(records[0][key], (int, float)):
                continue
            ax.plot(iters, [r.get(key, float("nan")) for r in records], label=key)
        ax.set_xlabel("iteration")
        ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_dir / curve_name)
        plt.close(fig)
    except Exception:
        pass


def train_inversion(
    stage: int,
    g_ip: IPAugmentedGenerator,
    teacher: CondUNet | None,
    config: StageConfig,
    schedule: NoiseSchedule,
    scenes: list[ToyScene] | None = None,
    inv: InversionNet | None = None,
    vocab: torch.Tensor | None = None,
    generator=None,
    out_dir: str | Path | None = None,
    allow_no_stage1: bool = False,
    feature_net: FeaturePyramid | None = None,
    s_x: float = 1.0,
    log_every: int = 25,
    checkpoint_every: int | None = None,
) -> dict:
    """Run one training stage of the inversion framework.

    Stage 1 draws synthetic (noise, sample) pairs on the fly from the base
    generator and trains the inversion net together with the IP branch.
    Stage 2 trains only the inversion net on real-like scenes, with the IP
    branch frozen; it requires a stage-1-initialized ``inv`` unless
    ``allow_no_stage1`` (the ablation escape hatch) is set.

    Returns {"inv", "ema", "log"}.
    """
    if stage not in (1, 2):
        raise InvalidArgument(f"stage must be 1 or 2, got {stage}")
    config.validate()
    vocab = vocab if vocab is not None else make_vocab_weights()
    gen_model = generator if generator is not None else g_ip.base
    out = Path(out_dir) if out_dir is not None else None

    if stage == 2 and inv is None and not allow_no_stage1:
        raise InvalidState(
            "stage 2 requires a stage-1 inversion checkpoint (pass allow_no_stage1 for the ablation)"
        )
    if inv is None:
        if isinstance(gen_model, OneStepGenerator):
            inv = InversionNet.init_from_generator(gen_model)
        else:
            inv = InversionNet(terminal_t=schedule.T)

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    if stage == 1:
        for p in g_ip.base.parameters():
            p.requires_grad_(False)
        ip_params = g_ip.ip_parameters()
        for p in ip_params:
            p.requires_grad_(True)
        params = list(inv.parameters()) + ip_params
    else:
        for p in g_ip.parameters():
            p.requires_grad_(False)
        params = list(inv.parameters())
        frozen_before = {k: v.detach().clone() for k, v in g_ip.state_dict().items()}

    opt = torch.optim.Adam(params, lr=config.learning_rate, weight_decay=config.weight_decay)
    ema = EMA(inv, config.ema_decay)
    t_sampler = uniform_t_sampler(schedule, config.t_lo, config.t_hi, seed=config.seed + 1)
    records: list[dict] = []

    for it in range(config.iterations):
        if stage == 1:
            prompts = [sample_prompt(rng) for _ in range(config.batch_size)]
            c_y = encode_prompts(prompts, vocab)
            eps = torch.randn(config.batch_size, 3, 32, 32)
            with torch.no_grad():
                z = gen_model(eps, c_y)
            # Perturb only the image-encoder input: real photos carry sensor
            # noise the generator's samples lack, and the encoder is frozen
            # after this stage, so it must learn to tolerate it here.
            z_enc = z + config.cond_noise * torch.randn_like(z) if config.cond_noise > 0 else z
            c_x = g_ip.encode_image(z_enc)
            parts = stage1_loss(inv, g_ip, (eps, z, c_y, c_x), config.lambda_stage1, s_x=s_x)
        else:
            if not scenes:
                raise InvalidArgument("stage 2 needs real-like scenes")
            x, prompts = _scene_batch(scenes, rng, config.batch_size)
            c_y = encode_prompts(prompts, vocab)
            with torch.no_grad():
                c_x = g_ip.encode_image(x)
            parts = stage2_loss(
                inv, g_ip, teacher, (x, c_y, c_x),
                config.lambda_stage2, schedule, t_sampler, feature_net, s_x=s_x,
            )
        opt.zero_grad()
        parts["total"].backward()
        opt.step()
        ema.update(inv)

        if it % log_every == 0 or it == config.iterations - 1:
            rec = {"iter": it, "total": float(parts["total"].detach())}
            for k, v in parts.items():
                if isinstance(v, float):
                    rec[k] = v
            if parts["eps_hat"].shape[0] >= 2:
                rec.update({f"noise_{k}": v for k, v in noise_stats(parts["eps_hat"]).items()})
            records.append(rec)
        if out is not None and checkpoint_every and it and it % checkpoint_every == 0:
            out.mkdir(parents=True, exist_ok=True)
            save_module(out / f"inversion_iter{it:06d}.ckpt", inv, "inversion", seed=config.seed)

    if stage == 2:
        after = g_ip.state_dict()
        drift = max(
            (float((after[k] - v).abs().max()) for k, v in frozen_before.items() if v.numel()),
            default=0.0,
        )
        if drift != 0.0:
            raise InvalidState(f"stage-2 freeze violated: IP branch moved by {drift}")

    ema_inv = copy.deepcopy(inv)
    ema.copy_to(ema_inv)
    inv.eval()
    ema_inv.eval()
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_module(out / "inversion_final.ckpt", inv, "inversion", seed=config.seed)
        save_module(out / "inversion_final_ema.ckpt", ema_inv, "inversion", seed=config.seed)
        _write_logs(out, records)
    return {"inv": inv, "ema": ema_inv, "log": records}
