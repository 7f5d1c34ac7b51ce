"""Command-line entry points for training, inversion, editing and serving.

Exit codes: 0 success, 2 configuration/usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from onestep_edit.attention import ScaleConfig
from onestep_edit.checkpoint import CheckpointError, load_into_module, save_module
from onestep_edit.config import PRESETS, RunConfig, load_config
from onestep_edit.datagen import from_uint8, generate_dataset, save_dataset, to_uint8
from onestep_edit.editing import EditMask, EditRequest, ModelBundle, edit_image, invert, reconstruct
from onestep_edit.losses import InvalidState, noise_stats
from onestep_edit.networks import (
    CondUNet,
    ImageEncoder,
    InversionNet,
    IPAugmentedGenerator,
    OneStepGenerator,
)
from onestep_edit.prompts import PromptSpec, make_vocab_weights
from onestep_edit.schedule import InvalidArgument, make_schedule


class _Lock:
    """Crude per-directory lock so two training runs don't share an --out."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise InvalidState(f"output dir is locked by another run ({self.path})")
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return PRESETS[args.preset]()


def _png_to_tensor(path: str) -> torch.Tensor:
    from PIL import Image

    img = Image.open(path).convert("RGB")
    if img.size != (32, 32):
        img = img.resize((32, 32), Image.BILINEAR)
    return from_uint8(np.asarray(img, dtype=np.uint8))


def _tensor_to_png(x: torch.Tensor, path: Path) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(x)).save(path)


def _mask_to_png(m: torch.Tensor, path: Path) -> None:
    from PIL import Image

    Image.fromarray((m.clamp(0, 1) * 255).round().byte().numpy(), mode="L").save(path)


def _load_bundle(ckpt_dir: str) -> ModelBundle:
    d = Path(ckpt_dir)
    cfg = PRESETS["desk"]()
    schedule = make_schedule(cfg.schedule_T, cfg.schedule_kind)
    base = OneStepGenerator(terminal_t=schedule.T)
    g_ip = IPAugmentedGenerator(base, ImageEncoder())
    inv = InversionNet(terminal_t=schedule.T)
    load_into_module(d / "generator_ip.ckpt", g_ip, "ip_generator")
    load_into_module(d / "inversion.ckpt", inv, "inversion")
    base.trained = True
    bundle = ModelBundle(inv=inv, g_ip=g_ip, schedule=schedule, vocab=make_vocab_weights())
    ModelBundle.check(bundle)
    return bundle


def export_bundle(models: ModelBundle, ckpt_dir: str | Path) -> None:
    """Write the two inference checkpoints the other commands load."""
    d = Path(ckpt_dir)
    d.mkdir(parents=True, exist_ok=True)
    save_module(d / "generator_ip.ckpt", models.g_ip, "ip_generator")
    save_module(d / "inversion.ckpt", models.inv, "inversion")


def _cmd_gen_data(args) -> int:
    scenes = generate_dataset(args.n, args.split, seed=args.seed)
    save_dataset(scenes, args.out)
    print(f"wrote {len(scenes)} {args.split} scenes to {args.out}")
    return 0


def _cmd_train_teacher(args) -> int:
    from onestep_edit.training import train_teacher

    cfg = _load_run_config(args)
    schedule = make_schedule(cfg.schedule_T, cfg.schedule_kind)
    vocab = make_vocab_weights()
    out = Path(args.out)
    with _Lock(out):
        scenes = generate_dataset(cfg.dataset.n_synthetic, "synthetic-style", seed=cfg.dataset.seed)
        scenes += generate_dataset(cfg.dataset.n_real, "real-like", seed=cfg.dataset.seed)
        model = train_teacher(scenes, cfg.teacher, schedule, vocab)
        save_module(out / "teacher.ckpt", model, "teacher", seed=cfg.teacher.seed)
    print(f"teacher held-out loss {model.held_loss:.4f}; saved to {out}")
    return 0


def _cmd_distill(args) -> int:
    from onestep_edit.training import distill_generator

    cfg = _load_run_config(args)
    schedule = make_schedule(cfg.schedule_T, cfg.schedule_kind)
    teacher = CondUNet()
    load_into_module(args.teacher, teacher, "teacher")
    teacher.trained = True
    out = Path(args.out)
    with _Lock(out):
        g = distill_generator(teacher, cfg.distill, schedule, make_vocab_weights())
        save_module(out / "generator.ckpt", g, "generator", seed=cfg.distill.seed)
    print(f"distilled generator saved to {out}")
    return 0


def _cmd_train_inversion(args) -> int:
    from onestep_edit.training import train_inversion

    cfg = _load_run_config(args)
    schedule = make_schedule(cfg.schedule_T, cfg.schedule_kind)
    vocab = make_vocab_weights()
    out = Path(args.out)

    base = OneStepGenerator(terminal_t=schedule.T)
    load_into_module(args.generator, base, "generator")
    base.trained = True
    torch.manual_seed(cfg.seed + 77)
    g_ip = IPAugmentedGenerator(base, ImageEncoder())

    inv = None
    if args.stage == 2:
        if args.init is None and not args.allow_ablation:
            raise InvalidArgument(
                "stage 2 needs --init pointing at a stage-1 checkpoint "
                "(or --allow-ablation to train from scratch)"
            )
        if args.ip_branch is None and not args.allow_ablation:
            raise InvalidArgument("stage 2 needs --ip-branch from the stage-1 run")
        if args.ip_branch:
            load_into_module(args.ip_branch, g_ip, "ip_generator")
        if args.init:
            inv = InversionNet(terminal_t=schedule.T)
            load_into_module(args.init, inv, "inversion")

    teacher = None
    if args.teacher:
        teacher = CondUNet()
        load_into_module(args.teacher, teacher, "teacher")
        teacher.trained = True

    stage_cfg = cfg.stage1 if args.stage == 1 else cfg.stage2
    with _Lock(out):
        scenes = None
        if args.stage == 2:
            scenes = generate_dataset(cfg.dataset.n_real, "real-like", seed=cfg.dataset.seed)
        result = train_inversion(
            args.stage, g_ip, teacher, stage_cfg, schedule,
            scenes=scenes, inv=inv, vocab=vocab, out_dir=out,
            allow_no_stage1=args.allow_ablation,
        )
        if args.stage == 1:
            save_module(out / "generator_ip.ckpt", g_ip, "ip_generator")
    print(f"stage-{args.stage} run finished; artifacts in {out}")
    return 0


def _cmd_invert(args) -> int:
    from onestep_edit.prompts import encode_prompt

    models = _load_bundle(args.ckpt_dir)
    image = _png_to_tensor(args.image)
    prompt = PromptSpec.parse(args.source_prompt)
    with torch.no_grad():
        eps = invert(models.inv, image, encode_prompt(prompt, models.vocab))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    torch.save(eps, out / "inverted_noise.pt")
    stats = noise_stats(eps.unsqueeze(0).repeat(2, 1, 1, 1))
    (out / "noise_stats.json").write_text(json.dumps(stats, indent=2))
    print(json.dumps(stats))
    return 0


def _cmd_reconstruct(args) -> int:
    models = _load_bundle(args.ckpt_dir)
    image = _png_to_tensor(args.image)
    prompt = PromptSpec.parse(args.source_prompt)
    rec = reconstruct(models, image, prompt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _tensor_to_png(rec.clamp(-1, 1), out / "reconstructed.png")
    mse = float(((rec - image) ** 2).mean())
    print(f"reconstruction MSE {mse:.6f} -> {out / 'reconstructed.png'}")
    return 0


def _cmd_edit(args) -> int:
    models = _load_bundle(args.ckpt_dir)
    image = _png_to_tensor(args.image)
    scales = ScaleConfig(s_y=args.s_y, s_edit=args.s_edit, s_non_edit=args.s_non_edit)
    user_mask = None
    if args.mask:
        from PIL import Image

        m = Image.open(args.mask).convert("L").resize((32, 32), Image.NEAREST)
        weights = torch.from_numpy(np.asarray(m, dtype=np.float32) / 255.0)
        user_mask = EditMask(weights, provenance="user-supplied")
    req = EditRequest(
        source_image=image,
        source_prompt=PromptSpec.parse(args.source_prompt),
        edit_prompt=PromptSpec.parse(args.edit_prompt),
        scales=scales,
        user_mask=user_mask,
    )
    result = edit_image(models, req)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _tensor_to_png(result["edited"], out / "edited.png")
    _mask_to_png(result["mask"].weights, out / "mask.png")
    (out / "timings.json").write_text(json.dumps(result["timings_ms"], indent=2))
    print(json.dumps(result["timings_ms"]))
    return 0


def _cmd_eval(args) -> int:
    from onestep_edit.artifacts import Workspace
    from onestep_edit.evalharness import evaluate_editing, evaluate_reconstruction

    cfg = _load_run_config(args)
    ws = Workspace(args.workspace, cfg)
    models = ws.bundle(args.variant)
    scenes = ws.scenes("real-like", "eval")[: args.n]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rec = evaluate_reconstruction(models, scenes)
    edits = evaluate_editing(models, ws.classifier(), scenes)
    report = {"reconstruction": rec, "editing": edits["aggregate"]}
    (out / "eval.json").write_text(json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))
    return 0


def _cmd_ablate(args) -> int:
    from onestep_edit.artifacts import Workspace
    from onestep_edit.evalharness import run_ablation_suite

    cfg = _load_run_config(args)
    ws = Workspace(args.workspace, cfg)
    rows = run_ablation_suite(args.suite, ws, args.out, n_eval=args.n)
    print(json.dumps(rows, indent=2))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from onestep_edit.service import create_app

    app = create_app(ckpt_dir=args.ckpt_dir)
    port = args.port or int(os.environ.get("ONESTEP_PORT", "8000"))
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return 0


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--config", help="JSON config file (overrides --preset)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onestep-edit",
                                     description="One-step inversion and instant image editing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a toy dataset to disk")
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--split", choices=["synthetic-style", "real-like"], default="real-like")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-teacher", help="train the multi-step denoiser")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_teacher)

    p = sub.add_parser("distill", help="distill the one-step generator from a teacher")
    _add_config_args(p)
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_distill)

    p = sub.add_parser("train-inversion", help="run stage 1 or stage 2 of inversion training")
    _add_config_args(p)
    p.add_argument("--stage", type=int, choices=[1, 2], required=True)
    p.add_argument("--generator", required=True, help="distilled generator checkpoint")
    p.add_argument("--teacher", help="teacher checkpoint (stage-2 regularizer)")
    p.add_argument("--init", help="stage-1 inversion checkpoint (stage 2)")
    p.add_argument("--ip-branch", help="stage-1 IP-generator checkpoint (stage 2)")
    p.add_argument("--allow-ablation", action="store_true",
                   help="permit stage 2 without a stage-1 checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_inversion)

    p = sub.add_parser("invert", help="one-step image-to-noise inversion")
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--source-prompt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_invert)

    p = sub.add_parser("reconstruct", help="invert then regenerate an image")
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--source-prompt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("edit", help="mask-aware text-guided edit")
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--source-prompt", required=True)
    p.add_argument("--edit-prompt", required=True)
    p.add_argument("--s-y", type=float, default=2.0)
    p.add_argument("--s-edit", type=float, default=0.0)
    p.add_argument("--s-non-edit", type=float, default=1.0)
    p.add_argument("--mask", help="optional user mask PNG (skips self-guided extraction)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_edit)

    p = sub.add_parser("eval", help="reconstruction + editing metrics on the eval split")
    _add_config_args(p)
    p.add_argument("--workspace", required=True, help="artifact cache root")
    p.add_argument("--variant", default="full")
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run one ablation suite")
    _add_config_args(p)
    p.add_argument("--suite", choices=["framework", "losses", "generators", "scale-sweep"],
                   required=True)
    p.add_argument("--workspace", required=True)
    p.add_argument("--n", type=int, default=24)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("serve", help="start the HTTP inference service")
    p.add_argument("--ckpt-dir", default=os.environ.get("ONESTEP_CKPT_DIR"))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except (InvalidArgument, FileNotFoundError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except InvalidState as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
