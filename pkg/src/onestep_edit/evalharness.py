"""Evaluation harness: reconstruction/editing metrics, ablations, scale sweeps.

Desk-scale analogues of a background-preservation + semantic-alignment
editing benchmark: PSNR/MSE outside the ground-truth mask, classifier-based
whole-image and edited-region alignment scores, self-guided-mask IoU, and
wall-clock timings.  Reports are emitted as CSV + JSON, plots as PNG.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from onestep_edit.attention import ScaleConfig
from onestep_edit.classifier import AttributeClassifier, predicted_attributes, semantic_score
from onestep_edit.datagen import ToyScene
from onestep_edit.editing import EditRequest, ModelBundle, edit_image, reconstruct
from onestep_edit.metrics import background_metrics, mask_iou, to_unit
from onestep_edit.perceptual import perceptual_distance
from onestep_edit.prompts import COLORS
from onestep_edit.schedule import InvalidArgument


def evaluate_reconstruction(models: ModelBundle, scenes: list[ToyScene]) -> dict:
    """Mean PSNR (full image) and perceptual distance of invert->regenerate."""
    psnrs, percs = [], []
    for scene in scenes:
        rec = reconstruct(models, scene.image, scene.prompt)
        zeros = torch.zeros(32, 32)
        m = background_metrics(to_unit(scene.image), to_unit(rec), zeros)
        psnrs.append(m["psnr"])
        percs.append(float(perceptual_distance(scene.image, rec.clamp(-1, 1))))
    return {
        "psnr": float(np.mean(psnrs)),
        "perceptual": float(np.mean(percs)),
        "n": len(scenes),
    }


def single_attribute_edits(scenes: list[ToyScene], seed: int = 0) -> list[tuple[ToyScene, object]]:
    """Pair each scene with a subject-color edit prompt (one attribute changes)."""
    rng = np.random.default_rng(seed)
    pairs = []
    for scene in scenes:
        options = [c for c in COLORS if c not in (scene.prompt.subject_color, scene.prompt.background_color)]
        target = options[rng.integers(len(options))]
        pairs.append((scene, replace(scene.prompt, subject_color=target)))
    return pairs


def evaluate_editing(
    models: ModelBundle,
    classifier: AttributeClassifier,
    scenes: list[ToyScene],
    scales: ScaleConfig | None = None,
    seed: int = 0,
    use_gt_mask: bool = False,
) -> dict:
    """Run single-attribute edits and collect the full metrics table."""
    from onestep_edit.editing import EditMask

    scales = scales if scales is not None else ScaleConfig()
    rows = []
    for scene, edit_prompt in single_attribute_edits(scenes, seed):
        user_mask = EditMask(scene.gt_mask.clone(), provenance="ground-truth") if use_gt_mask else None
        req = EditRequest(
            source_image=scene.image,
            source_prompt=scene.prompt,
            edit_prompt=edit_prompt,
            scales=scales,
            user_mask=user_mask,
        )
        t0 = time.perf_counter()
        out = edit_image(models, req)
        wall = (time.perf_counter() - t0) * 1000
        edited = out["edited"]
        bg = background_metrics(to_unit(scene.image), to_unit(edited), scene.gt_mask)
        pred = predicted_attributes(edited, classifier)
        rows.append(
            {
                "success": pred["subject_color"] == edit_prompt.subject_color,
                "background_psnr": bg["psnr"],
                "background_mse": bg["mse"],
                "semantic_whole": semantic_score(edited, edit_prompt, classifier, "whole"),
                "semantic_edited": semantic_score(edited, edit_prompt, classifier, "masked", mask=scene.gt_mask),
                "mask_iou": mask_iou(out["mask"].weights, scene.gt_mask),
                "wall_ms": wall,
            }
        )
    agg = {
        "success_rate": float(np.mean([r["success"] for r in rows])),
        "background_psnr": float(np.mean([r["background_psnr"] for r in rows])),
        "background_mse": float(np.mean([r["background_mse"] for r in rows])),
        "semantic_whole": float(np.mean([r["semantic_whole"] for r in rows])),
        "semantic_edited": float(np.mean([r["semantic_edited"] for r in rows])),
        "median_mask_iou": float(np.median([r["mask_iou"] for r in rows])),
        "median_wall_ms": float(np.median([r["wall_ms"] for r in rows])),
        "n": len(rows),
    }
    return {"rows": rows, "aggregate": agg}


def _write_table(rows: list[dict], out_dir: Path, name: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.json").write_text(json.dumps(rows, indent=2))
    if rows:
        with open(out_dir / f"{name}.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)


def _plot_sweep(rows: list[dict], x_key: str, out_path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax1 = plt.subplots(figsize=(6, 4))
    xs = [r[x_key] for r in rows]
    ax1.plot(xs, [r["semantic_edited"] for r in rows], "o-", color="tab:blue", label="semantic (edited)")
    ax1.set_xlabel(x_key)
    ax1.set_ylabel("semantic score", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(xs, [r["background_psnr"] for r in rows], "s--", color="tab:orange", label="background PSNR")
    ax2.set_ylabel("background PSNR (dB)", color="tab:orange")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def _plot_bars(rows: list[dict], label_key: str, value_keys: list[str], out_path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(value_keys), figsize=(4 * len(value_keys), 3.5))
    if len(value_keys) == 1:
        axes = [axes]
    labels = [str(r[label_key]) for r in rows]
    for ax, key in zip(axes, value_keys):
        ax.bar(labels, [r[key] for r in rows], color="tab:blue")
        ax.set_title(key)
        ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


ABLATION_SUITES = ("framework", "losses", "generators", "scale-sweep")


def run_ablation_suite(which: str, workspace, out_dir: str | Path, n_eval: int = 32, seed: int = 5) -> list[dict]:
    """Train (via the workspace cache) and evaluate one ablation grid.

    ``framework``  -- full vs w/o stage 1 / w/o stage 2 / w/o IP branch, on
                      real-like reconstruction;
    ``losses``     -- the four loss settings, on editing semantics;
    ``generators`` -- the inversion recipe against a second, smaller generator;
    ``scale-sweep``-- editing metrics across s_edit and s_y grids (two plots).
    """
    if which not in ABLATION_SUITES:
        raise InvalidArgument(f"unknown suite {which!r}; options: {ABLATION_SUITES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    eval_scenes = workspace.scenes("real-like", "eval")[:n_eval]
    rows: list[dict] = []

    if which == "framework":
        variants = [("full", "full"), ("wo_stage1", "wo_stage1"),
                    ("wo_stage2", "stage1:base"), ("wo_ip", "noip")]
        for name, variant in variants:
            models = workspace.bundle(variant)
            rec = evaluate_reconstruction(models, eval_scenes)
            rows.append({"setting": name, **rec})
        _write_table(rows, out, "framework_ablation")
        _plot_bars(rows, "setting", ["psnr", "perceptual"], out / "framework_ablation.png")

    elif which == "losses":
        from onestep_edit.artifacts import LOSS_SETTINGS

        clf = workspace.classifier()
        for name, variant in LOSS_SETTINGS.items():
            models = workspace.bundle(variant)
            res = evaluate_editing(models, clf, eval_scenes, seed=seed)
            rows.append({"setting": name, **res["aggregate"]})
        _write_table(rows, out, "loss_ablation")
        _plot_bars(rows, "setting", ["semantic_whole", "semantic_edited"], out / "loss_ablation.png")

    elif which == "generators":
        rows = _generator_swap_rows(workspace)
        _write_table(rows, out, "generator_swap")
        _plot_bars(rows, "generator", ["regr_first", "regr_last"], out / "generator_swap.png")

    else:  # scale-sweep
        clf = workspace.classifier()
        models = workspace.bundle("full")
        sedit_rows, sy_rows = [], []
        for s_edit in (0.0, 0.25, 0.5, 1.0):
            res = evaluate_editing(models, clf, eval_scenes,
                                   scales=ScaleConfig(s_y=2.0, s_edit=s_edit, s_non_edit=1.0), seed=seed)
            sedit_rows.append({"s_edit": s_edit, **res["aggregate"]})
        for s_y in (0.5, 1.0, 2.0, 4.0):
            res = evaluate_editing(models, clf, eval_scenes,
                                   scales=ScaleConfig(s_y=s_y, s_edit=0.0, s_non_edit=1.0), seed=seed)
            sy_rows.append({"s_y": s_y, **res["aggregate"]})
        _write_table(sedit_rows, out, "sweep_s_edit")
        _write_table(sy_rows, out, "sweep_s_y")
        _plot_sweep(sedit_rows, "s_edit", out / "sweep_s_edit.png")
        _plot_sweep(sy_rows, "s_y", out / "sweep_s_y.png")
        rows = sedit_rows + sy_rows

    return rows


def _generator_swap_rows(workspace) -> list[dict]:
    """Train the stage-1 recipe briefly against the tiny alternative generator."""
    import copy

    from onestep_edit.networks import ImageEncoder, IPAugmentedGenerator, OneStepGenerator, TinyGenerator
    from onestep_edit.training import train_inversion

    rows = []
    for name in ("unet", "tiny"):
        if name == "unet":
            gen = None  # default: the workspace's distilled generator
            g_ip = workspace._fresh_gip()
        else:
            torch.manual_seed(3)
            tiny = TinyGenerator()
            base = OneStepGenerator(terminal_t=workspace.schedule.T)
            g_ip = IPAugmentedGenerator(base, ImageEncoder())
            gen = tiny
        cfg = copy.deepcopy(workspace.config.stage1)
        cfg.iterations = 60
        result = train_inversion(
            1, g_ip, None, cfg, workspace.schedule,
            vocab=workspace.vocab, generator=gen,
        )
        first = result["log"][0]["regr"]
        last = result["log"][-1]["regr"]
        rows.append({"generator": name, "regr_first": first, "regr_last": last,
                     "trains": bool(last < first)})
    return rows
