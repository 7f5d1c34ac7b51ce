"""Build-and-cache orchestration for the full model zoo.

A :class:`Workspace` owns a directory keyed by a hash of the run config and
lazily builds, in dependency order: datasets, teacher, distilled one-step
generator, evaluation classifier, the stage-1 inversion variants, and the
stage-2 variants used by the ablation suites.  Everything is cached as
checkpoints, so repeated runs (and the test suite) only pay for training
once per config.

Stage-1 variants:  base (full loss) | noregr (lambda1=0) | noip (s_x=0)
Stage-2 variants:  full | noregu | regu_only | plain | noip | wo_stage1
(the four loss settings are plain/regu_only/noregu/full = settings 1-4).
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import torch

from onestep_edit.checkpoint import load_into_module, save_module
from onestep_edit.classifier import AttributeClassifier, train_classifier
from onestep_edit.config import RunConfig, desk_preset
from onestep_edit.datagen import ToyScene, generate_dataset
from onestep_edit.editing import ModelBundle
from onestep_edit.networks import CondUNet, ImageEncoder, InversionNet, IPAugmentedGenerator, OneStepGenerator
from onestep_edit.prompts import make_vocab_weights
from onestep_edit.schedule import InvalidArgument, make_schedule
from onestep_edit.training import train_inversion, train_teacher, distill_generator

STAGE1_VARIANTS = ("base", "noregr", "noip")
STAGE2_VARIANTS = ("full", "noregu", "regu_only", "plain", "noip", "wo_stage1")
# stage2 label -> (stage1 source, lambda_stage2, s_x, allow_no_stage1)
_STAGE2_RECIPES = {
    "full": ("base", 1.0, 1.0, False),
    "noregu": ("base", 0.0, 1.0, False),
    "regu_only": ("noregr", 1.0, 1.0, False),
    "plain": ("noregr", 0.0, 1.0, False),
    "noip": ("noip", 1.0, 0.0, False),
    "wo_stage1": (None, 1.0, 1.0, True),
}
LOSS_SETTINGS = {
    "setting1": "plain",      # no regr, no regu
    "setting2": "regu_only",  # no regr, + regu
    "setting3": "noregu",     # + regr, no regu
    "setting4": "full",       # both
}


def config_hash(config: RunConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:10]


class Workspace:
    def __init__(self, root: str | Path, config: RunConfig | None = None, verbose: bool = False):
        self.config = config if config is not None else desk_preset()
        self.config.validate()
        self.dir = Path(root) / config_hash(self.config)
        self.dir.mkdir(parents=True, exist_ok=True)
        stamp = self.dir / "workspace.json"
        if not stamp.exists():
            stamp.write_text(json.dumps(self.config.to_dict(), indent=2))
        self.schedule = make_schedule(self.config.schedule_T, self.config.schedule_kind)
        self.vocab = make_vocab_weights()
        self.verbose = verbose
        self._cache: dict[str, object] = {}

    def _log(self, msg: str) -> None:
        if self.verbose:
            print(f"[workspace] {msg}", flush=True)

    # -- datasets ----------------------------------------------------------
    def scenes(self, split: str, role: str = "train") -> list[ToyScene]:
        key = f"scenes/{split}/{role}"
        if key not in self._cache:
            ds = self.config.dataset
            n = ds.n_synthetic if split == "synthetic-style" else ds.n_real
            seed = ds.seed + {"train": 0, "eval": 1000}[role]
            if role == "eval":
                n = max(64, n // 3)
            self._cache[key] = generate_dataset(n, split, seed=seed)
        return self._cache[key]

    # -- base models -------------------------------------------------------
    def teacher(self) -> CondUNet:
        if "teacher" not in self._cache:
            path = self.dir / "teacher.ckpt"
            model = CondUNet()
            if path.exists():
                load_into_module(path, model, "teacher")
            else:
                self._log("training teacher")
                model = train_teacher(
                    self.scenes("synthetic-style") + self.scenes("real-like"),
                    self.config.teacher, self.schedule, self.vocab,
                )
                save_module(path, model, "teacher", config=self.config.to_dict()["teacher"],
                            seed=self.config.teacher.seed)
            model.trained = True
            model.eval()
            self._cache["teacher"] = model
        return self._cache["teacher"]

    def generator(self) -> OneStepGenerator:
        if "generator" not in self._cache:
            path = self.dir / "generator.ckpt"
            if path.exists():
                g = OneStepGenerator(terminal_t=self.schedule.T)
                load_into_module(path, g, "generator")
            else:
                self._log("distilling generator")
                g = distill_generator(self.teacher(), self.config.distill, self.schedule, self.vocab)
                save_module(path, g, "generator", config=self.config.to_dict()["distill"],
                            seed=self.config.distill.seed)
            g.trained = True
            g.eval()
            self._cache["generator"] = g
        return self._cache["generator"]

    def classifier(self) -> AttributeClassifier:
        if "classifier" not in self._cache:
            path = self.dir / "classifier.ckpt"
            clf = AttributeClassifier()
            if path.exists():
                load_into_module(path, clf, "classifier")
            else:
                self._log("training classifier")
                clf = train_classifier(
                    self.scenes("synthetic-style") + self.scenes("real-like"),
                    self.config.classifier,
                )
                save_module(path, clf, "classifier", seed=self.config.classifier.seed)
            clf.trained = True
            clf.eval()
            self._cache["classifier"] = clf
        return self._cache["classifier"]

    def _fresh_gip(self) -> IPAugmentedGenerator:
        base = OneStepGenerator(terminal_t=self.schedule.T)
        base.unet.load_state_dict(self.generator().unet.state_dict())
        base.trained = True
        torch.manual_seed(self.config.seed + 77)  # fixed IP-branch init
        return IPAugmentedGenerator(base, ImageEncoder())

    # -- inversion variants ------------------------------------------------
    def stage1(self, label: str = "base") -> tuple[InversionNet, IPAugmentedGenerator]:
        if label not in STAGE1_VARIANTS:
            raise InvalidArgument(f"unknown stage-1 variant {label!r}")
        key = f"stage1/{label}"
        if key not in self._cache:
            inv_path = self.dir / f"stage1_{label}_inv.ckpt"
            gip_path = self.dir / f"stage1_{label}_gip.ckpt"
            g_ip = self._fresh_gip()
            inv = InversionNet.init_from_generator(g_ip.base)
            if inv_path.exists():
                load_into_module(inv_path, inv, "inversion")
                load_into_module(gip_path, g_ip, "ip_generator")
            else:
                self._log(f"stage-1 training [{label}]")
                cfg = copy.deepcopy(self.config.stage1)
                s_x = 1.0
                if label == "noregr":
                    cfg.lambda_stage1 = 0.0
                elif label == "noip":
                    s_x = 0.0
                result = train_inversion(
                    1, g_ip, None, cfg, self.schedule, inv=inv,
                    vocab=self.vocab, s_x=s_x,
                    out_dir=self.dir / f"logs_stage1_{label}",
                )
                inv = result["ema"]
                save_module(inv_path, inv, "inversion", seed=cfg.seed)
                save_module(gip_path, g_ip, "ip_generator", seed=cfg.seed)
            inv.eval()
            g_ip.eval()
            self._cache[key] = (inv, g_ip)
        return self._cache[key]

    def stage2(self, label: str = "full") -> tuple[InversionNet, IPAugmentedGenerator]:
        if label not in STAGE2_VARIANTS:
            raise InvalidArgument(f"unknown stage-2 variant {label!r}")
        key = f"stage2/{label}"
        if key not in self._cache:
            src, lam2, s_x, allow_no_stage1 = _STAGE2_RECIPES[label]
            if src is None:
                g_ip = self._fresh_gip()
                inv_init = InversionNet.init_from_generator(g_ip.base)
            else:
                inv_s1, g_ip = self.stage1(src)
                inv_init = copy.deepcopy(inv_s1)
            inv_path = self.dir / f"stage2_{label}_inv.ckpt"
            if inv_path.exists():
                load_into_module(inv_path, inv_init, "inversion")
                inv = inv_init
            else:
                self._log(f"stage-2 training [{label}]")
                cfg = copy.deepcopy(self.config.stage2)
                cfg.lambda_stage2 = lam2
                result = train_inversion(
                    2, g_ip, self.teacher(), cfg, self.schedule,
                    scenes=self.scenes("real-like"), inv=inv_init,
                    vocab=self.vocab, s_x=s_x, allow_no_stage1=allow_no_stage1,
                    out_dir=self.dir / f"logs_stage2_{label}",
                )
                inv = result["ema"]
                save_module(inv_path, inv, "inversion", seed=cfg.seed)
            inv.eval()
            self._cache[key] = (inv, g_ip)
        return self._cache[key]

    # -- bundles -----------------------------------------------------------
    def bundle(self, variant: str = "full") -> ModelBundle:
        """Inference bundle for a trained variant ('stage1:<label>' or a
        stage-2 label)."""
        if variant.startswith("stage1:"):
            label = variant.split(":", 1)[1]
            inv, g_ip = self.stage1(label)
        else:
            label = variant
            inv, g_ip = self.stage2(variant)
        s_x = 0.0 if label == "noip" else 1.0
        return ModelBundle(inv=inv, g_ip=g_ip, schedule=self.schedule, vocab=self.vocab, s_x=s_x)
