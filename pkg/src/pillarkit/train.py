"""Toy training on seeded synthetic scenes."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .ddconv import mean_abs_cosine
from .losses import CSV_HEADER, LossBreakdown, build_targets, stack_targets
from .model import Detector, concat_frames
from .numcore import adam_step, save_tensor
from .pointcloud import synth_scene
from .voxelizer import voxelize

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: Detector
    history: list[LossBreakdown] = field(default_factory=list)
    cosine_start: float = float("nan")
    cosine_end: float = float("nan")

    @property
    def initial_loss(self):
        return self.history[0].total

    @property
    def final_loss(self):
        return self.history[-1].total

    def csv(self) -> str:
        rows = [CSV_HEADER] + [h.csv_row(i + 1) for i, h in enumerate(self.history)]
        return "\n".join(rows) + "\n"


def make_scenes(cfg: RunConfig):
    prof = cfg.density_profile()
    return [synth_scene(cfg.seed * 1000 + i, cfg.boxes_per_scene, prof) for i in range(cfg.num_scenes)]


def build_model(cfg: RunConfig) -> Detector:
    return Detector(cfg.voxel_config(), cfg.fusion_config(), use_ddconv=cfg.use_ddconv,
                    num_bases=cfg.num_bases, anchor_size=cfg.anchor_size, anchor_z=cfg.anchor_z,
                    seed=cfg.seed)


def _mean_cos(model):
    bases = model.bases()
    if not bases or bases[0].shape[0] < 2:
        return float("nan")
    return float(np.mean([mean_abs_cosine(b.astype(np.float64)) for b in bases]))


def train_toy(cfg: RunConfig, threads: int = 1, progress=None) -> TrainResult:
    """Train the full detector with Adam on ``cfg.num_scenes`` synthetic scenes.

    Scenes are voxelized once.  Each epoch visits the scenes in a seeded
    shuffled order, ``batch_size`` at a time; the learning rate steps down by
    ``lr_decay`` every ``lr_decay_every`` epochs.
    """
    scenes = make_scenes(cfg)
    model = build_model(cfg)
    vcfg = model.voxel
    pillars = [voxelize(cloud, vcfg, threads=threads) for cloud, _ in scenes]
    targets = [build_targets(model.anchors, np.array([b.as_array() for b in boxes]).reshape(-1, 7))
               for _, boxes in scenes]

    weights = cfg.loss_weights()
    state = cfg.adam_state()
    rng = np.random.default_rng(cfg.seed + 7919)
    per_epoch = -(-len(scenes) // cfg.batch_size)
    result = TrainResult(model, cosine_start=_mean_cos(model))
    params = model.param_dict()
    grads = model.grad_dict()
    order = []
    for step in range(cfg.steps):
        epoch, pos = divmod(step, per_epoch)
        if pos == 0:
            order = rng.permutation(len(scenes))
        state.epoch = epoch
        idx = order[pos * cfg.batch_size:(pos + 1) * cfg.batch_size]
        fb = concat_frames([pillars[i] for i in idx])
        tg = stack_targets([targets[i] for i in idx])
        parts = model.train_step(fb, tg, weights)
        adam_step(params, grads, state)
        result.history.append(parts)
        if progress is not None:
            progress(step + 1, parts)
    result.cosine_end = _mean_cos(model)
    return result


def save_checkpoint(model, outdir):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, p, _ in model.named_parameters():
        save_tensor(out / f"{name}.pipt", p)


def dump_features(model, frame, outdir):
    """PIPT dumps of one frame's intermediate maps and coefficient maps."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    model.set_train(False)
    fb, _ = model.prepare([frame])
    head = model.forward(fb)
    for k, m in enumerate(model.maps, 1):
        save_tensor(out / f"scale{k}_map.pipt", m[0])
    for i, b in enumerate(model.backbone.block_outputs, 1):
        save_tensor(out / f"block{i}.pipt", b[0])
    save_tensor(out / "fused.pipt", model.features[0])
    save_tensor(out / "head.pipt", head.concatenated()[0])
    for layer_name, layer in model.head.branches.items():
        if hasattr(layer, "last_coefficients"):
            save_tensor(out / f"coeff_{layer_name}.pipt", np.ascontiguousarray(layer.last_coefficients[0]))
    model.set_train(True)
