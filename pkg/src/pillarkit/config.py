"""Flat ``key=value`` run configuration.

Precedence is ``--set`` flags > config file > defaults.  Unknown keys are
rejected.  Tuple-valued keys are written as comma lists.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .fusion import FusionConfig
from .losses import LossWeights
from .numcore import AdamState
from .pointcloud import CropRange, DensityProfile
from .voxelizer import VoxelConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    crop_x: tuple[float, float] = (-39.68, 39.68)
    crop_y: tuple[float, float] = (0.0, 69.12)
    crop_z: tuple[float, float] = (-1.0, 3.0)
    cell_size: tuple[float, float] = (0.16, 0.16)
    num_scales: int = 3
    max_points: tuple[int, ...] = (32, 128, 288)
    max_pillars: int = 12000
    base_stride: int = 2
    block_layers: tuple[int, ...] = (3, 5, 5)
    block_channels: tuple[int, ...] = (64, 128, 256)
    pillar_channels: int = 64
    upsample_channels: int = 128
    use_norm: bool = True
    use_ddconv: bool = True
    num_bases: int = 3
    anchor_size: tuple[float, float, float] = (1.6, 3.9, 1.56)
    anchor_z: float = -1.0
    loss_loc: float = 2.0
    loss_cls: float = 1.0
    loss_dir: float = 0.2
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    sim_weight: float = 0.1
    lr: float = 0.0002
    lr_decay: float = 0.8
    lr_decay_every: int = 15
    steps: int = 200
    batch_size: int = 2
    num_scenes: int = 10
    boxes_per_scene: int = 2
    density_scale: float = 3000.0
    clutter_points: int = 300
    seed: int = 0

    # -- conversion -----------------------------------------------------------
    def voxel_config(self) -> VoxelConfig:
        return VoxelConfig(
            crop=CropRange(self.crop_x, self.crop_y, self.crop_z),
            cell_size=self.cell_size,
            num_scales=self.num_scales,
            max_points=self.max_points[:self.num_scales],
            max_pillars=self.max_pillars,
            seed=self.seed,
        )

    def fusion_config(self) -> FusionConfig:
        blocks = tuple((2 ** i, n, c) for i, (n, c) in enumerate(zip(self.block_layers, self.block_channels)))
        return FusionConfig(base_stride=self.base_stride, blocks=blocks, in_channels=self.pillar_channels,
                            upsample_channels=self.upsample_channels, num_scales=self.num_scales,
                            use_norm=self.use_norm)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.loss_loc, self.loss_cls, self.loss_dir, self.focal_alpha,
                           self.focal_gamma, self.sim_weight)

    def adam_state(self) -> AdamState:
        return AdamState(lr=self.lr, decay=self.lr_decay, decay_every=self.lr_decay_every)

    def density_profile(self) -> DensityProfile:
        return DensityProfile(crop=CropRange(self.crop_x, self.crop_y, self.crop_z),
                              scale=self.density_scale, clutter_points=self.clutter_points,
                              box_size=self.anchor_size)

    # -- text form --------------------------------------------------------------
    def set(self, key: str, raw: str):
        types = {f.name: f.type for f in fields(self)}
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(self, key, _parse(key, types[key], raw))
        return self

    def update(self, pairs: dict):
        for k, v in pairs.items():
            self.set(k, v)
        return self

    def serialize(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                text = ",".join(_fmt(x) for x in v)
            else:
                text = _fmt(v)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"

    def validate(self):
        try:
            self.voxel_config()
            self.fusion_config()
            self.loss_weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if len(self.block_layers) != len(self.block_channels):
            raise ConfigError("block_layers and block_channels need the same length")
        if len(self.max_points) < self.num_scales:
            raise ConfigError("max_points needs one cap per scale")
        if self.batch_size < 1 or self.num_scenes < 1 or self.steps < 0:
            raise ConfigError("batch_size and num_scenes must be positive, steps non-negative")
        return self


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(key, typ, raw: str):
    raw = raw.strip()
    typ = str(typ)
    try:
        if typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ.startswith("tuple[int"):
            return tuple(int(x) for x in raw.split(","))
        if typ.startswith("tuple[float"):
            return tuple(float(x) for x in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    raise ConfigError(f"unsupported type {typ} for {key}")


def parse_text(text: str) -> dict:
    pairs = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def toy_config() -> RunConfig:
    """Desk-scale preset used by ``train-toy``: a 10.24 m square, 32x32 grid."""
    return RunConfig(crop_x=(-5.12, 5.12), crop_y=(0.0, 10.24), cell_size=(0.32, 0.32),
                     max_pillars=2000)


def load_config(path=None, overrides=(), base: RunConfig | None = None) -> RunConfig:
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    if path is not None:
        cfg.update(parse_text(Path(path).read_text()))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v)
    return cfg.validate()
