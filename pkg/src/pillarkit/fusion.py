"""Single-pathway top-down fusion backbone and the detection head."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ddconv import DDConv
from .numcore import BatchNorm, Conv2d, ConvTranspose2d, Module, ReLU, Sequential, conv_bn_relu
from .numcore import ops


@dataclass(frozen=True)
class FusionConfig:
    base_stride: int = 2
    # (relative stride, layers, channels); block i runs at base_stride * 2**i
    blocks: tuple[tuple[int, int, int], ...] = ((1, 3, 64), (2, 5, 128), (4, 5, 256))
    in_channels: int = 64
    upsample_channels: int = 128
    num_scales: int = 3
    use_norm: bool = True
    anchors_per_position: int = 2
    box_size: int = 7
    dir_bins: int = 2

    def __post_init__(self):
        strides = [b[0] for b in self.blocks]
        if strides[0] != 1 or any(b != 2 * a for a, b in zip(strides, strides[1:])):
            raise ValueError("block strides must be 1, 2, 4, ... relative to the base stride")
        if self.num_scales > len(self.blocks):
            raise ValueError("more pillar scales than fusion blocks")

    @property
    def out_channels(self) -> int:
        return self.upsample_channels * len(self.blocks)

    def block_strides(self):
        return [self.base_stride * b[0] for b in self.blocks]

    def output_dims(self, h: int, w: int):
        """Spatial extents of every block output for an ``h x w`` input grid."""
        dims = []
        for st in self.block_strides():
            dims.append((-(-h // st), -(-w // st)))
        return dims


class FusionBackbone(Module):
    """Top-down backbone fed by the K same-resolution pillar maps.

    Block 1 consumes the scale-1 map.  Block ``i > 1`` starts with a stride-2
    convolution of block ``i-1``'s output; the scale-``i`` map, reduced by a
    single strided convolution to the same resolution and width, is added
    right after that first layer and is not processed any further.  Every
    block output is upsampled by a transposed convolution to block 1's
    resolution and the results are concatenated along channels.
    """

    def __init__(self, config: FusionConfig = FusionConfig(), rng=None, dtype=np.float32):
        super().__init__()
        self.config = config
        rng = rng or np.random.default_rng(0)
        norm = config.use_norm
        self.first, self.rest, self.inject, self.up = [], [], [], []
        c_prev = config.in_channels
        for i, (rel, layers, ch) in enumerate(config.blocks):
            stride = config.base_stride if i == 0 else 2
            self.first.append(self.add_child(f"block{i}.0", conv_bn_relu(c_prev, ch, 3, stride, norm, rng, dtype)))
            self.rest.append(self.add_child(f"block{i}.rest", Sequential(
                *[conv_bn_relu(ch, ch, 3, 1, norm, rng, dtype) for _ in range(layers - 1)])))
            if 0 < i < config.num_scales:
                # kernel one wider than the stride so every input cell is seen
                st = config.base_stride * rel
                self.inject.append(self.add_child(f"inject{i}", conv_bn_relu(
                    config.in_channels, ch, st + 1, st, norm, rng, dtype)))
            else:
                self.inject.append(None)
            self.up.append(self.add_child(f"up{i}", Sequential(
                ConvTranspose2d(ch, config.upsample_channels, rel, rel, rng=rng, dtype=dtype),
                BatchNorm(config.upsample_channels, enabled=norm, dtype=dtype),
                ReLU())))
            c_prev = ch

    def forward(self, maps):
        cfg = self.config
        if len(maps) != cfg.num_scales:
            raise ValueError(f"expected {cfg.num_scales} maps, got {len(maps)}")
        shape = maps[0].shape
        for m in maps:
            if m.shape != shape or m.shape[-1] != cfg.in_channels:
                raise ValueError(f"map shape mismatch: {m.shape} vs {shape} with {cfg.in_channels} channels")
        x = maps[0]
        self.block_outputs = []
        ups = []
        for i in range(len(cfg.blocks)):
            x = self.first[i].forward(x)
            if self.inject[i] is not None:
                side = self.inject[i].forward(maps[i])
                if side.shape != x.shape:
                    raise ValueError(f"injected map {side.shape} does not match block input {x.shape}")
                x, _ = ops.add_forward(x, side)
            x = self.rest[i].forward(x)
            self.block_outputs.append(x)
            ups.append(self.up[i].forward(x))
        target = ups[0].shape[:-1]
        for u in ups:
            if u.shape[:-1] != target:
                raise ValueError("upsampled block outputs disagree in size; use grids divisible by the total stride")
        out, self._cat = ops.concat_forward(ups, axis=-1)
        return out

    def backward(self, dout):
        dups = ops.concat_backward(dout, self._cat)
        dmaps = [None] * self.config.num_scales
        dx = None
        for i in reversed(range(len(self.config.blocks))):
            g = self.up[i].backward(dups[i])
            if dx is not None:
                g = g + dx
            g = self.rest[i].backward(g)
            if self.inject[i] is not None:
                dmaps[i] = self.inject[i].backward(g)
            dx = self.first[i].backward(g)
        dmaps[0] = dx
        return dmaps


@dataclass
class HeadOutput:
    box: np.ndarray  # (..., h, w, A*7)
    cls: np.ndarray  # (..., h, w, A)
    dir: np.ndarray  # (..., h, w, A*2)

    def concatenated(self):
        return np.concatenate([self.box, self.cls, self.dir], axis=-1)


class DetectionHead(Module):
    """Three parallel 1x1 convolutions (plain or dynamic) for box, class, direction."""

    def __init__(self, c_in, anchors=2, box_size=7, dir_bins=2, use_ddconv=False,
                 num_bases=3, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.use_ddconv = use_ddconv
        widths = {"box": anchors * box_size, "cls": anchors, "dir": anchors * dir_bins}
        self.branches = {}
        for name, c_out in widths.items():
            if use_ddconv:
                layer = DDConv(c_in, c_out, 1, num_bases, rng=rng, dtype=dtype)
            else:
                layer = Conv2d(c_in, c_out, 1, rng=rng, dtype=dtype)
            # small output init keeps the initial residual predictions near zero
            key = "shared" if use_ddconv else "weight"
            layer.params[key] *= 0.1
            self.branches[name] = self.add_child(name, layer)

    def forward(self, features) -> HeadOutput:
        return HeadOutput(*(self.branches[k].forward(features) for k in ("box", "cls", "dir")))

    def backward(self, grads: HeadOutput):
        dx = None
        for k in ("box", "cls", "dir"):
            g = self.branches[k].backward(getattr(grads, k))
            dx = g if dx is None else dx + g
        return dx

    def dynamic_layers(self):
        return [b for b in self.branches.values() if isinstance(b, DDConv)]
