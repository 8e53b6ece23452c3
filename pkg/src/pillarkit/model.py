"""End-to-end detector: voxelize -> encode/scatter -> fuse -> head -> loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import MultiScaleEncoder
from .fusion import DetectionHead, FusionBackbone, FusionConfig, HeadOutput
from .losses import LossWeights, Targets, build_targets, make_anchors, stack_targets, total_loss
from .numcore import Module
from .pointcloud import PointCloud
from .voxelizer import PillarBatch, VoxelConfig, grid_dims, voxelize


@dataclass
class FrameBatch:
    """Several frames' pillar batches concatenated per scale."""

    batches: list[PillarBatch]
    batch_index: list[np.ndarray]
    size: int


def concat_frames(per_frame: list[list[PillarBatch]]) -> FrameBatch:
    k = len(per_frame[0])
    out, bidx = [], []
    for s in range(k):
        parts = [f[s] for f in per_frame]
        out.append(PillarBatch(
            scale=s + 1,
            decorated=np.concatenate([p.decorated for p in parts]),
            counts=np.concatenate([p.counts for p in parts]),
            indices=np.concatenate([p.indices for p in parts]),
            point_ids=np.concatenate([p.point_ids for p in parts]),
            centers=np.concatenate([p.centers for p in parts]),
        ))
        bidx.append(np.concatenate([np.full(len(p), i, dtype=np.int64) for i, p in enumerate(parts)]))
    return FrameBatch(out, bidx, len(per_frame))


class Detector(Module):
    def __init__(self, voxel: VoxelConfig, fusion: FusionConfig, use_ddconv=True, num_bases=3,
                 anchor_size=(1.6, 3.9, 1.56), anchor_z=-1.0, seed=0, dtype=np.float32):
        super().__init__()
        if fusion.num_scales != voxel.num_scales:
            raise ValueError("fusion and voxelizer disagree on the number of scales")
        rng = np.random.default_rng(seed)
        self.voxel = voxel
        self.fusion_config = fusion
        self.dtype = dtype
        dims = [voxel.feature_dim(k) for k in range(1, voxel.num_scales + 1)]
        self.encoder = self.add_child("encoder", MultiScaleEncoder(
            dims, fusion.in_channels, fusion.use_norm, rng, dtype))
        self.backbone = self.add_child("backbone", FusionBackbone(fusion, rng, dtype))
        self.head = self.add_child("head", DetectionHead(
            fusion.out_channels, fusion.anchors_per_position, fusion.box_size, fusion.dir_bins,
            use_ddconv, num_bases, rng, dtype))
        self.grid = grid_dims(voxel)
        self.head_dims = fusion.output_dims(*self.grid)[0]
        st = fusion.base_stride
        self.anchors = make_anchors(*self.head_dims, (voxel.crop.x[0], voxel.crop.y[0]),
                                    (voxel.cell_size[0] * st, voxel.cell_size[1] * st),
                                    size=anchor_size, z=anchor_z)

    # -- data ---------------------------------------------------------------
    def prepare(self, frames, threads=1):
        """Voxelize ``(cloud, boxes)`` frames; returns ``(FrameBatch, Targets)``."""
        per_frame, targets = [], []
        for cloud, boxes in frames:
            per_frame.append(voxelize(cloud, self.voxel, threads=threads))
            gts = np.array([b.as_array() for b in boxes]).reshape(-1, 7)
            targets.append(build_targets(self.anchors, gts))
        return concat_frames(per_frame), stack_targets(targets)

    # -- network ------------------------------------------------------------
    def forward(self, fb: FrameBatch) -> HeadOutput:
        batches = [PillarBatch(b.scale, b.decorated.astype(self.dtype), b.counts, b.indices,
                               b.point_ids, b.centers) for b in fb.batches]
        self.maps = self.encoder.forward(batches, *self.grid, fb.batch_index, fb.size)
        self.features = self.backbone.forward(self.maps)
        return self.head.forward(self.features)

    def backward(self, grads: HeadOutput, dbases=()):
        for layer, g in zip(self.head.dynamic_layers(), dbases):
            layer.grads["bases"] += g.astype(layer.grads["bases"].dtype)
        dfeat = self.head.backward(grads)
        dmaps = self.backbone.backward(dfeat)
        self.encoder.backward(dmaps)

    def bases(self):
        return [layer.params["bases"] for layer in self.head.dynamic_layers()]

    def loss(self, out: HeadOutput, targets: Targets, weights: LossWeights):
        c = self.fusion_config
        bases = [b.astype(np.float64) for b in self.bases()] if weights.sim > 0 else []
        return total_loss(out.box, out.cls, out.dir, targets, bases, weights, c.box_size, c.dir_bins)

    def train_step(self, fb: FrameBatch, targets: Targets, weights: LossWeights):
        """Forward, loss and backward; gradients are left in ``grads``."""
        self.zero_grad()
        out = self.forward(fb)
        parts, grads, dbases = self.loss(out, targets, weights)
        if not np.isfinite(parts.total):
            raise FloatingPointError(f"loss diverged: {parts}")
        self.backward(HeadOutput(*grads), dbases)
        return parts
