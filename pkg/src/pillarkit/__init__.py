"""Multi-scale overlapping pillar voxelization and decomposable dynamic
convolution on a small numpy autodiff core."""
from .ddconv import DDConv, memory_ratio, param_count, similarity_loss
from .encoder import MultiScaleEncoder, PillarEncoder, gather, scatter
from .fusion import DetectionHead, FusionBackbone, FusionConfig, HeadOutput
from .pointcloud import (CropRange, DensityProfile, GroundTruthBox, PointCloud, crop, load_lidar_bin,
                         synth_scene)
from .voxelizer import PillarBatch, VoxelConfig, assign_cells, gather_pillars, grid_dims, voxelize

__version__ = "0.1.0"
