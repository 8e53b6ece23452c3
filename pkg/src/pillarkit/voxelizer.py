"""Center-aligned, overlapping multi-scale pillar voxelization.

The cropped cloud is binned into a base grid of ``H x W`` cells.  For every
non-empty cell and every scale ``k = 1..K`` a pillar of footprint
``k*x_s by k*y_s`` centred on the cell collects points with the half-open
test ``lo <= x < hi``.  For ``k > 1`` pillars overlap, so one point can land
in several cells' pillars.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .pointcloud import CropRange, PointCloud

FEATURES_FIRST = ("x", "y", "z", "xc", "yc", "zc", "xp", "yp", "r")
FEATURES_REST = ("xc", "yc", "zc", "xp", "yp", "r")
_ALL_FEATURES = set(FEATURES_FIRST)


@dataclass(frozen=True)
class VoxelConfig:
    crop: CropRange = field(default_factory=CropRange)
    cell_size: tuple[float, float] = (0.16, 0.16)
    num_scales: int = 3
    max_points: tuple[int, ...] | None = None  # defaults to 32 * k**2
    max_pillars: int = 12000
    seed: int = 0
    features_first: tuple[str, ...] = FEATURES_FIRST
    features_rest: tuple[str, ...] = FEATURES_REST

    def __post_init__(self):
        if min(self.cell_size) <= 0:
            raise ValueError("cell sizes must be positive")
        if self.num_scales < 1:
            raise ValueError("need at least one scale")
        if self.max_pillars < 1:
            raise ValueError("max_pillars must be positive")
        if self.max_points is not None:
            if len(self.max_points) != self.num_scales or min(self.max_points) < 1:
                raise ValueError("max_points needs one positive cap per scale")
        for name in (*self.features_first, *self.features_rest):
            if name not in _ALL_FEATURES:
                raise ValueError(f"unknown point feature {name!r}")

    def point_cap(self, k: int) -> int:
        if self.max_points is not None:
            return self.max_points[k - 1]
        return 32 * k * k

    def features(self, k: int) -> tuple[str, ...]:
        return self.features_first if k == 1 else self.features_rest

    def feature_dim(self, k: int) -> int:
        return len(self.features(k))


@dataclass
class PillarBatch:
    """Gathered, decorated points for one scale.

    ``decorated`` is ``(P, N_max, D)`` with zero rows past ``counts[p]``;
    ``point_ids`` holds the source point index of each row (``-1`` padding).
    ``indices`` are the ``(row, col)`` cells, sorted row-major.
    """

    scale: int
    decorated: np.ndarray
    counts: np.ndarray
    indices: np.ndarray
    point_ids: np.ndarray
    centers: np.ndarray

    def __len__(self):
        return len(self.counts)


def grid_dims(config: VoxelConfig) -> tuple[int, int]:
    (x0, x1), (y0, y1) = config.crop.x, config.crop.y
    xs, ys = config.cell_size
    # the 1e-9 guard absorbs spans that are an exact multiple of the cell size
    # but round up by an ulp when divided
    h = math.ceil((x1 - x0) / xs - 1e-9)
    w = math.ceil((y1 - y0) / ys - 1e-9)
    return h, w


def cell_centers(indices: np.ndarray, config: VoxelConfig) -> np.ndarray:
    xs, ys = config.cell_size
    rows = indices[:, 0].astype(np.float64)
    cols = indices[:, 1].astype(np.float64)
    return np.column_stack([config.crop.x[0] + (rows + 0.5) * xs,
                            config.crop.y[0] + (cols + 0.5) * ys])


def pillar_bounds(indices: np.ndarray, k: int, config: VoxelConfig):
    """``(lo, hi)`` arrays of shape (P, 2) for the scale-``k`` pillars.

    Edges are ``origin + (cell + 0.5 -/+ k/2) * size`` so that scale-1 edges
    coincide bit-for-bit with the base grid lines.
    """
    origin = np.array([config.crop.x[0], config.crop.y[0]])
    size = np.asarray(config.cell_size, dtype=np.float64)
    idx = indices.astype(np.float64)
    return origin + (idx + (0.5 - k / 2)) * size, origin + (idx + (0.5 + k / 2)) * size


def _snap(v, origin, size, n):
    # floor division can disagree with the edge test by an ulp; fix it so the
    # base cell always matches the scale-1 range test
    i = np.floor((v - origin) / size).astype(np.int64)
    i -= v < origin + i * size
    i += v >= origin + (i + 1) * size
    return np.clip(i, 0, n - 1)


def assign_cells(cloud: PointCloud, config: VoxelConfig):
    """Per-point ``(row, col)`` and the sorted unique non-empty cells."""
    h, w = grid_dims(config)
    p = cloud.points
    if len(p) == 0:
        empty = np.zeros((0, 2), dtype=np.int64)
        return empty, empty
    (x0, x1), (y0, y1) = config.crop.x, config.crop.y
    outside = (p[:, 0] < x0) | (p[:, 0] >= x1) | (p[:, 1] < y0) | (p[:, 1] >= y1)
    if np.any(outside):
        raise ValueError(f"{int(outside.sum())} points lie outside the crop range; crop first")
    rows = _snap(p[:, 0], x0, config.cell_size[0], h)
    cols = _snap(p[:, 1], y0, config.cell_size[1], w)
    cells = np.column_stack([rows, cols])
    uniq = np.unique(rows * w + cols)
    return cells, np.column_stack([uniq // w, uniq % w])


def _members_chunk(xy, base, start, slot_map, lo, hi, radius):
    h, w = slot_map.shape
    slots_out, pids_out = [], []
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            r = base[:, 0] + dr
            c = base[:, 1] + dc
            ok = (r >= 0) & (r < h) & (c >= 0) & (c < w)
            idx = np.nonzero(ok)[0]
            slot = slot_map[r[idx], c[idx]]
            keep = slot >= 0
            idx, slot = idx[keep], slot[keep]
            pt = xy[idx]
            inside = ((pt[:, 0] >= lo[slot, 0]) & (pt[:, 0] < hi[slot, 0])
                      & (pt[:, 1] >= lo[slot, 1]) & (pt[:, 1] < hi[slot, 1]))
            slots_out.append(slot[inside])
            pids_out.append(idx[inside] + start)
    return np.concatenate(slots_out), np.concatenate(pids_out)


def pillar_members(cloud: PointCloud, cells: np.ndarray, k: int, config: VoxelConfig,
                   threads: int = 1):
    """Uncapped membership of the scale-``k`` pillars centred on ``cells``.

    Returns ``(slot, point_id)`` pairs sorted by slot, then point id.  Points
    are bucketed by base cell and only the surrounding
    ``(2r+1) x (2r+1)`` buckets (``r = k // 2 + 1``) are range-tested.
    """
    h, w = grid_dims(config)
    if len(cells) == 0 or len(cloud) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    slot_map = np.full((h, w), -1, dtype=np.int64)
    slot_map[cells[:, 0], cells[:, 1]] = np.arange(len(cells))
    base, _ = assign_cells(cloud, config)
    lo, hi = pillar_bounds(cells, k, config)
    xy = cloud.points[:, :2]
    radius = k // 2 + 1
    n = len(xy)
    threads = max(1, int(threads))
    bounds = np.linspace(0, n, threads + 1).astype(np.int64)
    jobs = [(xy[a:b], base[a:b], a, slot_map, lo, hi, radius)
            for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if threads == 1:
        parts = [_members_chunk(*j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda j: _members_chunk(*j), jobs))
    slots = np.concatenate([p[0] for p in parts])
    pids = np.concatenate([p[1] for p in parts])
    order = np.lexsort((pids, slots))
    return slots[order], pids[order]


def _subsample(slots, pids, cells, k, config):
    """Seeded per-cell uniform subsampling down to the scale's point cap."""
    cap = config.point_cap(k)
    counts = np.bincount(slots, minlength=len(cells))
    over = np.nonzero(counts > cap)[0]
    if len(over) == 0:
        return slots, pids
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    keep = np.ones(len(slots), dtype=bool)
    for s in over:
        r, c = cells[s]
        rng = np.random.default_rng([config.seed, k, int(r), int(c)])
        chosen = rng.choice(counts[s], size=cap, replace=False)
        m = np.zeros(counts[s], dtype=bool)
        m[chosen] = True
        keep[starts[s]:starts[s] + counts[s]] = m
    return slots[keep], pids[keep]


def _feature_columns(points, centers, means, names):
    cols = {
        "x": points[:, 0], "y": points[:, 1], "z": points[:, 2],
        "xc": points[:, 0] - means[:, 0], "yc": points[:, 1] - means[:, 1],
        "zc": points[:, 2] - means[:, 2],
        "xp": points[:, 0] - centers[:, 0], "yp": points[:, 1] - centers[:, 1],
        "r": points[:, 3],
    }
    return np.column_stack([cols[n] for n in names]) if names else np.zeros((len(points), 0))


def decorate(points: np.ndarray, center, k: int, features=None) -> np.ndarray:
    """Feature rows for one pillar.

    ``points`` is (n, 4); offsets ``*c`` are relative to the mean of these
    points and ``xp, yp`` to the pillar centre (z is not offset).
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        raise ValueError("cannot decorate an empty pillar")
    names = features or (FEATURES_FIRST if k == 1 else FEATURES_REST)
    mean = points[:, :3].mean(axis=0)
    n = len(points)
    return _feature_columns(points, np.broadcast_to(np.asarray(center, dtype=np.float64), (n, 2)),
                            np.broadcast_to(mean, (n, 3)), names)


def gather_pillars(cloud: PointCloud, non_empty_cells: np.ndarray, k: int,
                   config: VoxelConfig, threads: int = 1) -> PillarBatch:
    if not 1 <= k <= config.num_scales:
        raise ValueError(f"scale {k} outside [1, {config.num_scales}]")
    cells = np.asarray(non_empty_cells, dtype=np.int64).reshape(-1, 2)[:config.max_pillars]
    cap = config.point_cap(k)
    dim = config.feature_dim(k)
    slots, pids = pillar_members(cloud, cells, k, config, threads=threads)
    slots, pids = _subsample(slots, pids, cells, k, config)
    # only cells that actually gathered points become pillars
    counts_all = np.bincount(slots, minlength=len(cells))
    present = counts_all > 0
    remap = np.cumsum(present) - 1
    cells = cells[present]
    counts = counts_all[present]
    slots = remap[slots]
    centers = cell_centers(cells, config)
    p = len(cells)

    decorated = np.zeros((p, cap, dim), dtype=np.float64)
    point_ids = np.full((p, cap), -1, dtype=np.int64)
    if p:
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        rank = np.arange(len(slots)) - starts[slots]
        pts = cloud.points[pids]
        sums = np.column_stack([np.bincount(slots, weights=pts[:, i], minlength=p) for i in range(3)])
        means = sums / counts[:, None]
        feats = _feature_columns(pts, centers[slots], means[slots], config.features(k))
        decorated[slots, rank] = feats
        point_ids[slots, rank] = pids
    return PillarBatch(k, decorated, counts, cells, point_ids, centers)


def voxelize(cloud: PointCloud, config: VoxelConfig, threads: int = 1) -> list[PillarBatch]:
    """All ``K`` pillar batches for an already-cropped cloud."""
    _, cells = assign_cells(cloud, config)
    return [gather_pillars(cloud, cells, k, config, threads=threads)
            for k in range(1, config.num_scales + 1)]
