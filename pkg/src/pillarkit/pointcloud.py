"""LiDAR frame ingestion, cropping and synthetic labelled scenes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class PointCloud:
    """``points`` is an (N, 4) float64 array of x, y, z (metres) and reflectance."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 4)
        if not np.all(np.isfinite(pts[:, :3])):
            raise ValueError("point coordinates must be finite")
        self.points = pts

    def __len__(self):
        return len(self.points)

    @property
    def xyz(self):
        return self.points[:, :3]

    @property
    def reflectance(self):
        return self.points[:, 3]

    def to_bytes(self) -> bytes:
        return self.points.astype("<f4").tobytes()


@dataclass(frozen=True)
class CropRange:
    x: tuple[float, float] = (-39.68, 39.68)
    y: tuple[float, float] = (0.0, 69.12)
    z: tuple[float, float] = (-1.0, 3.0)

    def __post_init__(self):
        for axis in ("x", "y", "z"):
            lo, hi = getattr(self, axis)
            if not lo < hi:
                raise ValueError(f"crop range on {axis} needs min < max, got [{lo}, {hi}]")

    def as_array(self):
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass
class GroundTruthBox:
    """Oriented box.  At yaw 0 the length ``l`` runs along x and ``w`` along y."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]  # w, l, h
    yaw: float

    def __post_init__(self):
        self.center = tuple(float(v) for v in self.center)
        self.size = tuple(float(v) for v in self.size)
        if min(self.size) <= 0:
            raise ValueError(f"box sizes must be positive, got {self.size}")
        self.yaw = wrap_angle(float(self.yaw))

    def as_array(self):
        return np.array([*self.center, *self.size, self.yaw], dtype=np.float64)

    @classmethod
    def from_array(cls, a):
        return cls(tuple(a[:3]), tuple(a[3:6]), a[6])

    def to_csv(self) -> str:
        return ",".join(repr(float(v)) for v in self.as_array())

    @classmethod
    def from_csv(cls, line: str):
        vals = [float(v) for v in line.strip().split(",")]
        if len(vals) != 7:
            raise ValueError(f"expected 7 fields x,y,z,w,l,h,theta, got {len(vals)}")
        return cls.from_array(vals)


def wrap_angle(theta: float) -> float:
    """Map an angle into (-pi, pi]."""
    t = math.remainder(theta, 2 * math.pi)
    return math.pi if t == -math.pi else t


def load_lidar_bin(path) -> PointCloud:
    """Read a KITTI velodyne scan: consecutive little-endian f32 (x, y, z, r)."""
    buf = Path(path).read_bytes()
    if len(buf) % 16:
        raise ValueError(f"{path}: length {len(buf)} is not a multiple of 16 bytes")
    pts = np.frombuffer(buf, dtype="<f4").reshape(-1, 4).astype(np.float64)
    pts[:, 3] = np.clip(pts[:, 3], 0.0, 1.0)
    return PointCloud(pts)


def save_lidar_bin(cloud: PointCloud, path):
    Path(path).write_bytes(cloud.to_bytes())


def crop(cloud: PointCloud, rng: CropRange) -> PointCloud:
    """Keep points inside the half-open box [min, max) on every axis."""
    p = cloud.points
    keep = np.ones(len(p), dtype=bool)
    for i, (lo, hi) in enumerate((rng.x, rng.y, rng.z)):
        keep &= (p[:, i] >= lo) & (p[:, i] < hi)
    return PointCloud(p[keep])


# ---------------------------------------------------------------------------
# synthetic scenes

@dataclass
class DensityProfile:
    crop: CropRange = field(default_factory=lambda: CropRange((-5.12, 5.12), (0.0, 10.24), (-1.0, 3.0)))
    scale: float = 3000.0       # points on a box at distance d: scale / d**2
    min_points: int = 3
    clutter_points: int = 300
    box_size: tuple[float, float, float] = (1.6, 3.9, 1.56)
    size_jitter: float = 0.05
    min_separation: float = 4.5
    margin: float = 1.0
    yaw_jitter: float = 0.15


def box_point_count(box: GroundTruthBox, profile: DensityProfile) -> int:
    d2 = box.center[0] ** 2 + box.center[1] ** 2
    return max(profile.min_points, int(round(profile.scale / max(d2, 1e-6))))


def sample_box_surface(box: GroundTruthBox, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples on the four sides and the top of an oriented box."""
    w, l, h = box.size
    # faces: +x, -x (w*h each), +y, -y (l*h each), top (w*l)
    areas = np.array([w * h, w * h, l * h, l * h, w * l])
    face = rng.choice(5, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=n)
    v = rng.uniform(-0.5, 0.5, size=n)
    local = np.empty((n, 3))
    local[:, 0] = np.select([face == 0, face == 1], [0.5 * l, -0.5 * l], u * l)
    local[:, 1] = np.select([face == 2, face == 3, face == 4], [0.5 * w, -0.5 * w, v * w], u * w)
    local[:, 2] = np.where(face == 4, 0.5 * h, v * h)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    out = np.empty_like(local)
    out[:, 0] = c * local[:, 0] - s * local[:, 1] + box.center[0]
    out[:, 1] = s * local[:, 0] + c * local[:, 1] + box.center[1]
    out[:, 2] = local[:, 2] + box.center[2]
    return out


def _random_boxes(rng, n_boxes, profile):
    cr = profile.crop
    boxes = []
    tries = 0
    while len(boxes) < n_boxes:
        tries += 1
        if tries > 1000:
            raise RuntimeError("could not place non-overlapping boxes; enlarge the crop range")
        x = rng.uniform(cr.x[0] + profile.margin, cr.x[1] - profile.margin)
        y = rng.uniform(cr.y[0] + profile.margin + 1.0, cr.y[1] - profile.margin)
        if any(math.hypot(x - b.center[0], y - b.center[1]) < profile.min_separation for b in boxes):
            continue
        size = np.array(profile.box_size) * (1 + rng.uniform(-profile.size_jitter, profile.size_jitter, 3))
        yaw = rng.choice([0.0, 0.5 * math.pi, -0.5 * math.pi, math.pi]) + rng.uniform(-1, 1) * profile.yaw_jitter
        z = cr.z[0] + size[2] / 2
        boxes.append(GroundTruthBox((x, y, z), tuple(size), yaw))
    return boxes


def synth_scene(seed: int, n_boxes: int, density_profile: DensityProfile | None = None,
                boxes: list[GroundTruthBox] | None = None):
    """Labelled toy scene: box surfaces with 1/d**2 density plus ground clutter.

    Pass ``boxes`` to place objects explicitly (``n_boxes`` is then ignored).
    Returns ``(PointCloud, boxes)`` with every point inside the profile's crop.
    """
    if n_boxes < 0:
        raise ValueError("n_boxes must be non-negative")
    prof = density_profile or DensityProfile()
    rng = np.random.default_rng(seed)
    if boxes is None:
        boxes = _random_boxes(rng, n_boxes, prof)
    chunks = []
    for i, box in enumerate(boxes):
        brng = np.random.default_rng([seed, i + 1])
        n = box_point_count(box, prof)
        xyz = sample_box_surface(box, n, brng)
        r = brng.uniform(0.2, 1.0, size=(n, 1))
        chunks.append(np.hstack([xyz, r]))
    cr = prof.crop
    m = prof.clutter_points
    clutter = np.column_stack([
        rng.uniform(cr.x[0], cr.x[1], m),
        rng.uniform(cr.y[0], cr.y[1], m),
        cr.z[0] + rng.uniform(0.0, 0.2, m),
        rng.uniform(0.0, 0.3, m),
    ])
    chunks.append(clutter)
    cloud = crop(PointCloud(np.vstack(chunks)), cr)
    return cloud, list(boxes)
