"""Box residual coding, anchor assignment and the detection training loss."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numcore.ops import sigmoid, softmax
from .pointcloud import GroundTruthBox

NEGATIVE = -1
IGNORED = -2


@dataclass(frozen=True)
class Anchor:
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # w, l, h
    yaw: float

    def __post_init__(self):
        if min(self.size) <= 0:
            raise ValueError("anchor sizes must be positive")

    def as_array(self):
        return np.array([*self.center, *self.size, self.yaw], dtype=np.float64)


@dataclass(frozen=True)
class LossWeights:
    loc: float = 2.0
    cls: float = 1.0
    dir: float = 0.2
    alpha: float = 0.25
    gamma: float = 2.0
    sim: float = 0.1

    def __post_init__(self):
        if min(self.loc, self.cls, self.dir, self.alpha, self.gamma, self.sim) < 0:
            raise ValueError("loss weights must be non-negative")


# ---------------------------------------------------------------------------
# residual coding

def encode_boxes(gt: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Vectorized residuals for (n, 7) ground truths against (n, 7) anchors."""
    gt = np.asarray(gt, dtype=np.float64)
    a = np.asarray(anchors, dtype=np.float64)
    if np.any(gt[..., 3:6] <= 0):
        raise ValueError("ground-truth sizes must be positive")
    if np.any(a[..., 3:6] <= 0):
        raise ValueError("anchor sizes must be positive")
    diag = np.sqrt(a[..., 3] ** 2 + a[..., 4] ** 2)
    return np.stack([
        (gt[..., 0] - a[..., 0]) / diag,
        (gt[..., 1] - a[..., 1]) / diag,
        (gt[..., 2] - a[..., 2]) / a[..., 5],
        np.log(gt[..., 3] / a[..., 3]),
        np.log(gt[..., 4] / a[..., 4]),
        np.log(gt[..., 5] / a[..., 5]),
        np.sin(gt[..., 6] - a[..., 6]),
    ], axis=-1)


def decode_boxes(res: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    res = np.asarray(res, dtype=np.float64)
    a = np.asarray(anchors, dtype=np.float64)
    if np.any(np.abs(res[..., 6]) > 1):
        raise ValueError("angle residual is a sine and must lie in [-1, 1]")
    diag = np.sqrt(a[..., 3] ** 2 + a[..., 4] ** 2)
    return np.stack([
        res[..., 0] * diag + a[..., 0],
        res[..., 1] * diag + a[..., 1],
        res[..., 2] * a[..., 5] + a[..., 2],
        np.exp(res[..., 3]) * a[..., 3],
        np.exp(res[..., 4]) * a[..., 4],
        np.exp(res[..., 5]) * a[..., 5],
        a[..., 6] + np.arcsin(res[..., 6]),
    ], axis=-1)


def encode_residuals(gt: GroundTruthBox, a: Anchor) -> np.ndarray:
    """``(dx, dy, dz, dw, dl, dh, dtheta)`` of ``gt`` relative to ``a``."""
    return encode_boxes(gt.as_array(), a.as_array())


def decode_residuals(r, a: Anchor) -> GroundTruthBox:
    return GroundTruthBox.from_array(decode_boxes(np.asarray(r), a.as_array()))


# ---------------------------------------------------------------------------
# elementwise losses, each returning (value, derivative)

def smooth_l1(x):
    x = np.asarray(x, dtype=np.float64) if np.isscalar(x) else x
    ax = np.abs(x)
    small = ax < 1.0
    val = np.where(small, 0.5 * x * x, ax - 0.5)
    grad = np.where(small, x, np.sign(x))
    return val, grad


def focal_loss(p, is_positive, alpha=0.25, gamma=2.0):
    """Two-sided focal loss on probabilities (clamped to [1e-7, 1 - 1e-7])."""
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-7, 1 - 1e-7)
    pos = np.asarray(is_positive, dtype=bool)
    return np.where(pos, -alpha * (1 - p) ** gamma * np.log(p),
                    -(1 - alpha) * p ** gamma * np.log(1 - p))


def focal_loss_logits(x, is_positive, alpha=0.25, gamma=2.0):
    """Focal loss of ``sigmoid(x)`` and its derivative with respect to ``x``."""
    p = np.clip(sigmoid(x), 1e-7, 1 - 1e-7)
    pos = np.asarray(is_positive, dtype=bool)
    val = np.where(pos, -alpha * (1 - p) ** gamma * np.log(p),
                   -(1 - alpha) * p ** gamma * np.log(1 - p))
    grad = np.where(pos, alpha * (1 - p) ** gamma * (gamma * p * np.log(p) - (1 - p)),
                    -(1 - alpha) * p ** gamma * (gamma * (1 - p) * np.log(1 - p) - p))
    return val, grad


def direction_target(theta):
    return (np.asarray(theta) >= 0).astype(np.int64)


def direction_loss(logits, theta_gt):
    """Softmax cross-entropy over two direction bins (bin 1 iff theta >= 0)."""
    return softmax_cross_entropy(logits, direction_target(theta_gt))


def softmax_cross_entropy(logits, t):
    logits = np.asarray(logits, dtype=np.float64)
    t = np.asarray(t, dtype=np.int64)
    z = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=-1))
    val = logz - np.take_along_axis(z, t[..., None], axis=-1)[..., 0]
    grad = softmax(logits, axis=-1)
    np.put_along_axis(grad, t[..., None], np.take_along_axis(grad, t[..., None], axis=-1) - 1.0, axis=-1)
    return val, grad


# ---------------------------------------------------------------------------
# anchors and assignment

def make_anchors(h: int, w: int, origin, cell, size=(1.6, 3.9, 1.56), z=-1.0,
                 yaws=(0.0, math.pi / 2)) -> np.ndarray:
    """Anchor grid of shape (h, w, len(yaws), 7) centred on head cells.

    ``cell`` is the metric footprint of one head position (base cell size
    times the backbone stride).
    """
    xs = origin[0] + (np.arange(h) + 0.5) * cell[0]
    ys = origin[1] + (np.arange(w) + 0.5) * cell[1]
    a = np.zeros((h, w, len(yaws), 7))
    a[..., 0] = xs[:, None, None]
    a[..., 1] = ys[None, :, None]
    a[..., 2] = z
    a[..., 3:6] = size
    a[..., 6] = np.asarray(yaws)
    return a


def bev_rects(boxes: np.ndarray) -> np.ndarray:
    """Axis-aligned BEV footprints ``(x0, y0, x1, y1)``; boxes are snapped to
    the nearest axis orientation first."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    sideways = np.abs(np.sin(boxes[:, 6])) > np.abs(np.cos(boxes[:, 6]))
    ext_x = np.where(sideways, boxes[:, 3], boxes[:, 4])
    ext_y = np.where(sideways, boxes[:, 4], boxes[:, 3])
    return np.column_stack([boxes[:, 0] - ext_x / 2, boxes[:, 1] - ext_y / 2,
                            boxes[:, 0] + ext_x / 2, boxes[:, 1] + ext_y / 2])


def bev_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise axis-aligned BEV IoU between (n, 7) and (m, 7) boxes."""
    ra, rb = bev_rects(a), bev_rects(b)
    ix = np.clip(np.minimum(ra[:, None, 2], rb[None, :, 2]) - np.maximum(ra[:, None, 0], rb[None, :, 0]), 0, None)
    iy = np.clip(np.minimum(ra[:, None, 3], rb[None, :, 3]) - np.maximum(ra[:, None, 1], rb[None, :, 1]), 0, None)
    inter = ix * iy
    area_a = (ra[:, 2] - ra[:, 0]) * (ra[:, 3] - ra[:, 1])
    area_b = (rb[:, 2] - rb[:, 0]) * (rb[:, 3] - rb[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def assign_targets(anchors: np.ndarray, gts: np.ndarray, pos_iou=0.6, neg_iou=0.45) -> np.ndarray:
    """Per-anchor label: gt index if positive, ``NEGATIVE`` or ``IGNORED``.

    Positive when IoU >= ``pos_iou`` or when the anchor is a ground truth's
    best match; negative when the best IoU is below ``neg_iou``.
    """
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 7)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 7)
    labels = np.full(len(anchors), NEGATIVE, dtype=np.int64)
    if len(gts) == 0 or len(anchors) == 0:
        return labels
    iou = bev_iou(anchors, gts)
    best_gt = iou.argmax(axis=1)
    best = iou[np.arange(len(anchors)), best_gt]
    labels[best >= neg_iou] = IGNORED
    labels[best >= pos_iou] = best_gt[best >= pos_iou]
    for g in range(len(gts)):
        a = int(iou[:, g].argmax())
        if iou[a, g] > 0:
            labels[a] = g
    return labels


@dataclass
class Targets:
    """Flattened per-anchor training targets."""

    labels: np.ndarray     # (T,) gt index, NEGATIVE or IGNORED
    residuals: np.ndarray  # (T, 7), valid where labels >= 0
    direction: np.ndarray  # (T,) bin, valid where labels >= 0

    @property
    def num_positive(self):
        return int((self.labels >= 0).sum())


def build_targets(anchors: np.ndarray, gts: np.ndarray) -> Targets:
    flat = np.asarray(anchors, dtype=np.float64).reshape(-1, 7)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 7)
    labels = assign_targets(flat, gts)
    res = np.zeros((len(flat), 7))
    direc = np.zeros(len(flat), dtype=np.int64)
    pos = labels >= 0
    if pos.any():
        res[pos] = encode_boxes(gts[labels[pos]], flat[pos])
        direc[pos] = direction_target(gts[labels[pos], 6])
    return Targets(labels, res, direc)


def stack_targets(ts: list[Targets]) -> Targets:
    return Targets(np.concatenate([t.labels for t in ts]),
                   np.concatenate([t.residuals for t in ts]),
                   np.concatenate([t.direction for t in ts]))


# ---------------------------------------------------------------------------
# total loss

@dataclass
class LossBreakdown:
    """Weighted contributions; ``total = loc + cls + dir + sim``."""

    loc: float
    cls: float
    dir: float
    sim: float
    total: float
    num_positive: int

    def csv_row(self, step: int) -> str:
        return f"{step},{self.loc!r},{self.cls!r},{self.dir!r},{self.sim!r},{self.total!r}"


CSV_HEADER = "step,loc,cls,dir,sim,total"


def total_loss(box, cls, dirs, targets: Targets, bases=(), weights: LossWeights = LossWeights(),
               box_size: int = 7, dir_bins: int = 2):
    """Detection loss ``(b_loc L_loc + b_cls L_cls + b_dir L_dir) / N_pos``
    plus ``lambda_sim`` times the basis similarity of every dynamic layer.

    ``box``, ``cls`` and ``dirs`` are raw head outputs whose flattening matches
    ``targets``.  Returns ``(LossBreakdown, (dbox, dcls, ddir), dbases)``.
    """
    from .ddconv import similarity_loss

    pb = box.reshape(-1, box_size).astype(np.float64)
    pc = cls.reshape(-1).astype(np.float64)
    pd = dirs.reshape(-1, dir_bins).astype(np.float64)
    labels = targets.labels
    if not (len(pb) == len(pc) == len(pd) == len(labels)):
        raise ValueError("head outputs and targets disagree on the number of anchors")
    pos = labels >= 0
    cared = labels != IGNORED
    n_pos = max(int(pos.sum()), 1)

    diff = pb - targets.residuals
    sl, dsl = smooth_l1(diff)
    loc = float((sl * pos[:, None]).sum())
    fl, dfl = focal_loss_logits(pc, pos, weights.alpha, weights.gamma)
    cls_l = float((fl * cared).sum())
    dl, ddl = softmax_cross_entropy(pd, targets.direction)
    dir_l = float((dl * pos).sum())

    dbox = (weights.loc / n_pos) * dsl * pos[:, None]
    dcls = (weights.cls / n_pos) * dfl * cared
    ddir = (weights.dir / n_pos) * ddl * pos[:, None]

    sim = 0.0
    dbases = []
    for v in bases:
        s, g = similarity_loss(v)
        sim += s
        dbases.append(weights.sim * g)
    parts = LossBreakdown(
        loc=weights.loc * loc / n_pos,
        cls=weights.cls * cls_l / n_pos,
        dir=weights.dir * dir_l / n_pos,
        sim=weights.sim * sim,
        total=0.0,
        num_positive=int(pos.sum()),
    )
    parts.total = parts.loc + parts.cls + parts.dir + parts.sim
    grads = (dbox.reshape(box.shape).astype(box.dtype),
             dcls.reshape(cls.shape).astype(cls.dtype),
             ddir.reshape(dirs.shape).astype(dirs.dtype))
    return parts, grads, dbases
