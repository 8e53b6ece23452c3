"""Independent, deliberately slow reference implementations used by the tests."""
import numpy as np


def naive_conv2d(x, w, stride=1, padding="same"):
    """Triple-loop cross-correlation on an (H, W, C) input."""
    h, wd, c = x.shape
    s = w.shape[0]
    if padding == "same":
        ho, wo = -(-h // stride), -(-wd // stride)
        th = max((ho - 1) * stride + s - h, 0)
        tw = max((wo - 1) * stride + s - wd, 0)
        top, left = th // 2, tw // 2
    else:
        ho, wo = (h - s) // stride + 1, (wd - s) // stride + 1
        top = left = 0
    out = np.zeros((ho, wo, w.shape[3]))
    for i in range(ho):
        for j in range(wo):
            for a in range(s):
                for b in range(s):
                    r, q = i * stride + a - top, j * stride + b - left
                    if 0 <= r < h and 0 <= q < wd:
                        out[i, j] += x[r, q] @ w[a, b]
    return out


def per_position_conv(x, kernels):
    """Stride-1 same-padded convolution with a separate kernel at every output.

    ``kernels`` has shape (h, w, s, s, c, c').
    """
    h, wd, c = x.shape
    s = kernels.shape[2]
    pad = (s - 1) // 2
    out = np.zeros((h, wd, kernels.shape[-1]))
    for i in range(h):
        for j in range(wd):
            for a in range(s):
                for b in range(s):
                    r, q = i + a - pad, j + b - pad
                    if 0 <= r < h and 0 <= q < wd:
                        out[i, j] += x[r, q] @ kernels[i, j, a, b]
    return out


def pillar_oracle(points, x0, y0, xs, ys, h, w, k):
    """Exhaustive (point x cell) range test for one scale.

    A cell is non-empty when its unit pillar holds a point.  Returns a dict
    mapping ``(row, col)`` of every non-empty cell to the sorted ids of the
    points inside its scale-``k`` pillar.
    """
    px, py = points[:, 0], points[:, 1]
    half = (k - 1) / 2
    out = {}
    for r in range(h):
        for c in range(w):
            own = ((px >= x0 + r * xs) & (px < x0 + (r + 1) * xs)
                   & (py >= y0 + c * ys) & (py < y0 + (c + 1) * ys))
            if not own.any():
                continue
            inside = ((px >= x0 + (r - half) * xs) & (px < x0 + (r + 1 + half) * xs)
                      & (py >= y0 + (c - half) * ys) & (py < y0 + (c + 1 + half) * ys))
            out[(r, c)] = np.nonzero(inside)[0].tolist()
    return out


def decorate_oracle(pts, center, names):
    """Feature rows computed column by column from first principles."""
    mean = [sum(p[i] for p in pts) / len(pts) for i in range(3)]
    rows = []
    for p in pts:
        vals = {"x": p[0], "y": p[1], "z": p[2],
                "xc": p[0] - mean[0], "yc": p[1] - mean[1], "zc": p[2] - mean[2],
                "xp": p[0] - center[0], "yp": p[1] - center[1], "r": p[3]}
        rows.append([vals[n] for n in names])
    return np.array(rows)


def raster_iou(a, b, res=0.001):
    """BEV IoU of two axis-aligned (x0, y0, x1, y1) rectangles by pixel counting."""
    lo = np.minimum(a[:2], b[:2])
    hi = np.maximum(a[2:], b[2:])
    xs = np.arange(lo[0] + res / 2, hi[0], res)
    ys = np.arange(lo[1] + res / 2, hi[1], res)

    def inside(r):
        return ((xs >= r[0]) & (xs < r[2]))[:, None] & ((ys >= r[1]) & (ys < r[3]))[None, :]

    ia, ib = inside(a), inside(b)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


def random_cloud(rng, n_max=1000, grid_max=32):
    """Random cloud, grid geometry and a sprinkling of points on grid lines."""
    h, w = rng.integers(1, grid_max + 1, size=2)
    xs, ys = rng.uniform(0.1, 0.5, size=2)
    x0, y0 = rng.uniform(-5, 5, size=2)
    n = int(rng.integers(1, n_max + 1))
    pts = np.column_stack([x0 + rng.uniform(0, h * xs, n), y0 + rng.uniform(0, w * ys, n),
                           rng.uniform(-1, 3, n), rng.uniform(0, 1, n)])
    m = min(n, 20)
    # exact grid-line coordinates exercise the half-open edges
    pts[:m, 0] = x0 + rng.integers(0, h, m) * xs
    pts[m // 2:m, 1] = y0 + rng.integers(0, w, m - m // 2) * ys
    keep = (pts[:, 0] < x0 + h * xs) & (pts[:, 1] < y0 + w * ys)
    return pts[keep], (x0, y0, xs, ys, int(h), int(w))


def geometry_config(geom, caps=None, num_scales=3, seed=0):
    """VoxelConfig covering exactly the grid produced by :func:`random_cloud`."""
    from pillarkit.pointcloud import CropRange
    from pillarkit.voxelizer import VoxelConfig
    x0, y0, xs, ys, h, w = geom
    cr = CropRange((x0, x0 + h * xs), (y0, y0 + w * ys), (-1.0, 3.0))
    return VoxelConfig(crop=cr, cell_size=(xs, ys), num_scales=num_scales, max_points=caps,
                       max_pillars=h * w, seed=seed)
