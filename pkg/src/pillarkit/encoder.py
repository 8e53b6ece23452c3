"""Per-scale pillar feature encoder and scatter into dense BEV maps."""
from __future__ import annotations

import numpy as np

from .numcore import BatchNorm, Linear, Module
from .numcore import ops


def scatter(vectors: np.ndarray, indices: np.ndarray, h: int, w: int,
            batch_index: np.ndarray | None = None, batch_size: int | None = None) -> np.ndarray:
    """Place pillar vectors at their cells of a zero ``(H, W, C)`` map.

    With ``batch_index`` the output is ``(N, H, W, C)`` and each vector goes
    to frame ``batch_index[p]``.
    """
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, 2)
    c = vectors.shape[-1]
    if len(indices) != len(vectors):
        raise ValueError("one index per vector required")
    if len(indices) and (indices.min() < 0 or np.any(indices[:, 0] >= h) or np.any(indices[:, 1] >= w)):
        raise ValueError("scatter index out of range")
    if batch_index is None:
        flat = indices[:, 0] * w + indices[:, 1]
        shape = (h, w, c)
    else:
        batch_index = np.asarray(batch_index, dtype=np.int64)
        n = batch_size if batch_size is not None else (int(batch_index.max()) + 1 if len(batch_index) else 1)
        flat = (batch_index * h + indices[:, 0]) * w + indices[:, 1]
        shape = (n, h, w, c)
    if len(np.unique(flat)) != len(flat):
        raise ValueError("duplicate scatter index")
    out = np.zeros((int(np.prod(shape[:-1])), c), dtype=vectors.dtype)
    out[flat] = vectors
    return out.reshape(shape)


def gather(dense: np.ndarray, indices: np.ndarray, batch_index: np.ndarray | None = None) -> np.ndarray:
    """Inverse of :func:`scatter` at the listed positions (also its backward)."""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, 2)
    if batch_index is None:
        return dense[indices[:, 0], indices[:, 1]]
    return dense[np.asarray(batch_index, dtype=np.int64), indices[:, 0], indices[:, 1]]


class PillarEncoder(Module):
    """Linear to ``channels`` -> batch norm -> ReLU -> max over valid points.

    Batch-norm statistics are taken over valid (non-padding) points only.
    """

    def __init__(self, d_in, channels=64, use_norm=True, rng=None, dtype=np.float32):
        super().__init__()
        self.d_in = d_in
        self.linear = self.add_child("linear", Linear(d_in, channels, rng=rng, dtype=dtype))
        self.norm = self.add_child("norm", BatchNorm(channels, enabled=use_norm, dtype=dtype))

    def forward(self, decorated, counts):
        p, n, d = decorated.shape
        if d != self.d_in:
            raise ValueError(f"encoder expects {self.d_in} features per point, got {d}")
        counts = np.asarray(counts, dtype=np.int64)
        valid = np.arange(n)[None, :] < counts[:, None]
        rows = decorated[valid].astype(self.linear.params["weight"].dtype, copy=False)
        h = self.linear.forward(rows)
        h = self.norm.forward(h)
        h, self._relu = ops.relu_forward(h)
        full = np.zeros((p, n, h.shape[-1]), dtype=h.dtype)
        full[valid] = h
        out, self._pool = ops.masked_max_forward(full, counts)
        self._valid = valid
        return out

    def backward(self, dout):
        dfull = ops.masked_max_backward(dout, self._pool)
        dh = ops.relu_backward(dfull[self._valid], self._relu)
        dh = self.norm.backward(dh)
        drows = self.linear.backward(dh)
        ddec = np.zeros(self._valid.shape + (self.d_in,), dtype=drows.dtype)
        ddec[self._valid] = drows
        return ddec


class MultiScaleEncoder(Module):
    """One independent encoder per scale (input widths differ between scales)."""

    def __init__(self, dims, channels=64, use_norm=True, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.encoders = [self.add_child(f"scale{k + 1}", PillarEncoder(d, channels, use_norm, rng, dtype))
                         for k, d in enumerate(dims)]

    def forward(self, batches, h, w, batch_index=None, batch_size=None):
        """Encode every scale and scatter it; returns the list of dense maps."""
        self._ctx = []
        maps = []
        for enc, b in zip(self.encoders, batches):
            bidx = None if batch_index is None else batch_index[b.scale - 1]
            if len(b):
                vec = enc.forward(b.decorated, b.counts)
            else:
                vec = np.zeros((0, enc.linear.params["weight"].shape[1]), dtype=enc.linear.params["weight"].dtype)
            self._ctx.append((b.indices, bidx, len(b)))
            maps.append(scatter(vec, b.indices, h, w, bidx, batch_size))
        return maps

    def backward(self, dmaps):
        for enc, dm, (idx, bidx, p) in zip(self.encoders, dmaps, self._ctx):
            if p:
                enc.backward(gather(dm, idx, bidx))
