"""Decomposable dynamic convolution.

The kernel applied at output position ``[i, j]`` is

    W'_s + sum_m C[i, j, m] * v_m

where ``W'_s`` is a shared kernel, ``v_1..v_M`` are learned basis kernels and
``C`` is an ``h x w x M`` coefficient map regressed from the input by a small
bottleneck network of two 1x1 convolutions.

Because convolution is linear in the kernel, the forward pass never builds
per-position kernels: it convolves the input once with the shared kernel and
once with the stacked bases, then mixes the basis responses with ``C``.
"""
from __future__ import annotations

import numpy as np

from .numcore import Conv2d, Module
from .numcore import ops


def combine(coeffs: np.ndarray, bases: np.ndarray) -> np.ndarray:
    """Materialize per-position dynamic kernels ``W_d[i, j] = sum_m C[i,j,m] v_m``.

    ``coeffs`` is (h, w, M) and ``bases`` (M, s, s, c, c'); the result is
    (h, w, s, s, c, c').  Only used for inspection and oracles.
    """
    if coeffs.shape[-1] != bases.shape[0]:
        raise ValueError(f"{coeffs.shape[-1]} coefficients for {bases.shape[0]} bases")
    return np.tensordot(coeffs, bases, axes=([-1], [0]))


def similarity_loss(bases: np.ndarray):
    """Mean absolute pairwise cosine of the bases and its gradient.

    ``(1/M) * sum_{i<j} |v_i . v_j| / (|v_i| |v_j|)``.  Returns ``(loss, dbases)``.
    """
    m = bases.shape[0]
    if m < 2:
        raise ValueError("similarity loss needs at least two bases")
    flat = bases.reshape(m, -1)
    gram = np.einsum("ik,jk->ij", flat, flat)
    sq = np.diag(gram)
    if np.any(sq == 0):
        raise ValueError("zero-norm basis")
    # dividing the gram matrix by sqrt(|v_i|^2 |v_j|^2) keeps identical
    # bases at a cosine of exactly one
    cos = gram / np.sqrt(np.outer(sq, sq))
    norms = np.sqrt(sq)
    unit = flat / norms[:, None]
    iu = np.triu_indices(m, 1)
    loss = np.abs(cos[iu]).sum() / m
    # d|cos_ij|/dv_i = sign(cos_ij) * (u_j - cos_ij u_i) / |v_i|
    sgn = np.sign(cos)
    np.fill_diagonal(sgn, 0.0)
    a = sgn @ unit  # sum_j sgn_ij u_j
    b = (sgn * cos).sum(axis=1)
    grad = (a - b[:, None] * unit) / norms[:, None] / m
    return float(loss), grad.reshape(bases.shape)


def mean_abs_cosine(bases: np.ndarray) -> float:
    m = bases.shape[0]
    flat = bases.reshape(m, -1)
    gram = np.einsum("ik,jk->ij", flat, flat)
    sq = np.diag(gram)
    iu = np.triu_indices(m, 1)
    return float(np.abs((gram / np.sqrt(np.outer(sq, sq)))[iu]).mean())


def param_count(s: int, c: int, c_out: int, h: int, w: int, m: int) -> dict:
    """Element counts of the generated filters, plus the per-position baseline.

    ``dynamic_basis = s*s*c*c'*M``; ``dynamic_total`` adds the ``h*w*M``
    coefficients; ``shared = s*s*c*c'``; ``generated_total`` is their sum.
    ``per_position`` is the size of fully position-dependent kernels
    ``s*s*c*c'*h*w``.
    """
    k = s * s * c * c_out
    dynamic_basis = k * m
    dynamic_total = dynamic_basis + h * w * m
    return {
        "dynamic_basis": dynamic_basis,
        "dynamic_total": dynamic_total,
        "shared": k,
        "generated_total": k + dynamic_total,
        "per_position": k * h * w,
    }


def memory_ratio(s: int, c: int, c_out: int, h: int, w: int, m: int) -> float:
    """Generated-filter memory relative to per-position kernels:
    ``(M+1)/(h*w) + M/(s*s*c*c')``."""
    return (m + 1) / (h * w) + m / (s * s * c * c_out)


class DDConv(Module):
    """Stride-1, same-padded dynamic convolution with an optional output bias."""

    def __init__(self, c_in, c_out, kernel=3, num_bases=3, bottleneck=None, bias=True,
                 basis_std=0.05, rng=None, dtype=np.float32):
        super().__init__()
        if num_bases < 1:
            raise ValueError("need at least one basis")
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out, self.kernel, self.num_bases = c_in, c_out, kernel, num_bases
        b = bottleneck or max(8, c_in // 8)
        std = np.sqrt(2.0 / (kernel * kernel * c_in))
        self.add_param("shared", (rng.standard_normal((kernel, kernel, c_in, c_out)) * std).astype(dtype))
        self.add_param("bases", (rng.standard_normal((num_bases, kernel, kernel, c_in, c_out)) * basis_std).astype(dtype))
        if bias:
            self.add_param("bias", np.zeros(c_out, dtype=dtype))
        self.coeff1 = self.add_child("coeff1", Conv2d(c_in, b, 1, rng=rng, dtype=dtype))
        self.coeff2 = self.add_child("coeff2", Conv2d(b, num_bases, 1, rng=rng, dtype=dtype))
        self.coeff_override = None  # fixed coefficient map, bypasses the network

    def coefficients(self, x):
        """Raw (unactivated) coefficient map, shape (..., h, w, M)."""
        if x.shape[-1] != self.c_in:
            raise ValueError(f"channel mismatch: input has {x.shape[-1]}, layer expects {self.c_in}")
        h = self.coeff1.forward(x)
        h, self._cmask = ops.relu_forward(h)
        return self.coeff2.forward(h)

    def _stacked_bases(self):
        v = self.params["bases"]  # (M, s, s, c, c')
        return v.transpose(1, 2, 3, 0, 4).reshape(self.kernel, self.kernel, self.c_in, -1)

    def forward(self, x):
        if x.shape[-1] != self.c_in:
            raise ValueError(f"channel mismatch: input has {x.shape[-1]}, layer expects {self.c_in}")
        ops.check_finite(x, "ddconv input")
        if self.coeff_override is None:
            coeffs = self.coefficients(x)
        else:
            coeffs = np.broadcast_to(self.coeff_override, x.shape[:-1] + (self.num_bases,))
        self.last_coefficients = coeffs
        shared_out, self._shared_cache = ops.conv2d_forward(x, self.params["shared"], 1, "same")
        resp, self._basis_cache = ops.conv2d_forward(x, self._stacked_bases(), 1, "same")
        resp = resp.reshape(resp.shape[:-1] + (self.num_bases, self.c_out))
        dynamic = np.einsum("...m,...mo->...o", coeffs, resp)
        self._coeffs, self._resp = coeffs, resp
        out = shared_out + dynamic
        if "bias" in self.params:
            out = out + self.params["bias"]
        return ops.check_finite(out, "ddconv output")

    def backward(self, dout):
        ops.check_finite(dout, "ddconv output gradient")
        if "bias" in self.params:
            self.grads["bias"] += dout.reshape(-1, self.c_out).sum(axis=0)
        dx, dw = ops.conv2d_backward(dout, self._shared_cache)
        self.grads["shared"] += dw
        dresp = self._coeffs[..., :, None] * dout[..., None, :]
        dresp = dresp.reshape(dresp.shape[:-2] + (-1,))
        dx2, dstack = ops.conv2d_backward(dresp, self._basis_cache)
        s = self.kernel
        self.grads["bases"] += dstack.reshape(s, s, self.c_in, self.num_bases, self.c_out).transpose(3, 0, 1, 2, 4)
        dx = dx + dx2
        if self.coeff_override is None:
            dcoeff = np.einsum("...mo,...o->...m", self._resp, dout)
            dh = self.coeff2.backward(dcoeff)
            dh = ops.relu_backward(dh, self._cmask)
            dx = dx + self.coeff1.backward(dh)
        return dx

    def similarity(self):
        return similarity_loss(self.params["bases"])

    def allocated_counts(self, h, w) -> dict:
        """Element counts of the buffers this layer actually holds for an h x w map."""
        return {
            "shared": self.params["shared"].size,
            "dynamic_basis": self.params["bases"].size,
            "coefficients": h * w * self.num_bases,
        }
