"""Stateful layers wrapping the functional ops.

A layer owns ``params`` and ``grads`` dicts of numpy arrays, caches what its
backward needs during ``forward``, and accumulates into ``grads`` on
``backward``.  Composition is manual: callers run forwards in order and
backwards in reverse.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops


class Module:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.children: dict[str, Module] = {}

    def add_param(self, name, value):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def add_child(self, name, module):
        self.children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        for k, v in self.params.items():
            yield prefix + k, v, self.grads[k]
        for cname, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def param_dict(self) -> dict[str, np.ndarray]:
        return {name: p for name, p, _ in self.named_parameters()}

    def grad_dict(self) -> dict[str, np.ndarray]:
        return {name: g for name, _, g in self.named_parameters()}

    def zero_grad(self):
        for _, _, g in self.named_parameters():
            g.fill(0)

    def num_parameters(self) -> int:
        return sum(p.size for _, p, _ in self.named_parameters())

    def set_train(self, train: bool):
        for child in self.children.values():
            child.set_train(train)

    def astype(self, dtype):
        """Cast every parameter (and buffer) in place to ``dtype``."""
        for k in list(self.params):
            self.params[k] = self.params[k].astype(dtype)
            self.grads[k] = np.zeros_like(self.params[k])
        for child in self.children.values():
            child.astype(dtype)
        return self


class Linear(Module):
    def __init__(self, d_in, d_out, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / d_in)
        self.add_param("weight", (rng.standard_normal((d_in, d_out)) * std).astype(dtype))
        self.add_param("bias", np.zeros(d_out, dtype=dtype))

    def forward(self, x):
        out, self._cache = ops.linear_forward(x, self.params["weight"], self.params["bias"])
        return ops.check_finite(out, "linear output")

    def backward(self, dout):
        dx, dw, db = ops.linear_backward(dout, self._cache)
        self.grads["weight"] += dw
        self.grads["bias"] += db
        return ops.check_finite(dx, "linear input gradient")


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel=3, stride=1, padding="same", bias=True,
                 rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / (kernel * kernel * c_in))
        self.stride = stride
        self.padding = padding
        self.add_param("weight", (rng.standard_normal((kernel, kernel, c_in, c_out)) * std).astype(dtype))
        if bias:
            self.add_param("bias", np.zeros(c_out, dtype=dtype))

    def forward(self, x):
        out, self._cache = ops.conv2d_forward(x, self.params["weight"], self.stride, self.padding)
        if "bias" in self.params:
            out = out + self.params["bias"]
        return ops.check_finite(out, "conv2d output")

    def backward(self, dout):
        dx, dw = ops.conv2d_backward(dout, self._cache)
        self.grads["weight"] += dw
        if "bias" in self.params:
            self.grads["bias"] += dout.reshape(-1, dout.shape[-1]).sum(axis=0)
        return ops.check_finite(dx, "input gradient")


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, kernel, stride, bias=True, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / c_in)
        self.stride = stride
        self.add_param("weight", (rng.standard_normal((kernel, kernel, c_in, c_out)) * std).astype(dtype))
        if bias:
            self.add_param("bias", np.zeros(c_out, dtype=dtype))

    def forward(self, x):
        out, self._cache = ops.conv_transpose2d_forward(x, self.params["weight"], self.stride)
        if "bias" in self.params:
            out = out + self.params["bias"]
        return ops.check_finite(out, "conv_transpose2d output")

    def backward(self, dout):
        dx, dw = ops.conv_transpose2d_backward(dout, self._cache)
        self.grads["weight"] += dw
        if "bias" in self.params:
            self.grads["bias"] += dout.reshape(-1, dout.shape[-1]).sum(axis=0)
        return ops.check_finite(dx, "input gradient")


class BatchNorm(Module):
    """Per-channel batch norm; ``enabled=False`` makes it the identity."""

    def __init__(self, channels, momentum=0.9, eps=1e-5, enabled=True, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.enabled = enabled
        self.train = True
        self.add_param("gamma", np.ones(channels, dtype=dtype))
        self.add_param("beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def set_train(self, train):
        self.train = train

    def astype(self, dtype):
        super().astype(dtype)
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)
        return self

    def forward(self, x):
        if not self.enabled:
            return x
        out, self._cache = ops.batchnorm_forward(
            x, self.params["gamma"], self.params["beta"], self.running_mean,
            self.running_var, self.train, self.momentum, self.eps)
        return out

    def backward(self, dout):
        if not self.enabled:
            return dout
        dx, dg, db = ops.batchnorm_backward(dout, self._cache)
        self.grads["gamma"] += dg
        self.grads["beta"] += db
        return dx


class ReLU(Module):
    def forward(self, x):
        out, self._mask = ops.relu_forward(x)
        return out

    def backward(self, dout):
        return ops.relu_backward(dout, self._mask)


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        for i, layer in enumerate(layers):
            self.add_child(str(i), layer)

    def __iter__(self):
        return iter(self.children.values())

    def __len__(self):
        return len(self.children)

    def forward(self, x):
        for layer in self:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(list(self)):
            dout = layer.backward(dout)
        return dout


def conv_bn_relu(c_in, c_out, kernel=3, stride=1, use_norm=True, rng=None, dtype=np.float32):
    return Sequential(
        Conv2d(c_in, c_out, kernel, stride, rng=rng, dtype=dtype),
        BatchNorm(c_out, enabled=use_norm, dtype=dtype),
        ReLU(),
    )
