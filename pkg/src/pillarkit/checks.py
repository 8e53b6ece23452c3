"""Finite-difference verification suite over every hand-written backward."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from .ddconv import DDConv, similarity_loss
from .encoder import PillarEncoder, gather, scatter
from .fusion import DetectionHead, FusionBackbone, FusionConfig, HeadOutput
from .numcore import (BatchNorm, Conv2d, ConvTranspose2d, Linear, check_module,
                      gradient_check)
from .numcore import ops

TIGHT = 1e-6   # linear and elementwise ops
LOOSE = 1e-4   # everything else

F64 = np.float64


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return bool(self.error < self.tolerance)

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28} err={self.error:.3e}  tol={self.tolerance:.0e}"


def _fn_check(forward, backward, inputs: dict, rng, eps=1e-5, max_entries=None, seed=0):
    """Check ``backward`` of a pure function under the loss ``sum(f(**inputs) * R)``."""
    out = forward(**inputs)
    r = rng.standard_normal(out.shape)
    grads = backward(r)

    def f():
        return float(np.sum(forward(**inputs) * r))

    return gradient_check(f, inputs, grads, eps=eps, seed=seed, max_entries=max_entries)


def check_elementwise(seed):
    rng = np.random.default_rng(seed)
    results = []
    x = rng.standard_normal((3, 4, 5))

    def relu(x):
        return ops.relu_forward(x)[0]
    mask = ops.relu_forward(x)[1]
    results.append(("relu", _fn_check(relu, lambda d: {"x": ops.relu_backward(d, mask)}, {"x": x.copy()}, rng)))

    y = ops.sigmoid(x)
    results.append(("sigmoid", _fn_check(lambda x: ops.sigmoid_forward(x)[0],
                                          lambda d: {"x": ops.sigmoid_backward(d, y)}, {"x": x.copy()}, rng)))
    y = ops.softmax(x)
    results.append(("softmax", _fn_check(lambda x: ops.softmax_forward(x)[0],
                                          lambda d: {"x": ops.softmax_backward(d, y)}, {"x": x.copy()}, rng)))
    a, b = rng.standard_normal((2, 3, 4))

    def add_back(d):
        da, db = ops.add_backward(d)
        return {"a": da, "b": db}
    results.append(("add", _fn_check(lambda a, b: ops.add_forward(a, b)[0], add_back, {"a": a, "b": b}, rng)))
    p, q = rng.standard_normal((2, 3, 2)), rng.standard_normal((2, 3, 5))
    _, cache = ops.concat_forward([p, q])

    def cat_back(d):
        dp, dq = ops.concat_backward(d, cache)
        return {"p": dp, "q": dq}
    results.append(("concat", _fn_check(lambda p, q: ops.concat_forward([p, q])[0], cat_back,
                                         {"p": p, "q": q}, rng)))
    u = rng.standard_normal((2, 3, 3, 2))
    _, ucache = ops.upsample_nearest_forward(u, 2)
    results.append(("upsample_nearest", _fn_check(lambda u: ops.upsample_nearest_forward(u, 2)[0],
                                                   lambda d: {"u": ops.upsample_nearest_backward(d, ucache)},
                                                   {"u": u}, rng)))
    pts = rng.standard_normal((4, 6, 3))
    counts = rng.integers(1, 7, size=4)
    _, mcache = ops.masked_max_forward(pts, counts)
    results.append(("masked_max", _fn_check(lambda pts: ops.masked_max_forward(pts, counts)[0],
                                             lambda d: {"pts": ops.masked_max_backward(d, mcache)},
                                             {"pts": pts}, rng)))
    vec = rng.standard_normal((3, 5))
    idx = np.array([[0, 1], [2, 2], [3, 0]])
    results.append(("scatter", _fn_check(lambda vec: scatter(vec, idx, 4, 3),
                                          lambda d: {"vec": gather(d, idx)}, {"vec": vec}, rng)))
    return [(n, e, TIGHT) for n, e in results]


def check_layers(seed):
    rng = np.random.default_rng(seed)
    out = []
    lin = Linear(3, 3, rng=rng, dtype=F64)
    lin.params["bias"][:] = rng.standard_normal(3)
    out.append(("linear", check_module(lin, rng.standard_normal((5, 3)), seed), TIGHT))
    x = rng.standard_normal((2, 5, 5, 2))
    for name, conv in [("conv2d_same", Conv2d(2, 4, 3, 1, "same", rng=rng, dtype=F64)),
                       ("conv2d_valid", Conv2d(2, 4, 3, 1, "valid", rng=rng, dtype=F64)),
                       ("conv2d_stride2", Conv2d(2, 3, 3, 2, "same", rng=rng, dtype=F64)),
                       ("conv2d_5x5_stride4", Conv2d(2, 3, 5, 4, "same", rng=rng, dtype=F64))]:
        out.append((name, check_module(conv, x, seed), LOOSE))
    out.append(("conv_transpose2d", check_module(ConvTranspose2d(2, 3, 2, 2, rng=rng, dtype=F64), x, seed), LOOSE))
    out.append(("conv_transpose2d_k3s2", check_module(ConvTranspose2d(2, 3, 3, 2, rng=rng, dtype=F64), x, seed), LOOSE))
    bn = BatchNorm(3, dtype=F64)
    bn.params["gamma"][:] = rng.uniform(0.5, 1.5, 3)
    bn.params["beta"][:] = rng.standard_normal(3)
    xb = rng.standard_normal((4, 5, 3)) * 2 + 1
    out.append(("batchnorm_train", check_module(bn, xb, seed), LOOSE))
    bn.set_train(False)
    bn.running_mean[:] = rng.standard_normal(3)
    bn.running_var[:] = rng.uniform(0.5, 2, 3)
    out.append(("batchnorm_eval", check_module(bn, xb, seed), LOOSE))
    return out


def check_encoder(seed):
    rng = np.random.default_rng(seed)
    enc = PillarEncoder(9, 16, use_norm=False, rng=rng, dtype=F64)
    enc.linear.params["bias"][:] = rng.standard_normal(16) * 0.1
    counts = rng.integers(1, 6, size=5)
    dec = rng.standard_normal((5, 6, 9))
    dec[np.arange(6)[None, :] >= counts[:, None]] = 0
    r = rng.standard_normal((5, 16))
    enc.zero_grad()
    enc.forward(dec, counts)
    ddec = enc.backward(r)

    def f():
        return float(np.sum(enc.forward(dec, counts) * r))

    params = dict(enc.param_dict(), decorated=dec)
    analytic = dict({k: v.copy() for k, v in enc.grad_dict().items()}, decorated=ddec)
    return [("encoder", gradient_check(f, params, analytic, seed=seed), LOOSE)]


def check_ddconv(seed):
    rng = np.random.default_rng(seed)
    layer = DDConv(4, 5, kernel=3, num_bases=3, rng=rng, dtype=F64)
    layer.params["bases"][:] = rng.standard_normal(layer.params["bases"].shape) * 0.3
    for c in (layer.coeff1, layer.coeff2):
        c.params["bias"][:] = rng.standard_normal(c.params["bias"].shape) * 0.1
    x = rng.standard_normal((6, 6, 4))
    err = check_module(layer, x, seed)
    v = rng.standard_normal((3, 2, 2, 3))
    _, g = similarity_loss(v)
    err_sim = gradient_check(lambda: similarity_loss(v)[0], {"v": v}, {"v": g}, seed=seed)
    return [("ddconv", err, LOOSE), ("similarity_loss", err_sim, LOOSE)]


TOY_FUSION = FusionConfig(base_stride=2, blocks=((1, 3, 4), (2, 5, 4), (4, 5, 4)),
                          in_channels=4, upsample_channels=4, num_scales=3, use_norm=False)


def check_fusion(seed, max_entries=8):
    rng = np.random.default_rng(seed)
    net = FusionBackbone(TOY_FUSION, rng=rng, dtype=F64)
    for name, p, _ in net.named_parameters():
        if name.endswith("bias"):
            p[:] = rng.standard_normal(p.shape) * 0.1
    maps = [rng.standard_normal((16, 16, 4)) for _ in range(3)]
    out = net.forward(maps)
    r = rng.standard_normal(out.shape)
    net.zero_grad()
    dmaps = net.backward(r)

    def f():
        return float(np.sum(net.forward(maps) * r))

    params = net.param_dict()
    analytic = {k: v.copy() for k, v in net.grad_dict().items()}
    for i, m in enumerate(maps):
        params[f"map{i}"] = m
        analytic[f"map{i}"] = dmaps[i]
    return [("fusion_toy", gradient_check(f, params, analytic, seed=seed, max_entries=max_entries), LOOSE)]


def check_total_loss(seed):
    rng = np.random.default_rng(seed)
    head = DetectionHead(6, anchors=2, use_ddconv=True, num_bases=3, rng=rng, dtype=F64)
    for layer in head.dynamic_layers():
        layer.params["bases"][:] = rng.standard_normal(layer.params["bases"].shape) * 0.3
    feats = rng.standard_normal((4, 4, 6))
    n = 4 * 4 * 2
    labels = rng.choice([0, 1, losses.NEGATIVE, losses.IGNORED], size=n, p=[0.2, 0.2, 0.4, 0.2])
    tg = losses.Targets(labels, rng.standard_normal((n, 7)) * 0.5, rng.integers(0, 2, n))
    weights = losses.LossWeights()

    def run():
        out = head.forward(feats)
        bases = [l.params["bases"] for l in head.dynamic_layers()]
        return out, losses.total_loss(out.box, out.cls, out.dir, tg, bases, weights)

    head.zero_grad()
    _, (parts, g, dbases) = run()
    for layer, db in zip(head.dynamic_layers(), dbases):
        layer.grads["bases"] += db
    dfeat = head.backward(HeadOutput(*g))

    def f():
        return run()[1][0].total

    params = dict(head.param_dict(), features=feats)
    analytic = dict({k: v.copy() for k, v in head.grad_dict().items()}, features=dfeat)
    return [("total_loss", gradient_check(f, params, analytic, seed=seed, max_entries=40), LOOSE)]


SUITE = (check_elementwise, check_layers, check_encoder, check_ddconv, check_fusion, check_total_loss)


def run_suite(seed: int = 0) -> list[CheckResult]:
    results = []
    for fn in SUITE:
        for name, err, tol in fn(seed):
            results.append(CheckResult(name, float(err), tol))
    return results
