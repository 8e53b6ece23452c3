import numpy as np
import pytest

from pillarkit.fusion import DetectionHead, FusionBackbone, FusionConfig

TOY = FusionConfig(in_channels=4, use_norm=False)


def zero_biases(module):
    for name, p, _ in module.named_parameters():
        if name.endswith("bias"):
            p[:] = 0


def test_zero_maps_give_zero_features():
    net = FusionBackbone(TOY, rng=np.random.default_rng(0), dtype=np.float64)
    zero_biases(net)
    out = net.forward([np.zeros((16, 16, 4))] * 3)
    assert out.shape == (8, 8, 384)
    assert not out.any()


def test_toy_block_shapes():
    net = FusionBackbone(TOY, rng=np.random.default_rng(1), dtype=np.float64)
    maps = [np.random.default_rng(k).standard_normal((16, 16, 4)) for k in range(3)]
    out = net.forward(maps)
    assert [b.shape for b in net.block_outputs] == [(8, 8, 64), (4, 4, 128), (2, 2, 256)]
    assert out.shape == (8, 8, 384)


def test_default_output_dims():
    cfg = FusionConfig()
    assert cfg.output_dims(496, 432)[0] == (248, 216)
    assert cfg.out_channels == 384


def test_batched_forward_matches_single():
    net = FusionBackbone(TOY, rng=np.random.default_rng(2), dtype=np.float64)
    maps = [np.random.default_rng(k).standard_normal((2, 8, 8, 4)) for k in range(3)]
    both = net.forward(maps)
    first = net.forward([m[0] for m in maps])
    np.testing.assert_allclose(both[0], first, atol=1e-12)


def test_each_scale_reaches_the_output():
    net = FusionBackbone(TOY, rng=np.random.default_rng(3), dtype=np.float64)
    base = [np.random.default_rng(k).standard_normal((16, 16, 4)) for k in range(3)]
    ref = net.forward(base)
    for k in range(3):
        maps = [m.copy() for m in base]
        maps[k] += 1.0
        assert not np.allclose(net.forward(maps), ref)


def test_backward_returns_map_gradients():
    net = FusionBackbone(TOY, rng=np.random.default_rng(4), dtype=np.float64)
    maps = [np.random.default_rng(k).standard_normal((16, 16, 4)) for k in range(3)]
    out = net.forward(maps)
    dm = net.backward(np.ones_like(out))
    assert [d.shape for d in dm] == [(16, 16, 4)] * 3


def test_shape_mismatch_rejected():
    net = FusionBackbone(TOY, rng=np.random.default_rng(5), dtype=np.float64)
    with pytest.raises(ValueError):
        net.forward([np.zeros((16, 16, 4)), np.zeros((8, 8, 4)), np.zeros((16, 16, 4))])
    with pytest.raises(ValueError):
        net.forward([np.zeros((16, 16, 4))] * 2)


def test_single_scale_config():
    cfg = FusionConfig(in_channels=4, num_scales=1, use_norm=False)
    net = FusionBackbone(cfg, rng=np.random.default_rng(6), dtype=np.float64)
    assert net.forward([np.ones((16, 16, 4))]).shape == (8, 8, 384)


def test_invalid_block_strides():
    with pytest.raises(ValueError):
        FusionConfig(blocks=((1, 3, 64), (4, 5, 128)))


def test_head_zero_features():
    head = DetectionHead(384, rng=np.random.default_rng(7), dtype=np.float64)
    out = head.forward(np.zeros((4, 3, 384)))
    assert out.concatenated().shape == (4, 3, 20)
    assert not out.concatenated().any()
    np.testing.assert_array_equal(1 / (1 + np.exp(-out.cls)), 0.5)


def test_dynamic_head_with_zero_coefficients_equals_standard_head():
    std = DetectionHead(16, use_ddconv=False, rng=np.random.default_rng(8), dtype=np.float64)
    dyn = DetectionHead(16, use_ddconv=True, rng=np.random.default_rng(9), dtype=np.float64)
    for k, layer in dyn.branches.items():
        layer.params["shared"][:] = std.branches[k].params["weight"]
        layer.params["bias"][:] = std.branches[k].params["bias"]
        layer.coeff_override = np.zeros(layer.num_bases)
    x = np.random.default_rng(10).standard_normal((5, 5, 16))
    a, b = std.forward(x), dyn.forward(x)
    assert np.array_equal(a.concatenated(), b.concatenated())
    assert len(dyn.dynamic_layers()) == 3 and std.dynamic_layers() == []
