import numpy as np
import pytest

from pillarkit.numcore import (AdamState, BatchNorm, Conv2d, Linear, adam_step, check_finite,
                               dumps_tensor, gradient_check, load_tensor, loads_tensor, save_tensor)
from pillarkit.numcore import ops
from pillarkit.numcore.ops import NonFiniteError

from oracles import naive_conv2d


# -- conv2d ---------------------------------------------------------------

def test_conv2d_identity_1x1():
    x = np.array([[[2.5]]])
    out, _ = ops.conv2d_forward(x, np.ones((1, 1, 1, 1)), 1, "same")
    assert out.shape == (1, 1, 1) and out[0, 0, 0] == 2.5


def test_conv2d_all_ones_valid_sum():
    out, _ = ops.conv2d_forward(np.ones((3, 3, 1)), np.ones((3, 3, 1, 1)), 1, "valid")
    assert out.shape == (1, 1, 1) and out[0, 0, 0] == 9.0


@pytest.mark.parametrize("stride,padding", [(1, "same"), (1, "valid"), (2, "same"), (2, "valid"), (3, "same")])
def test_conv2d_matches_sliding_window_oracle(stride, padding):
    rng = np.random.default_rng(stride)
    x = rng.standard_normal((5, 5, 2))
    w = rng.standard_normal((3, 3, 2, 4))
    out, _ = ops.conv2d_forward(x, w, stride, padding)
    ref = naive_conv2d(x, w, stride, padding)
    assert out.shape == ref.shape
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)


def test_conv2d_batched_equals_per_frame():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 6, 7, 2))
    w = rng.standard_normal((3, 3, 2, 5))
    out, _ = ops.conv2d_forward(x, w, 2)
    for i in range(3):
        np.testing.assert_allclose(out[i], ops.conv2d_forward(x[i], w, 2)[0], atol=1e-12)


def test_conv2d_rejects_bad_shapes():
    with pytest.raises(ValueError):
        ops.conv2d_forward(np.zeros((4, 4, 3)), np.zeros((3, 3, 2, 1)))
    with pytest.raises(ValueError):
        ops.conv2d_forward(np.zeros((2, 2, 1)), np.zeros((3, 3, 1, 1)), 1, "valid")
    with pytest.raises(ValueError):
        ops.conv2d_forward(np.zeros((4, 4, 1)), np.zeros((2, 2, 1, 1)))


def test_conv_transpose_is_adjoint_of_strided_conv():
    # <conv_t(x), y> == <x, conv(y)> for the kernel=stride case
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 3, 2))
    w = rng.standard_normal((2, 2, 2, 4))
    out, _ = ops.conv_transpose2d_forward(x, w, 2)
    assert out.shape == (6, 6, 4)
    ref = np.zeros((6, 6, 4))
    for i in range(3):
        for j in range(3):
            ref[2 * i:2 * i + 2, 2 * j:2 * j + 2] += np.einsum("c,abco->abo", x[i, j], w)
    np.testing.assert_allclose(out, ref, atol=1e-12)


# -- masked_max -------------------------------------------------------------

def test_masked_max_single_point():
    pts = np.array([[[1.5, -2.0, 3.0]]])
    out, _ = ops.masked_max_forward(pts, [1])
    np.testing.assert_array_equal(out, pts[:, 0])


def test_masked_max_forced_argmax_and_gradient():
    pts = np.array([[[1.0], [5.0], [3.0]]])
    out, cache = ops.masked_max_forward(pts, [2])
    assert out[0, 0] == 5.0
    g = ops.masked_max_backward(np.array([[1.0]]), cache)
    np.testing.assert_array_equal(g[0, :, 0], [0.0, 1.0, 0.0])


def test_masked_max_ignores_poisoned_padding():
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((4, 10, 3))
    counts = np.array([1, 4, 7, 10])
    for p, c in enumerate(counts):
        pts[p, c:] = 1e30
    out, _ = ops.masked_max_forward(pts, counts)
    ref = np.array([[max(pts[p, :c, j]) for j in range(3)] for p, c in enumerate(counts)])
    np.testing.assert_array_equal(out, ref)


def test_masked_max_rejects_empty_pillar():
    with pytest.raises(ValueError):
        ops.masked_max_forward(np.zeros((2, 3, 1)), [1, 0])


def test_masked_max_gradient_check():
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((4, 6, 3))
    counts = np.array([1, 3, 6, 2])
    r = rng.standard_normal((4, 3))
    _, cache = ops.masked_max_forward(pts, counts)
    g = ops.masked_max_backward(r, cache)
    err = gradient_check(lambda: float(np.sum(ops.masked_max_forward(pts, counts)[0] * r)),
                         {"pts": pts}, {"pts": g})
    assert err < 1e-6


# -- linear -----------------------------------------------------------------

def test_linear_identity():
    x = np.random.default_rng(0).standard_normal((4, 3))
    out, _ = ops.linear_forward(x, np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(out, x)


def test_linear_forced_arithmetic():
    out, _ = ops.linear_forward(np.array([1.0, 2.0]), np.eye(2), np.array([3.0, 3.0]))
    np.testing.assert_array_equal(out, [4.0, 5.0])


def test_linear_matches_loop_oracle():
    rng = np.random.default_rng(2)
    x, w, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3)), rng.standard_normal(3)
    out, _ = ops.linear_forward(x, w, b)
    ref = np.array([[sum(x[i, d] * w[d, c] for d in range(4)) + b[c] for c in range(3)] for i in range(5)])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_linear_layer_gradient_check_tight():
    from pillarkit.numcore import check_module
    rng = np.random.default_rng(4)
    lin = Linear(3, 3, rng=rng, dtype=np.float64)
    assert check_module(lin, rng.standard_normal((3, 3))) < 1e-6


def test_gradient_check_flags_wrong_gradient():
    x = np.array([1.0, 2.0, 3.0])
    err = gradient_check(lambda: float(np.sum(x ** 2)), {"x": x}, {"x": 3 * x})
    assert err > 0.1


def test_gradient_check_requires_float64():
    x = np.ones(3, dtype=np.float32)
    with pytest.raises((TypeError, ValueError)):
        gradient_check(lambda: float(x.sum()), {"x": x}, {"x": np.ones(3, np.float32)})


# -- batch norm -------------------------------------------------------------

def test_batchnorm_train_normalizes_and_eval_uses_running_stats():
    rng = np.random.default_rng(0)
    bn = BatchNorm(2, dtype=np.float64)
    x = rng.standard_normal((200, 2)) * 3 + 5
    y = bn.forward(x)
    np.testing.assert_allclose(y.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(y.std(axis=0), 1, atol=1e-3)
    bn.set_train(False)
    y2 = bn.forward(x)
    ref = (x - bn.running_mean) / np.sqrt(bn.running_var + 1e-5)
    np.testing.assert_allclose(y2, ref, atol=1e-12)


def test_batchnorm_disabled_is_identity():
    bn = BatchNorm(2, enabled=False, dtype=np.float64)
    x = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(bn.forward(x), x)


# -- adam -------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState())
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_matches_textbook():
    p = {"w": np.array([0.5])}
    st = AdamState(lr=0.0002)
    adam_step(p, {"w": np.array([1.0])}, st)
    m = 0.1 * 1.0 / (1 - 0.9)
    v = 0.001 * 1.0 / (1 - 0.999)
    np.testing.assert_allclose(p["w"], 0.5 - 0.0002 * m / (np.sqrt(v) + 1e-8), rtol=0, atol=1e-15)


def test_adam_lr_decay_at_epoch_boundary():
    st = AdamState(lr=0.0002)
    st.epoch = 14
    assert st.current_lr() == 0.0002
    st.epoch = 15
    assert st.current_lr() == pytest.approx(0.0002 * 0.8, rel=1e-15)
    st.epoch = 30
    assert st.current_lr() == pytest.approx(0.0002 * 0.64, rel=1e-15)


def test_adam_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())


# -- finiteness and io ------------------------------------------------------

def test_check_finite_raises():
    with pytest.raises(NonFiniteError):
        check_finite(np.array([1.0, np.nan]))


def test_conv_layer_refuses_nonfinite_input():
    conv = Conv2d(1, 1, 3, rng=np.random.default_rng(0), dtype=np.float64)
    x = np.zeros((3, 3, 1))
    x[1, 1, 0] = np.inf
    with pytest.raises(NonFiniteError):
        conv.forward(x)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_pipt_round_trip(tmp_path, dtype):
    arr = np.random.default_rng(0).standard_normal((2, 3, 4)).astype(dtype)
    save_tensor(tmp_path / "a.pipt", arr)
    back = load_tensor(tmp_path / "a.pipt")
    assert back.dtype == dtype
    np.testing.assert_array_equal(back, arr)


def test_pipt_header_layout():
    buf = dumps_tensor(np.zeros((2, 3), dtype=np.float32))
    assert buf[:4] == b"PIPT"
    assert buf[4:6] == b"\x01\x00" and buf[6:8] == b"\x02\x00"
    assert int.from_bytes(buf[8:16], "little") == 2 and int.from_bytes(buf[16:24], "little") == 3
    assert buf[24] == 0 and len(buf) == 25 + 6 * 4


def test_pipt_rejects_garbage():
    with pytest.raises(ValueError):
        loads_tensor(b"NOPE" + bytes(10))
    good = dumps_tensor(np.zeros(3))
    with pytest.raises(ValueError):
        loads_tensor(good[:-1])
