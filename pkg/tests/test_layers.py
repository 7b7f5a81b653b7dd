import numpy as np
import pytest

from fddlab.errors import DivergenceError
from fddlab.masking import Mask, uniform_mask
from fddlab.nn import AdamState, adam_step, layers
from gradcheck import max_rel_error, numeric_grad


def conv_oracle(x, w, b, d):
    """Direct summation of the dilated 3x3 convolution with zero padding."""
    h, wd, cin = x.shape
    out = np.tile(b.astype(float), (h, wd, 1))
    for i in range(h):
        for j in range(wd):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    y, z = i + d * dy, j + d * dx
                    if 0 <= y < h and 0 <= z < wd:
                        out[i, j] += x[y, z] @ w[dy + 1, dx + 1]
    return out


def test_delta_kernel_is_identity():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((6, 7, 1))
    w = np.zeros((3, 3, 1, 1))
    w[1, 1, 0, 0] = 1.0
    assert np.array_equal(layers.conv2d_forward(x, w, np.zeros(1), 3), x)


def test_dilated_ones_kernel_on_impulse():
    x = np.zeros((5, 5, 1))
    x[2, 2, 0] = 1.0
    out = layers.conv2d_forward(x, np.ones((3, 3, 1, 1)), np.zeros(1), 2)[..., 0]
    expected = np.zeros((5, 5))
    for dy in (-2, 0, 2):
        for dx in (-2, 0, 2):
            expected[2 + dy, 2 + dx] = 1.0
    assert np.array_equal(out, expected)
    assert np.allclose(out, conv_oracle(x, np.ones((3, 3, 1, 1)), np.zeros(1), 2)[..., 0])


@pytest.mark.parametrize("d", [1, 2, 5, 15])
def test_conv_matches_direct_summation(d):
    rng = np.random.default_rng(d)
    x = rng.standard_normal((6, 8, 3))
    w = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)
    out = layers.conv2d_forward(x, w, b, d)
    assert out.shape == (6, 8, 4)
    assert np.allclose(out, conv_oracle(x, w, b, d), atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(ValueError):
        layers.conv2d_forward(np.zeros((4, 4, 2)), np.zeros((3, 3, 3, 1)), np.zeros(1))
    with pytest.raises(ValueError):
        layers.conv2d_backward(np.zeros((4, 4, 2)), np.zeros((4, 4, 1)), np.zeros((3, 3, 1, 1)))


def test_conv_backward_trivial_cases():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 4, 5, 2))
    w = rng.standard_normal((3, 3, 2, 3))
    gx, gw, gb = layers.conv2d_backward(np.zeros((2, 4, 5, 3)), x, w, 2)
    assert not gx.any() and not gw.any() and not gb.any()
    delta = np.zeros((3, 3, 1, 1))
    delta[1, 1] = 1.0
    g = rng.standard_normal((4, 5, 1))
    gx, _, _ = layers.conv2d_backward(g, rng.standard_normal((4, 5, 1)), delta, 3)
    assert np.array_equal(gx, g)


def test_conv_backward_finite_difference_4x4():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 4, 1))
    w = rng.standard_normal((3, 3, 1, 1))
    b = rng.standard_normal(1)
    r = rng.standard_normal((4, 4, 1))
    f = lambda: float(np.sum(r * layers.conv2d_forward(x, w, b, 1)))
    gx, gw, gb = layers.conv2d_backward(r, x, w, 1)
    for a, p in ((gx, x), (gw, w), (gb, b)):
        assert max_rel_error(a, numeric_grad(f, p)) < 1e-4


def test_conv_cols_reuse_matches():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 5, 6, 3))
    w = rng.standard_normal((3, 3, 3, 2))
    out, cols = layers.conv2d_forward(x, w, np.zeros(2), 2, return_cols=True)
    g = rng.standard_normal(out.shape)
    a = layers.conv2d_backward(g, x, w, 2)
    b = layers.conv2d_backward(g, x, w, 2, cols)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)
    assert layers.conv2d_backward(g, x, w, 2, need_grad_x=False)[0] is None


def test_conv_float32_preserved():
    x = np.ones((1, 4, 4, 2), np.float32)
    w = np.ones((3, 3, 2, 3), np.float32)
    assert layers.conv2d_forward(x, w, np.zeros(3, np.float32), 1).dtype == np.float32


def test_batch_norm_examples():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((64, 3, 3, 2))
    z = (z - z.mean(axis=(0, 1, 2))) / z.std(axis=(0, 1, 2))
    out, _, _ = layers.batch_norm_forward(z, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2))
    assert np.allclose(out, z, atol=1e-4)
    x = np.array([1.0, 3.0]).reshape(2, 1, 1, 1)
    out, _, _ = layers.batch_norm_forward(x, np.array([2.0]), np.array([1.0]), np.zeros(1), np.ones(1))
    # mean 2, biased variance 1: 2 * (+-1) / sqrt(1 + 1e-5) + 1
    assert np.allclose(out.ravel(), [-1.0, 3.0], atol=1e-4)
    assert out.ravel()[0] == pytest.approx(1 - 2 / np.sqrt(1 + 1e-5), abs=1e-12)
    const = np.full((4, 2, 2, 3), 7.0)
    out, _, _ = layers.batch_norm_forward(const, np.ones(3), np.full(3, 0.5), np.zeros(3), np.ones(3))
    assert np.allclose(out, 0.5)
    with pytest.raises(ValueError):
        layers.batch_norm_forward(np.ones((1, 2, 2, 1)), np.ones(1), np.zeros(1), np.zeros(1), np.ones(1))


def test_batch_norm_running_stats():
    x = np.array([1.0, 3.0]).reshape(2, 1, 1, 1)
    _, _, (rm, rv) = layers.batch_norm_forward(x, np.ones(1), np.zeros(1), np.zeros(1), np.ones(1))
    assert rm[0] == pytest.approx(0.01 * 2.0) and rv[0] == pytest.approx(0.99 + 0.01 * 1.0)
    out, _, (rm2, rv2) = layers.batch_norm_forward(x, np.ones(1), np.zeros(1), np.array([2.0]), np.array([4.0]),
                                                   "infer")
    assert np.allclose(out.ravel(), [-1 / np.sqrt(4 + 1e-5), 1 / np.sqrt(4 + 1e-5)])
    assert rm2[0] == 2.0 and rv2[0] == 4.0


def test_batch_norm_gradients():
    rng = np.random.default_rng(4)
    for mode in ("train", "infer"):
        x = rng.standard_normal((3, 2, 3, 2)) * 1.5 + 0.5
        g, be = rng.standard_normal(2), rng.standard_normal(2)
        rm, rv = rng.standard_normal(2), rng.uniform(0.5, 2, 2)
        r = rng.standard_normal(x.shape)
        f = lambda: float(np.sum(r * layers.batch_norm_forward(x, g, be, rm, rv, mode)[0]))
        _, cache, _ = layers.batch_norm_forward(x, g, be, rm, rv, mode)
        gx, gg, gb = layers.batch_norm_backward(r, cache)
        for a, p in ((gx, x), (gg, g), (gb, be)):
            assert max_rel_error(a, numeric_grad(f, p)) < 1e-4


def test_relu():
    x = np.array([-1.0, 0.0, 2.0])
    assert layers.relu_forward(x).tolist() == [0, 0, 2]
    assert layers.relu_backward(np.ones(3), x).tolist() == [0, 0, 1]


def test_residual_merge_cases():
    rng = np.random.default_rng(5)
    mask = uniform_mask(4, 8, 0.125)
    inp = rng.standard_normal((3, 4, 8, 2)) * np.asarray(mask.pattern)[..., None]
    net = rng.standard_normal((3, 4, 8, 2)) * 1e8
    out = layers.residual_merge(net, inp, mask.pattern)
    assert np.array_equal(out[:, mask.pattern], inp[:, mask.pattern])
    full = np.ones((4, 8), bool)
    assert np.array_equal(layers.residual_merge(net, inp, full), inp)
    # hand 2x2: keep (0,0) and (1,1)
    pat = np.array([[True, False], [False, True]])
    i2 = np.zeros((2, 2, 2))
    i2[0, 0] = [1, 2]
    i2[1, 1] = [3, 4]
    n2 = np.arange(8, dtype=float).reshape(2, 2, 2)
    out = layers.residual_merge(n2, i2, pat)
    assert out.tolist() == [[[1, 2], [2, 3]], [[4, 5], [3, 4]]]
    with pytest.raises(ValueError):
        layers.residual_merge(np.zeros((2, 2, 2)), np.zeros((2, 3, 2)), pat)


def test_residual_merge_gradient():
    rng = np.random.default_rng(6)
    pat = rng.random((3, 4)) < 0.3
    net = rng.standard_normal((2, 3, 4, 2))
    inp = rng.standard_normal((2, 3, 4, 2))
    r = rng.standard_normal(net.shape)
    f = lambda: float(np.sum(r * layers.residual_merge(net, inp, pat)))
    gn, gi = layers.residual_merge_backward(r, pat)
    assert max_rel_error(gn, numeric_grad(f, net)) < 1e-4
    assert max_rel_error(gi, numeric_grad(f, inp)) < 1e-4


def test_adam_examples():
    p = {"a": np.array([1.0, -2.0])}
    adam_step(p, {"a": np.zeros(2)}, AdamState())
    assert p["a"].tolist() == [1.0, -2.0]
    p = {"t": np.array(1.0)}
    adam_step(p, {"t": np.array(1.0)}, AdamState(lr=0.1))
    # m_hat = 1, v_hat = 1 -> step = 0.1 / (1 + 1e-8)
    assert float(p["t"]) == pytest.approx(1 - 0.1 / (1 + 1e-8), abs=1e-15)
    with pytest.raises(DivergenceError):
        adam_step(p, {"t": np.array(np.nan)}, AdamState())


def test_adam_deterministic():
    rng = np.random.default_rng(7)
    grads = [{"w": rng.standard_normal(5), "b": rng.standard_normal(2)} for _ in range(10)]

    def run():
        p = {"w": np.ones(5), "b": np.zeros(2)}
        s = AdamState(lr=0.01)
        for g in grads:
            adam_step(p, g, s)
        return p

    a, b = run(), run()
    assert np.array_equal(a["w"], b["w"]) and np.array_equal(a["b"], b["b"])


def test_adam_matches_reference_sequence():
    # reference written out from the update equations, two steps
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    g1, g2 = 0.3, -0.7
    m1, v1 = (1 - b1) * g1, (1 - b2) * g1 ** 2
    th1 = 2.0 - lr * (m1 / (1 - b1)) / (np.sqrt(v1 / (1 - b2)) + eps)
    m2, v2 = b1 * m1 + (1 - b1) * g2, b2 * v1 + (1 - b2) * g2 ** 2
    th2 = th1 - lr * (m2 / (1 - b1 ** 2)) / (np.sqrt(v2 / (1 - b2 ** 2)) + eps)
    p = {"x": np.array(2.0)}
    s = AdamState(lr=lr)
    adam_step(p, {"x": np.array(g1)}, s)
    adam_step(p, {"x": np.array(g2)}, s)
    assert float(p["x"]) == pytest.approx(th2, abs=1e-14)
    assert s.t == 2
