import numpy as np
import pytest

from fddlab.masking import apply_mask, random_mask, scatter_to_sparse, uniform_mask
from fddlab.nn import (FULL_CHANNELS, FULL_DILATIONS, WIDE_DILATIONS, backward, forward, forward_sparse,
                       init_model, layer_table)
from gradcheck import max_rel_error, numeric_grad

TABLE1 = [608, 128, 18496, 256, 73856, 512, 73792, 256, 18464, 128, 578]


def test_full_scale_parameter_counts():
    model = init_model(FULL_CHANNELS, FULL_DILATIONS)
    assert model.parameter_counts() == TABLE1
    assert sum(np.prod(v.shape) for p in model.params for v in p.values()) == sum(TABLE1)
    # first conv: (3*3*2 + 1) * 32
    assert (3 * 3 * 2 + 1) * 32 == TABLE1[0]
    assert [s.dilation for s in layer_table() if s.kind == "conv_t"] == [15, 7, 4, 2, 2, 1]
    assert [s.dilation for s in layer_table(dilations=WIDE_DILATIONS) if s.kind == "conv_t"][:5] == [30, 15, 7, 4, 2]
    assert layer_table()[-1].kind == "residual_merge"


def test_full_scale_input_length():
    assert uniform_mask(64, 160, 0.025).feedback_length == 512


def test_fresh_model_passthrough_and_shape():
    rng = np.random.default_rng(0)
    mask = uniform_mask(16, 32, 0.0625)
    model = init_model((4, 8, 8, 8, 4), seed=1)
    fb = rng.standard_normal(mask.feedback_length).astype(np.float32)
    out = forward(model, fb, mask)
    assert out.shape == (16, 32, 2)
    assert np.array_equal(apply_mask(out, mask).values, fb)


def test_passthrough_for_arbitrary_parameters():
    rng = np.random.default_rng(1)
    mask = random_mask(8, 8, 9, seed=3)
    model = init_model((3, 4, 5, 4, 3), (3, 2, 2, 1, 1), seed=2)
    for p in model.params:
        for k in p:
            p[k] = (rng.standard_normal(p[k].shape) * 10).astype(np.float32)
            if k == "running_var":
                p[k] = np.abs(p[k]) + 0.1
    fb = rng.standard_normal((4, mask.feedback_length)).astype(np.float32)
    for mode in ("infer", "train"):
        out, _ = forward_sparse(model.copy(), scatter_to_sparse(fb, mask), mask, mode)
        assert np.array_equal(apply_mask(out, mask).values, fb)


def test_dual_precision_forward_agrees():
    rng = np.random.default_rng(2)
    mask = uniform_mask(16, 32, 0.0625)
    m64 = init_model((8, 16, 32, 16, 8), seed=0, dtype=np.float64)
    for p in m64.params:
        if "beta" in p:
            p["running_mean"] = rng.standard_normal(p["beta"].shape) * 0.1
            p["running_var"] = rng.uniform(0.5, 1.5, p["beta"].shape)
    m32 = m64.astype(np.float32)
    fb = rng.standard_normal((3, mask.feedback_length))
    o64 = forward(m64, fb, mask)
    o32 = forward(m32, fb.astype(np.float32), mask)
    assert o32.dtype == np.float32
    assert np.linalg.norm(o32 - o64) / np.linalg.norm(o64) < 1e-4


def test_whole_network_gradient():
    rng = np.random.default_rng(3)
    mask = uniform_mask(4, 8, 0.125)
    model = init_model((3, 4, 3, 2, 2), (3, 2, 1, 1, 1), seed=4, dtype=np.float64)
    x = scatter_to_sparse(rng.standard_normal((3, mask.feedback_length)), mask)
    r = rng.standard_normal((3, 4, 8, 2))

    def f():
        out, _ = forward_sparse(model, x, mask, "train", update_stats=False)
        return float(np.sum(r * out))

    out, caches = forward_sparse(model, x, mask, "train", update_stats=False)
    grads = backward(model, r, caches, mask)
    assert set(grads) == set(model.trainable())
    for (i, name), g in grads.items():
        assert max_rel_error(g, numeric_grad(f, model.params[i][name])) < 1e-4, (i, name)


def test_train_mode_updates_running_stats_only_when_asked():
    mask = uniform_mask(4, 8, 0.125)
    model = init_model((2, 2, 2, 2, 2), (1, 1, 1, 1, 1), seed=0, dtype=np.float64)
    x = scatter_to_sparse(np.random.default_rng(0).standard_normal((4, mask.feedback_length)), mask)
    before = model.params[1]["running_mean"].copy()
    forward_sparse(model, x, mask, "train", update_stats=False)
    assert np.array_equal(model.params[1]["running_mean"], before)
    forward_sparse(model, x, mask, "train")
    assert not np.array_equal(model.params[1]["running_mean"], before)
    with pytest.raises(ValueError):
        forward_sparse(model, x, mask, "eval")
