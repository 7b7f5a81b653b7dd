"""The dilated-convolution reconstruction network and its parameters.

Layer stack for widths ``(c1..c5)`` and dilations ``(d1..d5)``::

    sparse input (Na, Nc, 2)
    5 x [conv 3x3 dilation d_i -> batch norm -> ReLU]
    conv 3x3 (dilation 1) -> 2 channels
    residual merge: observed entries from the input, the rest from the network
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..masking import FeedbackVector, Mask, scatter_to_sparse
from . import layers

FULL_CHANNELS = (32, 64, 128, 64, 32)
FULL_DILATIONS = (15, 7, 4, 2, 2)
WIDE_DILATIONS = (30, 15, 7, 4, 2)


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv_t | batch_norm | relu | residual_merge
    in_channels: int
    out_channels: int
    dilation: int = 1
    has_bias: bool = False

    @property
    def n_params(self) -> int:
        if self.kind == "conv_t":
            return (layers.KERNEL * layers.KERNEL * self.in_channels + int(self.has_bias)) * self.out_channels
        if self.kind == "batch_norm":
            # gamma, beta, running mean, running variance
            return 4 * self.out_channels
        return 0


def layer_table(channels=FULL_CHANNELS, dilations=FULL_DILATIONS) -> list[LayerSpec]:
    if len(channels) != len(dilations):
        raise ValueError("channels and dilations must have equal length")
    specs = []
    cin = 2
    for c, d in zip(channels, dilations):
        specs.append(LayerSpec("conv_t", cin, c, int(d), True))
        specs.append(LayerSpec("batch_norm", c, c))
        specs.append(LayerSpec("relu", c, c))
        cin = c
    specs.append(LayerSpec("conv_t", cin, 2, 1, True))
    specs.append(LayerSpec("residual_merge", 2, 2))
    return specs


@dataclass
class ModelParams:
    """Layer table plus one parameter dict per layer (empty for parameter-free layers)."""

    specs: list[LayerSpec]
    params: list[dict[str, np.ndarray]]
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5
    meta: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return self.params[0]["w"].dtype

    def parameter_counts(self) -> list[int]:
        """Per-layer counts for layers that carry parameters, in order."""
        return [s.n_params for s in self.specs if s.n_params]

    def trainable(self) -> list[tuple[int, str]]:
        keys = []
        for i, s in enumerate(self.specs):
            if s.kind == "conv_t":
                keys += [(i, "w"), (i, "b")]
            elif s.kind == "batch_norm":
                keys += [(i, "gamma"), (i, "beta")]
        return keys

    def astype(self, dtype) -> "ModelParams":
        out = copy.deepcopy(self)
        out.params = [{k: v.astype(dtype) for k, v in p.items()} for p in self.params]
        return out

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)


def init_model(channels=FULL_CHANNELS, dilations=FULL_DILATIONS, seed: int = 0,
               dtype=np.float32) -> ModelParams:
    """Glorot-uniform conv kernels, zero biases, unit gamma, zero beta."""
    rng = np.random.default_rng(seed)
    specs = layer_table(channels, dilations)
    params = []
    for s in specs:
        if s.kind == "conv_t":
            fan_in = 9 * s.in_channels
            fan_out = 9 * s.out_channels
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-lim, lim, size=(3, 3, s.in_channels, s.out_channels))
            params.append({"w": w.astype(dtype), "b": np.zeros(s.out_channels, dtype)})
        elif s.kind == "batch_norm":
            c = s.out_channels
            params.append({"gamma": np.ones(c, dtype), "beta": np.zeros(c, dtype),
                           "running_mean": np.zeros(c, dtype), "running_var": np.ones(c, dtype)})
        else:
            params.append({})
    return ModelParams(specs, params)


def forward_sparse(model: ModelParams, x_sparse: np.ndarray, mask: Mask, mode: str = "infer",
                   update_stats: bool = True):
    """Run the stack on sparse inputs (B, Na, Nc, 2).

    Returns ``(output, caches)``. In train mode the batch-norm running
    statistics of ``model`` are updated in place unless ``update_stats`` is False.
    """
    x = x_sparse
    h = x
    caches = []
    for spec, p in zip(model.specs, model.params):
        if spec.kind == "conv_t":
            inp = h
            h, cols = layers.conv2d_forward(h, p["w"], p["b"], spec.dilation, return_cols=True)
            caches.append((inp, cols if mode == "train" else None))
        elif spec.kind == "batch_norm":
            h, cache, (rm, rv) = layers.batch_norm_forward(
                h, p["gamma"], p["beta"], p["running_mean"], p["running_var"], mode,
                model.bn_momentum, model.bn_eps)
            if mode == "train" and update_stats:
                p["running_mean"] = rm.astype(p["running_mean"].dtype)
                p["running_var"] = rv.astype(p["running_var"].dtype)
            caches.append(cache)
        elif spec.kind == "relu":
            caches.append(h)
            h = layers.relu_forward(h)
        elif spec.kind == "residual_merge":
            caches.append(None)
            h = layers.residual_merge(h, x, mask.pattern)
        else:
            raise ValueError(f"unknown layer kind {spec.kind!r}")
    return h, caches


def backward(model: ModelParams, grad_out: np.ndarray, caches, mask: Mask) -> dict[tuple[int, str], np.ndarray]:
    """Gradients of trainable parameters keyed like :meth:`ModelParams.trainable`."""
    grads = {}
    g = grad_out
    for i in range(len(model.specs) - 1, -1, -1):
        spec, p, cache = model.specs[i], model.params[i], caches[i]
        if spec.kind == "residual_merge":
            g, _ = layers.residual_merge_backward(g, mask.pattern)
        elif spec.kind == "conv_t":
            inp, cols = cache
            g, gw, gb = layers.conv2d_backward(g, inp, p["w"], spec.dilation, cols, need_grad_x=i > 0)
            grads[(i, "w")] = gw
            grads[(i, "b")] = gb
        elif spec.kind == "batch_norm":
            g, gg, gbeta = layers.batch_norm_backward(g, cache)
            grads[(i, "gamma")] = gg
            grads[(i, "beta")] = gbeta
        elif spec.kind == "relu":
            g = layers.relu_backward(g, cache)
    return grads


def forward(model: ModelParams, fb: FeedbackVector | np.ndarray, mask: Mask, mode: str = "infer") -> np.ndarray:
    """Feedback vector(s) -> reconstructed real tensor(s) (…, Na, Nc, 2)."""
    values = fb.values if isinstance(fb, FeedbackVector) else np.asarray(fb)
    single = values.ndim == 1
    x = scatter_to_sparse(values.reshape(1, -1) if single else values, mask, dtype=model.dtype)
    out, _ = forward_sparse(model, x, mask, mode)
    return out[0] if single else out
