"""Forward/backward kernels for the layer kinds of the reconstruction network.

All activations are NHWC arrays ``(batch, height, width, channels)``; conv
weights are ``(3, 3, c_in, c_out)``. Every function is dtype-preserving, so
the same code runs the float32 training path and the float64 gradient checks.
"""

from __future__ import annotations

import numpy as np

KERNEL = 3
TAPS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected (H, W, C) or (B, H, W, C), got shape {x.shape}")
    return x, False


def _im2col(x: np.ndarray, dilation: int) -> np.ndarray:
    """(B, H, W, C) -> (B, H, W, 9, C); tap t reads x[h + d*dy, w + d*dx] with zero padding."""
    b, h, w, c = x.shape
    d = dilation
    xp = np.pad(x, ((0, 0), (d, d), (d, d), (0, 0)))
    cols = np.empty((b, h, w, len(TAPS), c), dtype=x.dtype)
    for t, (dy, dx) in enumerate(TAPS):
        cols[:, :, :, t, :] = xp[:, d + dy * d: d + dy * d + h, d + dx * d: d + dx * d + w, :]
    return cols


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, dilation: int = 1, return_cols: bool = False):
    """Dilated 3x3 convolution, stride 1, output spatial size equal to input.

    ``out[h, w, o] = b[o] + sum_{i, dy, dx} x[h + d*dy, w + d*dx, i] * w[dy+1, dx+1, i, o]``.
    A stride-1 transposed convolution is the same map with a spatially
    flipped kernel, so this also serves the "transposed" layers.
    With ``return_cols`` the im2col buffer is returned too, for reuse in backward.
    """
    xb, squeeze = _as_batch(np.asarray(x))
    if w.shape[:2] != (KERNEL, KERNEL):
        raise ValueError("only 3x3 kernels are supported")
    if xb.shape[-1] != w.shape[2]:
        raise ValueError(f"input has {xb.shape[-1]} channels, kernel expects {w.shape[2]}")
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    bsz, h, wd, cin = xb.shape
    cols = _im2col(xb, dilation).reshape(bsz * h * wd, 9 * cin)
    out = cols @ w.reshape(9 * cin, -1) + b
    out = out.reshape(bsz, h, wd, -1)
    out = out[0] if squeeze else out
    return (out, cols) if return_cols else out


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, w: np.ndarray, dilation: int = 1,
                    cols: np.ndarray | None = None, need_grad_x: bool = True):
    """Gradients ``(grad_x, grad_w, grad_b)`` of :func:`conv2d_forward`.

    ``cols`` may pass the forward im2col buffer; ``grad_x`` is None when not needed.
    """
    xb, squeeze = _as_batch(np.asarray(x))
    gb, _ = _as_batch(np.asarray(grad_out))
    bsz, h, wd, cin = xb.shape
    cout = w.shape[3]
    if gb.shape != (bsz, h, wd, cout):
        raise ValueError(f"grad_out shape {gb.shape} inconsistent with forward output {(bsz, h, wd, cout)}")
    if w.shape[2] != cin:
        raise ValueError("kernel/input channel mismatch")
    g2 = gb.reshape(-1, cout)
    if cols is None:
        cols = _im2col(xb, dilation)
    grad_w = (cols.reshape(-1, 9 * cin).T @ g2).reshape(w.shape)
    grad_b = g2.sum(axis=0)
    if not need_grad_x:
        return None, grad_w, grad_b
    d = dilation
    gxp = np.zeros((bsz, h + 2 * d, wd + 2 * d, cin), dtype=g2.dtype)
    for dy, dx in TAPS:
        tap = (g2 @ w[dy + 1, dx + 1].T).reshape(bsz, h, wd, cin)
        gxp[:, d + dy * d: d + dy * d + h, d + dx * d: d + dx * d + wd, :] += tap
    grad_x = gxp[:, d:d + h, d:d + wd, :]
    return (grad_x[0] if squeeze else grad_x), grad_w, grad_b


def batch_norm_forward(x: np.ndarray, gamma, beta, running_mean, running_var, mode: str = "train",
                       momentum: float = 0.99, eps: float = 1e-5):
    """Per-channel batch normalization over all but the last axis.

    Returns ``(out, cache, (new_running_mean, new_running_var))``; the running
    statistics are returned rather than mutated in place.
    """
    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("batch normalization in train mode needs batch size >= 2")
        axes = tuple(range(x.ndim - 1))
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        new_mean = momentum * running_mean + (1 - momentum) * mean
        new_var = momentum * running_var + (1 - momentum) * var
    elif mode == "infer":
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    cache = (xhat, inv_std, gamma, mode)
    return out.astype(x.dtype, copy=False), cache, (new_mean, new_var)


def batch_norm_backward(grad_out: np.ndarray, cache):
    """Gradients ``(grad_x, grad_gamma, grad_beta)``."""
    xhat, inv_std, gamma, mode = cache
    axes = tuple(range(grad_out.ndim - 1))
    grad_gamma = (grad_out * xhat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    gxhat = grad_out * gamma
    if mode == "infer":
        return gxhat * inv_std, grad_gamma, grad_beta
    m = xhat.size // xhat.shape[-1]
    grad_x = inv_std / m * (m * gxhat - gxhat.sum(axis=axes) - xhat * (gxhat * xhat).sum(axis=axes))
    return grad_x.astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def residual_merge(net_out: np.ndarray, input_sparse: np.ndarray, pattern: np.ndarray) -> np.ndarray:
    """``input_sparse + net_out * (1 - M)``, with observed entries copied bit-exactly.

    ``pattern`` is the (Na, Nc) boolean mask, broadcast over re/im and batch.
    """
    if net_out.shape != input_sparse.shape:
        raise ValueError(f"shape mismatch {net_out.shape} vs {input_sparse.shape}")
    if input_sparse.shape[-3:-1] != pattern.shape:
        raise ValueError("mask does not match tensor spatial dims")
    keep = np.asarray(pattern, dtype=bool)[..., None]
    return np.where(keep, input_sparse, input_sparse + net_out)


def residual_merge_backward(grad_out: np.ndarray, pattern: np.ndarray):
    """Gradients ``(grad_net_out, grad_input_sparse)``."""
    keep = np.asarray(pattern, dtype=bool)[..., None]
    return np.where(keep, np.zeros((), grad_out.dtype), grad_out), grad_out
