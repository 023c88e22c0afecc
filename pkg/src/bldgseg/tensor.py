"""Layer primitives with explicit forward and backward passes.

Tensors are plain numpy arrays. Feature maps are laid out H x W x C and
filter banks as count x kh x kw x cin.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NUM_CLASSES = 128


class ShapeError(ValueError):
    pass


@dataclass
class ConvParams:
    filters: np.ndarray
    bias: np.ndarray
    padding: str = "same"  # "same" (zero extended) or "valid"

    def __post_init__(self):
        if self.filters.ndim != 4:
            raise ShapeError(f"filters must be count x kh x kw x cin, got {self.filters.shape}")
        if self.bias.shape != (self.filters.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.filters.shape[0]} filters")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"unknown padding {self.padding!r}")
        _, kh, kw, _ = self.filters.shape
        if self.padding == "same" and (kh % 2 == 0 or kw % 2 == 0):
            raise ShapeError(f"same padding needs odd kernels, got {kh}x{kw}")


def _pad(x, kh, kw, padding):
    if padding == "valid":
        return x
    ph, pw = kh // 2, kw // 2
    return np.pad(x, ((ph, ph), (pw, pw), (0, 0)))


# cap on im2col buffer size (elements); larger maps are processed in row blocks
COLUMN_BLOCK = 1 << 22


def _columns(xp, kh, kw):
    # (H', W', kh, kw, C) window stack, flattened to match filter layout
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))
    win = win.transpose(0, 1, 3, 4, 2)
    h, w = win.shape[:2]
    return win.reshape(h * w, -1), h, w


def _row_blocks(h, w, kh, kw, cin):
    step = max(1, COLUMN_BLOCK // max(1, w * kh * kw * cin))
    for r in range(0, h, step):
        yield r, min(h, r + step)


def _check_conv_input(x, p):
    if x.ndim != 3:
        raise ShapeError(f"conv input must be H x W x C, got {x.shape}")
    count, kh, kw, cin = p.filters.shape
    if x.shape[2] != cin:
        raise ShapeError(f"input has {x.shape[2]} channels, filters expect {cin}")
    if p.padding == "valid" and (x.shape[0] < kh or x.shape[1] < kw):
        raise ShapeError(f"input {x.shape[:2]} smaller than {kh}x{kw} kernel under valid padding")


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    _check_conv_input(x, p)
    count, kh, kw, _ = p.filters.shape
    if kh == 1 and kw == 1:
        h, w, c = x.shape
        out = x.reshape(h * w, c) @ p.filters.reshape(count, c).T
        return (out + p.bias).reshape(h, w, count)
    xp = _pad(x, kh, kw, p.padding)
    h, w = xp.shape[0] - kh + 1, xp.shape[1] - kw + 1
    fm = p.filters.reshape(count, -1).T
    out = np.empty((h, w, count), dtype=np.result_type(x, p.filters))
    for r0, r1 in _row_blocks(h, w, kh, kw, x.shape[2]):
        cols, _, _ = _columns(xp[r0:r1 + kh - 1], kh, kw)
        out[r0:r1] = (cols @ fm + p.bias).reshape(r1 - r0, w, count)
    return out


def conv2d_vjp(x: np.ndarray, p: ConvParams, upstream: np.ndarray, need_input_grad: bool = True):
    """Return (grad_input, grad_filters, grad_bias) of sum(upstream * conv2d(x, p)).

    grad_input is None when `need_input_grad` is false.
    """
    _check_conv_input(x, p)
    count, kh, kw, cin = p.filters.shape
    if p.padding == "same":
        expect = x.shape[:2] + (count,)
    else:
        expect = (x.shape[0] - kh + 1, x.shape[1] - kw + 1, count)
    if upstream.shape != expect:
        raise ShapeError(f"upstream shape {upstream.shape} != conv output shape {expect}")
    h, w = expect[:2]
    g = upstream.reshape(h * w, count)
    grad_bias = g.sum(axis=0)
    if kh == 1 and kw == 1:
        xf = x.reshape(h * w, cin)
        grad_filters = (g.T @ xf).reshape(p.filters.shape)
        grad_input = (g @ p.filters.reshape(count, cin)).reshape(x.shape) if need_input_grad else None
        return grad_input, grad_filters, grad_bias

    xp = _pad(x, kh, kw, p.padding)
    fm = p.filters.reshape(count, -1)
    grad_filters = np.zeros_like(fm)
    gxp = np.zeros_like(xp) if need_input_grad else None
    up = upstream
    for r0, r1 in _row_blocks(h, w, kh, kw, cin):
        cols, _, _ = _columns(xp[r0:r1 + kh - 1], kh, kw)
        gb = up[r0:r1].reshape(-1, count)
        grad_filters += gb.T @ cols
        if need_input_grad:
            gcols = (gb @ fm).reshape(r1 - r0, w, kh, kw, cin)
            for i in range(kh):
                for j in range(kw):
                    gxp[r0 + i:r1 + i, j:j + w] += gcols[:, :, i, j]
    grad_filters = grad_filters.reshape(p.filters.shape)
    if not need_input_grad:
        return None, grad_filters, grad_bias
    if p.padding == "same":
        ph, pw = kh // 2, kw // 2
        gxp = gxp[ph:ph + x.shape[0], pw:pw + x.shape[1]]
    return gxp, grad_filters, grad_bias


def maxpool2(x: np.ndarray):
    """2x2 non-overlapping max pooling.

    Returns the pooled map and an argmax map holding the winning flat
    offset (0..3, row-major inside the window) per output cell. A trailing
    odd row or column is dropped.
    """
    h, w, c = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2 needs at least 2x2 input, got {x.shape}")
    ho, wo = h // 2, w // 2
    win = x[:2 * ho, :2 * wo].reshape(ho, 2, wo, 2, c).transpose(0, 2, 4, 1, 3).reshape(ho, wo, c, 4)
    # np.argmax returns the first maximum, which is the row-major tie rule
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, PoolIndex(arg, (h, w, c))


@dataclass
class PoolIndex:
    offsets: np.ndarray  # ho x wo x c, values in 0..3
    input_shape: tuple

    def positions(self):
        """Absolute (row, col) of each winner, as two ho x wo x c arrays."""
        ho, wo, _ = self.offsets.shape
        r = 2 * np.arange(ho)[:, None, None] + self.offsets // 2
        c = 2 * np.arange(wo)[None, :, None] + self.offsets % 2
        return r, c


def maxpool2_vjp(index: PoolIndex, upstream: np.ndarray) -> np.ndarray:
    if upstream.shape != index.offsets.shape:
        raise ShapeError(f"upstream {upstream.shape} != pooled shape {index.offsets.shape}")
    h, w, c = index.input_shape
    ho, wo, _ = upstream.shape
    onehot = index.offsets[..., None] == np.arange(4)
    g = np.where(onehot, upstream[..., None], 0.0).astype(upstream.dtype, copy=False)
    g = g.reshape(ho, wo, c, 2, 2).transpose(0, 3, 1, 4, 2).reshape(2 * ho, 2 * wo, c)
    out = np.zeros((h, w, c), dtype=upstream.dtype)
    out[:2 * ho, :2 * wo] = g
    return out


def relu(x):
    return np.maximum(x, 0)


def relu_vjp(x, upstream):
    return np.where(x > 0, upstream, 0).astype(upstream.dtype, copy=False)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def pixel_softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean per-pixel cross entropy and its gradient w.r.t. the logits.

    `labels` holds class indices (0..C-1) with the spatial shape of `logits`.
    """
    labels = np.asarray(labels)
    if logits.shape[:-1] != labels.shape:
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape[:-1]}")
    ncls = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= ncls):
        raise ValueError(f"label values must lie in [0, {ncls - 1}]")
    labels = labels.astype(np.intp)
    z = logits - logits.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    npix = labels.size
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)
    loss = -picked.sum() / npix
    grad = np.exp(logp)
    np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], axis=-1) - 1, axis=-1)
    grad /= npix
    return float(loss), grad
