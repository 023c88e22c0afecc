"""Bilinear upsampling by zero-stuffing and separable triangle-filter convolution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError


@dataclass(frozen=True)
class InterpFilter:
    n: int  # points inserted between neighbouring samples
    taps: np.ndarray


def make_interp_filter(n: int) -> InterpFilter:
    if n < 0:
        raise ValueError(f"insertion count must be >= 0, got {n}")
    ramp = np.arange(1, n + 2, dtype=np.float64) / (n + 1)
    taps = np.concatenate([ramp, ramp[-2::-1]])
    return InterpFilter(n, taps)


def _stuff(x, factor, axis):
    shape = list(x.shape)
    shape[axis] = (x.shape[axis] - 1) * factor + 1
    out = np.zeros(shape, dtype=x.dtype)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(None, None, factor)
    out[tuple(idx)] = x
    return out


def _conv_axis(x, taps, axis):
    # same-size correlation with zero extension; taps are symmetric so this
    # is also the convolution and its own adjoint
    half = len(taps) // 2
    x = np.moveaxis(x, axis, 0)
    n = x.shape[0]
    padded = np.zeros((n + 2 * half,) + x.shape[1:], dtype=x.dtype)
    padded[half:half + n] = x
    out = np.zeros_like(x)
    for k, t in enumerate(taps):
        out += t * padded[k:k + n]
    return np.moveaxis(out, 0, axis)


def _upsample_axis(x, factor, axis):
    f = make_interp_filter(factor - 1)
    y = _conv_axis(_stuff(x, factor, axis), f.taps.astype(x.dtype), axis)
    # replicate the last computed sample so the axis length is exactly n * factor
    last = np.take(y, [-1], axis=axis)
    return np.concatenate([y] + [last] * (factor - 1), axis=axis)


def _upsample_axis_vjp(g, factor, axis):
    n_out = g.shape[axis]
    core = n_out - (factor - 1)
    g = np.moveaxis(g, axis, 0)
    folded = g[:core].copy()
    folded[-1] += g[core:].sum(axis=0)
    f = make_interp_filter(factor - 1)
    y = _conv_axis(folded, f.taps.astype(g.dtype), 0)
    return np.moveaxis(y[::factor], 0, axis)


def upsample_bilinear(x: np.ndarray, factor: int) -> np.ndarray:
    """Upsample an H x W (x C) map to H*factor x W*factor."""
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return x.copy()
    y = _upsample_axis(x, factor, 0)
    return _upsample_axis(y, factor, 1)


def upsample_vjp(upstream: np.ndarray, factor: int) -> np.ndarray:
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return upstream.copy()
    h, w = upstream.shape[:2]
    if h % factor or w % factor:
        raise ShapeError(f"upstream extents {(h, w)} are not multiples of factor {factor}")
    g = _upsample_axis_vjp(upstream, factor, 1)
    return _upsample_axis_vjp(g, factor, 0)
