"""Signed distance labels, 128-class quantization and expectation decoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import NUM_CLASSES

VALUE_MIN = -64
VALUE_MAX = 63
CLASS_VALUES = np.arange(VALUE_MIN, VALUE_MAX + 1, dtype=np.float64)


@dataclass
class LabelField:
    values: np.ndarray  # signed distances, output pixels
    classes: np.ndarray  # integers in [-64, 63]

    @classmethod
    def from_mask(cls, mask):
        values = signed_distance_transform(mask)
        return cls(values, quantize(values))

    @property
    def class_index(self):
        """Classes shifted to 0..127 for use as softmax targets."""
        return self.classes - VALUE_MIN


def _check_binary(mask):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be 0/1 valued")
    return mask.astype(bool)


def boundary_pixels(mask) -> np.ndarray:
    """Building pixels with a 4-adjacent non-building pixel or on the image edge."""
    m = _check_binary(mask)
    p = np.pad(m, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return m & ~interior


def _squared_distance_to(seeds):
    """Exact squared Euclidean distance from every pixel to the nearest seed."""
    h, w = seeds.shape
    big = (h + w) ** 2
    # column pass: vertical distance to the nearest seed in the same column
    g = np.full((h, w), big, dtype=np.int64)
    last = np.full(w, -big)
    for r in range(h):
        last = np.where(seeds[r], r, last)
        g[r] = np.minimum(g[r], r - last)
    last = np.full(w, 2 * big)
    for r in range(h - 1, -1, -1):
        last = np.where(seeds[r], r, last)
        g[r] = np.minimum(g[r], last - r)
    g2 = np.where(g >= big, big, g * g)
    # row pass: minimise g(j)^2 + (c - j)^2 over the columns j of each row
    cols = np.arange(w)
    dc2 = (cols[:, None] - cols[None, :]) ** 2
    out = np.empty((h, w), dtype=np.int64)
    for r in range(h):
        out[r] = (g2[r][None, :] + dc2).min(axis=1)
    return out


def signed_distance_transform(mask) -> np.ndarray:
    m = _check_binary(mask)
    b = boundary_pixels(m)
    if not b.any():
        return np.full(m.shape, float(VALUE_MIN))
    d = np.sqrt(_squared_distance_to(b).astype(np.float64))
    return np.where(m, d, -d)


def quantize(values) -> np.ndarray:
    """Round half away from zero, then clamp to [-64, 63]."""
    v = np.asarray(values, dtype=np.float64)
    r = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return np.clip(r, VALUE_MIN, VALUE_MAX).astype(np.int64)


def one_hot(classes) -> np.ndarray:
    idx = np.asarray(classes) - VALUE_MIN
    return (idx[..., None] == np.arange(NUM_CLASSES)).astype(np.float64)


def expectation_decode(probs: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    if probs.shape[-1] != NUM_CLASSES:
        raise ValueError(f"expected {NUM_CLASSES} channels, got {probs.shape[-1]}")
    if (probs < 0).any() or np.abs(probs.sum(axis=-1) - 1).max(initial=0) > tol:
        raise ValueError("per-pixel probabilities must be non-negative and sum to 1")
    return probs @ CLASS_VALUES.astype(probs.dtype)


def threshold_readout(values):
    """Return (building, boundary) masks: values > 0.5 and -0.5 <= values <= 0.5."""
    v = np.asarray(values)
    return v > 0.5, (v >= -0.5) & (v <= 0.5)
