"""FGRID rasters, PNG images and overlays."""
from __future__ import annotations

import struct

import numpy as np
from PIL import Image

# b"FGRD", u32 version, u32 height, u32 width, u32 channels, then
# little-endian float32 values in row-major order
FGRID_MAGIC = b"FGRD"
FGRID_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class FormatError(ValueError):
    pass


def write_fgrid(path, array):
    a = np.asarray(array)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise ValueError(f"FGRID holds H x W or H x W x C arrays, got shape {a.shape}")
    h, w, c = a.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FGRID_MAGIC, FGRID_VERSION, h, w, c))
        fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_fgrid(path, squeeze: bool = True) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated FGRID header")
    magic, version, h, w, c = _HEADER.unpack_from(data)
    if magic != FGRID_MAGIC:
        raise FormatError(f"{path}: bad FGRID magic {magic!r}")
    if version != FGRID_VERSION:
        raise FormatError(f"{path}: unsupported FGRID version {version}")
    n = h * w * c
    if len(data) != _HEADER.size + 4 * n:
        raise FormatError(f"{path}: expected {n} values, file size {len(data)} disagrees")
    a = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(h, w, c).astype(np.float32)
    if squeeze and c == 1:
        a = a[..., 0]
    return a


def write_png(path, image):
    """Write an H x W x 3 image with values in [0, 1] as 8-bit RGB."""
    a = np.clip(np.asarray(image, dtype=np.float64), 0, 1)
    Image.fromarray(np.round(a * 255).astype(np.uint8), mode="RGB").save(path)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def overlay(image, building, boundary):
    """Blend building pixels 50% toward red and paint boundary pixels solid blue.

    The masks may be at half the image resolution; they are then enlarged by
    pixel replication.
    """
    img = np.asarray(image, dtype=np.float64).copy()
    scale = img.shape[0] // building.shape[0]
    if scale > 1:
        building = np.kron(building, np.ones((scale, scale), dtype=bool)).astype(bool)
        boundary = np.kron(boundary, np.ones((scale, scale), dtype=bool)).astype(bool)
    red = np.array([1.0, 0.0, 0.0])
    img[building] = 0.5 * img[building] + 0.5 * red
    img[boundary] = np.array([0.0, 0.0, 1.0])
    return img
