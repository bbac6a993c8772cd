"""PNG and raw-float image file I/O.

Grayscale PNGs are written 16-bit (so baked datasets round-trip to 1/65535),
color PNGs 8-bit RGB. Depth maps use a raw little-endian float32 container
with a (width, height) header; +inf depth sentinels are encoded as the
largest finite float32.
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

_DEPTH_SENTINEL_F32 = np.float32(np.finfo(np.float32).max)


def write_gray_png(path, values: np.ndarray) -> None:
    """16-bit grayscale PNG from float values in [0, 1]."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[:, :, 0]
    q = np.round(np.clip(arr, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(q, mode="I;16").save(path)


def write_color_png(path, rgb: np.ndarray) -> None:
    """8-bit RGB PNG from float values in [0, 1]."""
    arr = np.asarray(rgb, dtype=np.float64)
    q = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path)


def read_png(path) -> np.ndarray:
    """Decode a PNG to float32 (H, W, C) in [0, 1]; C is 1 or 3."""
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float32) / 65535.0
            return arr[:, :, None]
        if mode == "L":
            arr = np.asarray(im, dtype=np.float32) / 255.0
            return arr[:, :, None]
        if mode in ("RGB", "RGBA"):
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            return arr
    raise ValueError(f"{path}: unsupported PNG mode {mode}")


def write_depth(path, depth: np.ndarray) -> None:
    """Raw float32 depth file; +inf becomes the max finite float32."""
    arr = np.asarray(depth, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[:, :, 0]
    h, w = arr.shape
    arr = np.where(np.isfinite(arr), arr, _DEPTH_SENTINEL_F32)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", w, h))
        fh.write(arr.astype("<f4").tobytes())


def read_depth(path) -> np.ndarray:
    """Read a depth file; sentinel values come back as +inf."""
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError(f"{path}: truncated depth header at byte {len(header)}")
        w, h = struct.unpack("<II", header)
        payload = fh.read(4 * w * h)
    if len(payload) != 4 * w * h:
        raise ValueError(
            f"{path}: expected {4 * w * h} payload bytes, got {len(payload)} "
            f"(truncated at byte {8 + len(payload)})"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float32)
    return np.where(arr >= _DEPTH_SENTINEL_F32 * np.float32(0.999), np.inf, arr)
