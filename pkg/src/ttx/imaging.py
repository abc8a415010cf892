"""Raster helpers shared by the dataset, sampler and service layers.

Storage convention: float32 arrays of shape (H, W, 3) with values in [0, 1],
always quantized to the 8-bit grid so that a PNG round trip is lossless.
Model space is [-1, 1]; the mapping x -> 2x - 1 is applied exactly once at
the dataset/model boundary.
"""

from __future__ import annotations

import hashlib
import io
from pathlib import Path

import numpy as np
from PIL import Image


def quantize01(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and snap to the 8-bit grid (k/255)."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return (np.round(arr * 255.0) / 255.0).astype(np.float32)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(np.float32)) / np.float32(255.0)


def content_id(image: np.ndarray) -> str:
    """Stable content hash of an image; a pure function of its pixel bytes."""
    raw = to_uint8(image)
    h = hashlib.sha256()
    h.update(str(raw.shape).encode("ascii"))
    h.update(raw.tobytes())
    return h.hexdigest()[:16]


def to_model_space(image: np.ndarray) -> np.ndarray:
    return image.astype(np.float32) * 2.0 - 1.0


def from_model_space(x: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(x) + 1.0) / 2.0, 0.0, 1.0)


def encode_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(image), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_png(image: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(encode_png(image))


def load_image(path: str | Path, target_size: tuple[int, int] | None = None) -> np.ndarray:
    """Decode any raster file to the storage convention, optionally resizing.

    target_size is (H, W). Raises OSError/ValueError on undecodable input.
    """
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        if target_size is not None:
            h, w = target_size
            rgb = rgb.resize((w, h), resample=Image.BILINEAR)
        return from_uint8(np.asarray(rgb, dtype=np.uint8))
