"""Latent codecs.

The denoiser runs in the codec's latent space. The default is the identity
codec (pixel space); a fixed 2x pool/upsample codec is available for runs
that want a smaller latent grid. Codecs are frozen at training time and
described in the checkpoint so sampling rebuilds the exact same transform.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from .errors import ShapeMismatchError


class LatentCodec(ABC):
    """Invertible-enough image <-> latent transform with a declared tolerance."""

    name: str = "codec"
    scale_factor: int = 1
    tolerance: float = 0.0  # max mean-absolute reconstruction error

    @abstractmethod
    def encode(self, image: np.ndarray) -> np.ndarray:
        """Image (..., H, W, C), model space, -> latent (..., h, w, c)."""

    @abstractmethod
    def decode(self, latent: np.ndarray) -> np.ndarray:
        """Latent (..., h, w, c) -> image (..., H, W, C), model space."""

    def latent_shape(self, image_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        h, w, c = image_shape
        if h % self.scale_factor or w % self.scale_factor:
            raise ShapeMismatchError(
                f"image shape {image_shape} not divisible by scale factor {self.scale_factor}"
            )
        return (h // self.scale_factor, w // self.scale_factor, c)

    def image_shape(self, latent_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        h, w, c = latent_shape
        return (h * self.scale_factor, w * self.scale_factor, c)

    def descriptor(self) -> dict:
        return {"kind": self.name}


class IdentityCodec(LatentCodec):
    """Pixel-space diffusion: latent == image."""

    name = "identity"
    scale_factor = 1
    tolerance = 0.0

    def encode(self, image: np.ndarray) -> np.ndarray:
        return np.asarray(image)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        return np.asarray(latent)


class AvgPool2xCodec(LatentCodec):
    """Fixed 2x codec: 2x2 mean pooling down, nearest-neighbor up.

    Exact on images that are constant per 2x2 block; the declared tolerance
    bounds the reconstruction error on desk-scale pattern imagery.
    """

    name = "avgpool2x"
    scale_factor = 2
    tolerance = 0.2

    def encode(self, image: np.ndarray) -> np.ndarray:
        arr = np.asarray(image)
        *lead, h, w, c = arr.shape
        if h % 2 or w % 2:
            raise ShapeMismatchError(f"avgpool2x needs even spatial dims, got {arr.shape}")
        shaped = arr.reshape(*lead, h // 2, 2, w // 2, 2, c)
        return shaped.mean(axis=(-4, -2))

    def decode(self, latent: np.ndarray) -> np.ndarray:
        arr = np.asarray(latent)
        return np.repeat(np.repeat(arr, 2, axis=-3), 2, axis=-2)


_CODECS = {cls.name: cls for cls in (IdentityCodec, AvgPool2xCodec)}


def codec_from_descriptor(descriptor: dict) -> LatentCodec:
    kind = descriptor.get("kind")
    if kind not in _CODECS:
        raise ShapeMismatchError(f"unknown codec kind {kind!r}")
    return _CODECS[kind]()


def make_codec(name: str) -> LatentCodec:
    return codec_from_descriptor({"kind": name})
