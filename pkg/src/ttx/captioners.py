"""Caption adapters.

The default in-repo captioner is a deterministic template over simple image
statistics; heavyweight pretrained caption models are wired in from outside
through the same adapter interface.
"""

from __future__ import annotations

import colorsys
import importlib
from abc import ABC, abstractmethod

import numpy as np

_HUE_NAMES = (
    (0.042, "red"),
    (0.11, "orange"),
    (0.18, "yellow"),
    (0.42, "green"),
    (0.55, "cyan"),
    (0.70, "blue"),
    (0.83, "purple"),
    (0.96, "magenta"),
    (1.01, "red"),
)


class CaptionerAdapter(ABC):
    """Maps an image to a non-empty caption, deterministically."""

    name: str = "captioner"

    @abstractmethod
    def caption(self, image: np.ndarray) -> str:
        raise NotImplementedError


class TemplateCaptioner(CaptionerAdapter):
    """Deterministic stub captioner describing tone, hue and density."""

    name = "stub"

    def caption(self, image: np.ndarray) -> str:
        mean_rgb = image.reshape(-1, image.shape[-1]).mean(axis=0)
        brightness = float(mean_rgb.mean())
        tone = "dark" if brightness < 0.35 else ("muted" if brightness < 0.65 else "bright")
        h, s, _v = colorsys.rgb_to_hsv(*[float(c) for c in mean_rgb[:3]])
        if s < 0.08:
            hue = "gray"
        else:
            hue = next(name for limit, name in _HUE_NAMES if h < limit)
        busy = float(image.std())
        density = "sparse" if busy < 0.12 else ("ornate" if busy < 0.3 else "busy")
        return f"a {tone} {hue} {density} pattern motif"


class ConstantCaptioner(CaptionerAdapter):
    """Returns a fixed caption; useful for tests and smoke runs."""

    name = "constant"

    def __init__(self, text: str):
        self.text = text

    def caption(self, image: np.ndarray) -> str:
        return self.text


def load_external_captioner(ref: str) -> CaptionerAdapter:
    """Instantiate a user-supplied adapter from a ``module:attribute`` reference.

    The attribute may be an adapter instance or a zero-argument factory.
    """
    module_name, _, attr = ref.partition(":")
    if not module_name or not attr:
        raise ValueError(f"expected 'module:attribute', got {ref!r}")
    obj = getattr(importlib.import_module(module_name), attr)
    adapter = obj() if callable(obj) and not isinstance(obj, CaptionerAdapter) else obj
    if not isinstance(adapter, CaptionerAdapter):
        raise TypeError(f"{ref!r} did not yield a CaptionerAdapter")
    return adapter
