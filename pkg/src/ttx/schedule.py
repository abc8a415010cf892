"""Noise schedules for the diffusion process.

Arrays are float64 and 1-indexed through the accessors: beta(t), alpha(t)
and alpha_bar(t) accept t in 1..T, with alpha_bar(0) defined as 1.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidBoundsError

SCHEDULE_KINDS = ("linear", "cosine")


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    betas: np.ndarray       # (T,) float64, betas[t-1] = beta_t
    alphas: np.ndarray      # 1 - beta
    alpha_bars: np.ndarray  # cumulative product of alphas

    def __post_init__(self):
        T = len(self.betas)
        if T < 2:
            raise InvalidBoundsError(f"schedule needs T >= 2, got {T}")
        if self.alphas.shape != (T,) or self.alpha_bars.shape != (T,):
            raise InvalidBoundsError("schedule arrays disagree on length")
        if np.any(self.betas <= 0.0) or np.any(self.betas >= 1.0):
            raise InvalidBoundsError("betas must lie strictly inside (0, 1)")
        if np.any(np.diff(self.alpha_bars) >= 0.0):
            raise InvalidBoundsError("alpha_bar must be strictly decreasing")

    @property
    def T(self) -> int:
        return len(self.betas)

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        # alpha_bar(0) = 1 by convention; it anchors the posterior variance
        # at t=1 and the final DDIM step.
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])


def build_schedule(
    kind: str = "linear",
    T: int = 1000,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
) -> NoiseSchedule:
    """Construct a linear or cosine schedule of length T.

    Linear interpolates beta from beta_start (t=1) to beta_end (t=T). Cosine
    derives betas from the squared-cosine cumulative signal curve with the
    usual 0.008 offset, clipping betas at 0.999; the beta bounds are ignored.
    """
    if T < 2:
        raise InvalidBoundsError(f"T must be >= 2, got {T}")
    if kind == "linear":
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise InvalidBoundsError(
                f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif kind == "cosine":
        def f(u: float) -> float:
            return math.cos((u + 0.008) / 1.008 * math.pi / 2.0) ** 2

        f0 = f(0.0)
        bars = np.array([f(t / T) / f0 for t in range(T + 1)], dtype=np.float64)
        betas = 1.0 - bars[1:] / bars[:-1]
        betas = np.clip(betas, 1e-8, 0.999)
    else:
        raise InvalidBoundsError(f"unknown schedule kind {kind!r}")

    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(kind=kind, betas=betas, alphas=alphas, alpha_bars=alpha_bars)
