"""Forward and reverse diffusion processes, guidance, and the sampling loop.

Every operation is a pure function of its arguments; randomness only enters
through explicitly passed noise arrays or seeded generators, so the whole
chain is reproducible bit for bit.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .codec import LatentCodec
from .errors import (
    IncompatibleCheckpointError,
    InvalidRequestError,
    ShapeMismatchError,
    StepOrderViolationError,
    StepOutOfRangeError,
)
from .imaging import from_model_space
from .model import DenoiserModel
from .schedule import NoiseSchedule
from .text import TextEncoder

SAMPLER_METHODS = ("ddim", "ddpm")


def _check_step(t: int, T: int) -> None:
    if not (1 <= t <= T):
        raise StepOutOfRangeError(f"step t={t} outside 1..{T}")


def _check_shapes(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: {a.shape} vs {b.shape}")


def forward_diffuse(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form noising: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    _check_step(t, schedule.T)
    _check_shapes(np.asarray(x0), np.asarray(eps), "x0 vs eps")
    abar = schedule.alpha_bar(t)
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * eps


def predict_x0(x_t: np.ndarray, eps_hat: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Invert the closed-form noising given a noise estimate."""
    _check_step(t, schedule.T)
    _check_shapes(np.asarray(x_t), np.asarray(eps_hat), "x_t vs eps_hat")
    abar = schedule.alpha_bar(t)
    return (x_t - math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(abar)


def posterior_variance(t: int, schedule: NoiseSchedule) -> float:
    """beta-tilde_t, the ancestral posterior variance (0 at t=1)."""
    _check_step(t, schedule.T)
    abar_prev = schedule.alpha_bar(t - 1)
    abar = schedule.alpha_bar(t)
    return (1.0 - abar_prev) / (1.0 - abar) * schedule.beta(t)


def ddpm_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """One ancestral reverse step t -> t-1; the noise argument is ignored at t=1."""
    _check_step(t, schedule.T)
    _check_shapes(np.asarray(x_t), np.asarray(eps_hat), "x_t vs eps_hat")
    alpha = schedule.alpha(t)
    abar = schedule.alpha_bar(t)
    mu = (x_t - schedule.beta(t) / math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(alpha)
    if t == 1:
        return mu
    if noise is None:
        raise InvalidRequestError("ddpm_step needs noise for t > 1")
    _check_shapes(np.asarray(x_t), np.asarray(noise), "x_t vs noise")
    sigma = math.sqrt(posterior_variance(t, schedule))
    return mu + sigma * noise


def ddim_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
    eta: float = 0.0,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Generalized reverse step t -> t_prev; deterministic at eta=0."""
    if not (0 <= t_prev < t <= schedule.T):
        raise StepOrderViolationError(f"need 0 <= t_prev < t <= T, got t_prev={t_prev}, t={t}")
    if not (0.0 <= eta <= 1.0):
        raise InvalidRequestError(f"eta must be in [0, 1], got {eta}")
    _check_shapes(np.asarray(x_t), np.asarray(eps_hat), "x_t vs eps_hat")

    abar = schedule.alpha_bar(t)
    abar_prev = schedule.alpha_bar(t_prev)
    x0_hat = predict_x0(x_t, eps_hat, t, schedule)
    sigma = eta * math.sqrt((1.0 - abar_prev) / (1.0 - abar)) * math.sqrt(1.0 - abar / abar_prev)
    dir_coeff = math.sqrt(max(1.0 - abar_prev - sigma * sigma, 0.0))
    out = math.sqrt(abar_prev) * x0_hat + dir_coeff * eps_hat
    if sigma > 0.0:
        if noise is None:
            raise InvalidRequestError("ddim_step needs noise when eta > 0")
        _check_shapes(np.asarray(x_t), np.asarray(noise), "x_t vs noise")
        out = out + sigma * noise
    return out


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, scale: float) -> np.ndarray:
    """Classifier-free guidance blend: eps_u + scale * (eps_c - eps_u)."""
    eu = np.asarray(eps_uncond)
    ec = np.asarray(eps_cond)
    _check_shapes(eu, ec, "eps_uncond vs eps_cond")
    if scale < 0.0:
        raise InvalidRequestError(f"guidance scale must be >= 0, got {scale}")
    # Exact at the endpoints so that guidance 0 is bit-identical to the
    # unconditional path and guidance 1 to the conditional one.
    if scale == 0.0:
        return eu
    if scale == 1.0:
        return ec
    return eu + scale * (ec - eu)


def step_sequence(T: int, steps: int) -> list[int]:
    """Uniformly strided descending step indices ending at 1, ties toward larger t."""
    if not (1 <= steps <= T):
        raise InvalidRequestError(f"steps must be in 1..{T}, got {steps}")
    if steps == 1:
        return [T]
    values = np.linspace(T, 1, steps)
    ts = [int(math.floor(v + 0.5)) for v in values]
    if len(set(ts)) != len(ts):
        raise InvalidRequestError(f"stride collision for T={T}, steps={steps}")
    return ts


def sample(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    codec: LatentCodec,
    text_encoder: TextEncoder,
    *,
    prompt: str,
    seed: int,
    count: int = 1,
    steps: int = 50,
    guidance: float = 3.0,
    method: str = "ddim",
    eta: float = 0.0,
) -> np.ndarray:
    """Generate ``count`` images for a prompt; returns (count, H, W, 3) in [0, 1].

    A dedicated random stream is seeded from ``seed``; each step queries the
    model twice (null and prompt conditioning) and blends with cfg_combine.
    """
    if count < 1:
        raise InvalidRequestError(f"count must be >= 1, got {count}")
    if guidance < 0.0:
        raise InvalidRequestError(f"guidance must be >= 0, got {guidance}")
    if method not in SAMPLER_METHODS:
        raise InvalidRequestError(f"unknown sampler method {method!r}")
    if method == "ddpm" and steps != schedule.T:
        raise InvalidRequestError("ddpm sampling runs the full chain; use steps == T")
    if steps > schedule.T:
        raise InvalidRequestError(f"steps={steps} exceeds schedule T={schedule.T}")

    latent_shape = tuple(model.latent_shape)
    image_shape = codec.image_shape(latent_shape)
    if codec.latent_shape(image_shape) != latent_shape:
        raise IncompatibleCheckpointError(
            f"codec {codec.name!r} latent shape {codec.latent_shape(image_shape)} "
            f"!= model latent shape {latent_shape}"
        )
    if text_encoder.dim != model.cond_dim:
        raise IncompatibleCheckpointError(
            f"text encoder dim {text_encoder.dim} != model cond dim {model.cond_dim}"
        )

    cond = text_encoder.encode(prompt)
    null = text_encoder.encode("")
    cond_batch = np.repeat(cond.values[None, :], count, axis=0)
    null_batch = np.repeat(null.values[None, :], count, axis=0)

    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.standard_normal((count, *latent_shape))

    ts: Sequence[int] = step_sequence(schedule.T, steps)
    if method == "ddim":
        pairs = list(zip(ts, [*ts[1:], 0]))
        for t, t_prev in pairs:
            eps_u = model.predict_noise(x, t, null_batch)
            eps_c = model.predict_noise(x, t, cond_batch)
            eps = cfg_combine(eps_u, eps_c, guidance)
            noise = rng.standard_normal(x.shape) if (eta > 0.0 and t_prev > 0) else None
            x = ddim_step(x, eps, t, t_prev, schedule, eta=eta, noise=noise)
    else:
        for t in ts:
            eps_u = model.predict_noise(x, t, null_batch)
            eps_c = model.predict_noise(x, t, cond_batch)
            eps = cfg_combine(eps_u, eps_c, guidance)
            noise = rng.standard_normal(x.shape) if t > 1 else None
            x = ddpm_step(x, eps, t, schedule, noise)

    images = codec.decode(x)
    return from_model_space(images)
