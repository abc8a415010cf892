"""Noise-prediction training: config, Adam, the step function and the loop.

Everything that draws randomness (data order, timesteps, noise, conditioning
dropout, validation draws) pulls from streams seeded off config.seed, so a
training run is a deterministic function of (initial state, manifests,
config) and two identical runs produce bit-identical checkpoints.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint, make_checkpoint
from .codec import LatentCodec, make_codec
from .dataset import DatasetManifest
from .errors import (
    EmptyBatchError,
    NonFiniteLossError,
    ShapeIncompatibilityError,
)
from .imaging import to_model_space
from .model import CondMlpDenoiser, DenoiserModel
from .schedule import NoiseSchedule, build_schedule
from .text import TextEncoder, build_text_encoder

# Stream roles: keep per-purpose RNGs disjoint under one seed.
_ROLE_DATA = 1
_ROLE_NOISE = 2
_ROLE_VAL = 3


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    lr_half_period: int = 10  # halve the learning rate every this many epochs
    cond_dropout_prob: float = 0.1
    ema_decay: float | None = 0.999
    seed: int = 0
    schedule_kind: str = "linear"
    timesteps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.05
    image_size: tuple[int, int] = (32, 32)
    cond_dim: int = 64
    hidden: int = 128
    n_time_features: int = 16
    pool: int = 4
    codec: str = "identity"

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 <= self.cond_dropout_prob < 1.0):
            raise ValueError(f"cond_dropout_prob must be in [0, 1), got {self.cond_dropout_prob}")
        if self.ema_decay is not None and not (0.0 <= self.ema_decay < 1.0):
            raise ValueError(f"ema_decay must be in [0, 1) when enabled, got {self.ema_decay}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.lr_half_period < 1:
            raise ValueError(f"lr_half_period must be >= 1, got {self.lr_half_period}")

    def lr_at_epoch(self, epoch: int) -> float:
        return self.learning_rate * 0.5 ** (epoch // self.lr_half_period)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kwargs = dict(d)
        if "image_size" in kwargs:
            kwargs["image_size"] = tuple(kwargs["image_size"])
        return cls(**kwargs)


class Adam:
    """Adam with bias correction over a list of parameter arrays, updated in place."""

    def __init__(
        self,
        params: Sequence[np.ndarray],
        learning_rate: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray], learning_rate: float | None = None) -> None:
        lr = self.learning_rate if learning_rate is None else learning_rate
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g.reshape(p.shape).astype(p.dtype)
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)


class EmaTracker:
    """Parameter EMA with the usual (1+n)/(10+n) warmup ramp on the decay."""

    def __init__(self, params: Sequence[np.ndarray], decay: float):
        self.decay = decay
        self.shadow = [p.copy() for p in params]
        self.n_updates = 0

    def update(self, params: Sequence[np.ndarray]) -> None:
        self.n_updates += 1
        d = min(self.decay, (1.0 + self.n_updates) / (10.0 + self.n_updates))
        for s, p in zip(self.shadow, params):
            s[...] = d * s + (1.0 - d) * p


def _cond_matrix(encoder: TextEncoder, rows_per_item: Sequence[Sequence[int]]) -> np.ndarray:
    cond = np.empty((len(rows_per_item), encoder.dim), dtype=np.float32)
    for i, rows in enumerate(rows_per_item):
        cond[i] = encoder.embedding[list(rows)].mean(axis=0)
    return cond


def noise_loss(eps_hat: np.ndarray, eps: np.ndarray) -> float:
    """Mean over batch and pixels of the squared noise error."""
    diff = np.asarray(eps_hat, dtype=np.float64) - np.asarray(eps, dtype=np.float64)
    return float(np.mean(diff * diff))


def compute_loss_and_grads(
    model: DenoiserModel,
    encoder: TextEncoder,
    x0: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
    rows_per_item: Sequence[Sequence[int]],
    schedule: NoiseSchedule,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus analytic gradients for the denoiser and the embedding table."""
    abar = schedule.alpha_bars[np.asarray(t) - 1].reshape((-1,) + (1,) * (x0.ndim - 1))
    x_t = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps

    cond = _cond_matrix(encoder, rows_per_item)
    eps_hat, cache = model.forward(x_t, t, cond)

    b = x0.shape[0]
    n = int(np.prod(x0.shape[1:]))
    diff = np.asarray(eps_hat, dtype=np.float64) - np.asarray(eps, dtype=np.float64)
    loss = float(np.mean(diff * diff))

    d_eps = (2.0 / (b * n)) * diff
    flat_grad, d_cond = model.backward(cache, d_eps)

    emb_grad = np.zeros_like(encoder.embedding)
    for i, rows in enumerate(rows_per_item):
        share = d_cond[i] / len(rows)
        for r in rows:
            emb_grad[r] += share
    return loss, flat_grad, emb_grad


def training_step(
    model: DenoiserModel,
    batch: Sequence[tuple[np.ndarray, str]],
    schedule: NoiseSchedule,
    text_encoder: TextEncoder,
    codec: LatentCodec,
    config: TrainConfig,
    random_stream: np.random.Generator,
    optimizer: Adam | None = None,
    learning_rate: float | None = None,
) -> float:
    """One optimizer update on a batch of (model-space image, caption) pairs.

    Draw order per step is pinned: timesteps, then noise, then conditioning
    dropout. Returns the pre-update loss.
    """
    if len(batch) == 0:
        raise EmptyBatchError("training_step received an empty batch")
    images = np.stack([item[0] for item in batch]).astype(np.float32)
    captions = [item[1] for item in batch]
    x0 = codec.encode(images)

    b = x0.shape[0]
    t = random_stream.integers(1, schedule.T + 1, size=b)
    eps = random_stream.standard_normal(x0.shape)
    drop = random_stream.random(b) < config.cond_dropout_prob

    rows_per_item: list[list[int]] = []
    for caption, dropped in zip(captions, drop):
        rows = text_encoder.token_rows(caption)
        if dropped or not rows:
            rows = [text_encoder.null_index]
        rows_per_item.append(rows)

    loss, flat_grad, emb_grad = compute_loss_and_grads(
        model, text_encoder, x0, t, eps, rows_per_item, schedule
    )
    if optimizer is not None:
        optimizer.step([flat_grad, emb_grad], learning_rate)
    return loss


def validation_loss(
    model: DenoiserModel,
    encoder: TextEncoder,
    codec: LatentCodec,
    schedule: NoiseSchedule,
    images: np.ndarray,
    captions: Sequence[str],
    fixed_t: np.ndarray,
    fixed_eps: np.ndarray,
) -> float:
    """Noise loss on pre-drawn (t, eps) per item: comparable across epochs."""
    x0 = codec.encode(images)
    abar = schedule.alpha_bars[fixed_t - 1].reshape((-1,) + (1,) * (x0.ndim - 1))
    x_t = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * fixed_eps
    rows_per_item = []
    for caption in captions:
        rows = encoder.token_rows(caption)
        rows_per_item.append(rows if rows else [encoder.null_index])
    cond = _cond_matrix(encoder, rows_per_item)
    eps_hat = model.predict_noise(x_t, fixed_t, cond)
    return noise_loss(eps_hat, fixed_eps)


def _manifest_arrays(manifest: DatasetManifest) -> tuple[np.ndarray, list[str]]:
    images = np.stack([to_model_space(rec.image) for rec in manifest.records])
    captions = [rec.caption for rec in manifest.records]
    return images, captions


def _rng(seed: int, role: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, role])))


def init_components(
    train_manifest: DatasetManifest,
    config: TrainConfig,
) -> tuple[DenoiserModel, TextEncoder, NoiseSchedule, LatentCodec]:
    """Fresh components for training from scratch (also the untrained baseline)."""
    schedule = build_schedule(config.schedule_kind, config.timesteps, config.beta_start, config.beta_end)
    codec = make_codec(config.codec)
    h, w = config.image_size
    latent_shape = codec.latent_shape((h, w, 3))
    encoder = build_text_encoder(
        (rec.caption for rec in train_manifest.records),
        taxonomy=train_manifest.taxonomy,
        dim=config.cond_dim,
        seed=config.seed,
    )
    model = CondMlpDenoiser(
        latent_shape=latent_shape,
        cond_dim=config.cond_dim,
        hidden=config.hidden,
        n_time_features=config.n_time_features,
        pool=config.pool,
        t_scale=config.timesteps,
        init_seed=config.seed,
    )
    return model, encoder, schedule, codec


def init_checkpoint(train_manifest: DatasetManifest, config: TrainConfig) -> Checkpoint:
    """Untrained checkpoint: the baseline side of base-vs-fine-tuned comparisons."""
    config.validate()
    _check_size(train_manifest, config)
    model, encoder, schedule, codec = init_components(train_manifest, config)
    return make_checkpoint(model, encoder, schedule, codec, config.to_dict(), {})


def _check_size(manifest: DatasetManifest, config: TrainConfig) -> None:
    if tuple(manifest.image_size) != tuple(config.image_size):
        raise ShapeIncompatibilityError(
            f"manifest image size {manifest.image_size} != config {config.image_size}"
        )


def finetune(
    initial_checkpoint: Checkpoint | None,
    train_manifest: DatasetManifest,
    val_manifest: DatasetManifest,
    config: TrainConfig,
) -> Checkpoint:
    """Train (or continue training) the denoiser on a manifest.

    With an initial checkpoint the model, text encoder, schedule and codec are
    taken from it; otherwise fresh components are built from the config. Both
    paths run the same loop. Emits EMA parameters when EMA is enabled.
    """
    config.validate()
    _check_size(train_manifest, config)
    _check_size(val_manifest, config)
    if not train_manifest.records:
        raise EmptyBatchError("training manifest has no records")
    if not val_manifest.records:
        raise EmptyBatchError("validation manifest has no records")

    if initial_checkpoint is not None:
        model, encoder, schedule, codec = initial_checkpoint.build_components()
        h, w = config.image_size
        if codec.latent_shape((h, w, 3)) != tuple(model.latent_shape):
            raise ShapeIncompatibilityError(
                f"checkpoint latent shape {model.latent_shape} incompatible with image size {config.image_size}"
            )
    else:
        model, encoder, schedule, codec = init_components(train_manifest, config)

    train_images, train_captions = _manifest_arrays(train_manifest)
    val_images, val_captions = _manifest_arrays(val_manifest)

    data_rng = _rng(config.seed, _ROLE_DATA)
    noise_rng = _rng(config.seed, _ROLE_NOISE)
    val_rng = _rng(config.seed, _ROLE_VAL)

    latent_shape = codec.latent_shape((*config.image_size, 3))
    n_val = len(val_manifest.records)
    fixed_t = val_rng.integers(1, schedule.T + 1, size=n_val)
    fixed_eps = val_rng.standard_normal((n_val, *latent_shape))

    optimizer = Adam([model.parameters, encoder.embedding], learning_rate=config.learning_rate)
    ema = EmaTracker([model.parameters, encoder.embedding], config.ema_decay) if config.ema_decay is not None else None

    history: dict[str, list[float]] = {"train_loss": [], "val_loss": []}
    last_good: Checkpoint | None = None

    n_train = len(train_manifest.records)
    for epoch in range(config.epochs):
        lr = config.lr_at_epoch(epoch)
        order = data_rng.permutation(n_train)
        losses = []
        for start in range(0, n_train, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = [(train_images[i], train_captions[i]) for i in idx]
            loss = training_step(
                model, batch, schedule, encoder, codec, config, noise_rng, optimizer, lr
            )
            if not np.isfinite(loss):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch}, step {start // config.batch_size}",
                    last_good_checkpoint=last_good,
                )
            if ema is not None:
                ema.update([model.parameters, encoder.embedding])
            losses.append(loss)

        history["train_loss"].append(float(np.mean(losses)))
        history["val_loss"].append(
            validation_loss(model, encoder, codec, schedule, val_images, val_captions, fixed_t, fixed_eps)
        )
        last_good = _emit(model, encoder, schedule, codec, config, history, ema)

    return last_good


def _emit(model, encoder, schedule, codec, config, history, ema) -> Checkpoint:
    params_override = None
    if ema is not None:
        params_override = np.concatenate([ema.shadow[0], ema.shadow[1].reshape(-1)])
    return make_checkpoint(
        model,
        encoder,
        schedule,
        codec,
        config.to_dict(),
        {k: list(v) for k, v in history.items()},
        params_override=params_override,
    )
