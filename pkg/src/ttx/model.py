"""Denoiser models.

The desk-scale denoiser is a small gated MLP over pooled latent features,
sinusoidal step features and the conditioning vector, with an image-sized
output head. Parameters live in one flat buffer so checkpointing, Adam and
EMA all operate on a single vector; backprop is hand-written and verified
against finite differences.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from .errors import ShapeMismatchError


class DenoiserModel(ABC):
    """Predicts the injected noise from (x_t, t, conditioning)."""

    latent_shape: tuple[int, int, int] = (0, 0, 0)
    cond_dim: int = 0

    @abstractmethod
    def predict_noise(self, x_t: np.ndarray, t, cond: np.ndarray) -> np.ndarray:
        """x_t: (B, h, w, c); t: int or (B,) ints; cond: (B, D) -> same shape as x_t."""

    @property
    def parameters(self) -> np.ndarray:
        """Flat numeric parameter view; empty for stateless test doubles."""
        return np.zeros(0, dtype=np.float32)

    def set_parameters(self, flat: np.ndarray) -> None:
        if flat.size:
            raise ShapeMismatchError("this model has no parameters")

    def forward(self, x_t: np.ndarray, t, cond: np.ndarray):
        return self.predict_noise(x_t, t, cond), None

    def backward(self, cache, d_eps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        batch = d_eps.shape[0]
        return np.zeros(0, dtype=np.float32), np.zeros((batch, self.cond_dim), dtype=np.float32)

    def descriptor(self) -> dict:
        raise NotImplementedError


def time_features(t, t_scale: int, count: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal features of t / t_scale at geometric frequencies; (B, count)."""
    tau = np.atleast_1d(np.asarray(t, dtype=np.float64)) / float(t_scale)
    feats = np.empty((tau.shape[0], count), dtype=np.float64)
    for k in range(count // 2):
        ang = (2.0**k) * np.pi * tau
        feats[:, 2 * k] = np.sin(ang)
        feats[:, 2 * k + 1] = np.cos(ang)
    return feats.astype(dtype)


class CondMlpDenoiser(DenoiserModel):
    """Gated MLP denoiser: eps_hat = gate(h) * x + texture(h).

    The hidden layer sees 4x-pooled latent pixels, sinusoidal step features
    and the conditioning vector; the output head paints a full-resolution
    residual. Zero-initialized heads make a fresh model predict exactly zero
    noise, which is the untrained baseline used in comparisons.
    """

    KIND = "cond_mlp"

    def __init__(
        self,
        latent_shape: tuple[int, int, int],
        cond_dim: int = 64,
        hidden: int = 128,
        n_time_features: int = 16,
        pool: int = 4,
        t_scale: int = 200,
        dtype=np.float32,
        init_seed: int = 0,
    ):
        h, w, c = latent_shape
        if h % pool or w % pool:
            raise ShapeMismatchError(f"pool {pool} must divide spatial dims {latent_shape}")
        if n_time_features % 2:
            raise ShapeMismatchError("n_time_features must be even")
        self.latent_shape = (int(h), int(w), int(c))
        self.cond_dim = int(cond_dim)
        self.hidden = int(hidden)
        self.n_time_features = int(n_time_features)
        self.pool = int(pool)
        self.t_scale = int(t_scale)
        self.dtype = np.dtype(dtype)
        self.init_seed = int(init_seed)

        self.n = h * w * c
        self.n_pooled = (h // pool) * (w // pool) * c
        self.z_dim = self.n_pooled + n_time_features + cond_dim

        self._shapes = {
            "W1": (self.hidden, self.z_dim),
            "b1": (self.hidden,),
            "wg": (self.hidden,),
            "bg": (1,),
            "W2": (self.n, self.hidden),
            "b2": (self.n,),
        }
        total = sum(int(np.prod(s)) for s in self._shapes.values())
        self._theta = np.zeros(total, dtype=self.dtype)
        self._views: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in self._shapes.items():
            size = int(np.prod(shape))
            self._views[name] = self._theta[offset : offset + size].reshape(shape)
            offset += size

        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.init_seed, 7])))
        self._views["W1"][...] = (rng.standard_normal((self.hidden, self.z_dim)) / np.sqrt(self.z_dim)).astype(self.dtype)
        # b1, wg, bg, W2, b2 stay zero: a fresh model predicts eps_hat == 0.

    @property
    def parameters(self) -> np.ndarray:
        return self._theta

    def set_parameters(self, flat: np.ndarray) -> None:
        if flat.shape != self._theta.shape:
            raise ShapeMismatchError(f"parameter vector {flat.shape} != {self._theta.shape}")
        self._theta[...] = flat.astype(self.dtype)

    @property
    def param_count(self) -> int:
        return int(self._theta.size)

    def _features(self, x: np.ndarray, t, cond: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        b = x.shape[0]
        h, w, c = self.latent_shape
        if x.shape[1:] != (h, w, c):
            raise ShapeMismatchError(f"x_t shape {x.shape[1:]} != latent shape {self.latent_shape}")
        if cond.shape != (b, self.cond_dim):
            raise ShapeMismatchError(f"cond shape {cond.shape} != {(b, self.cond_dim)}")
        xf = x.reshape(b, self.n).astype(self.dtype)
        p = self.pool
        pooled = x.reshape(b, h // p, p, w // p, p, c).mean(axis=(2, 4)).reshape(b, self.n_pooled)
        tfeat = time_features(t, self.t_scale, self.n_time_features, dtype=self.dtype)
        if tfeat.shape[0] == 1 and b > 1:
            tfeat = np.broadcast_to(tfeat, (b, self.n_time_features))
        z = np.concatenate([pooled.astype(self.dtype), tfeat, cond.astype(self.dtype)], axis=1)
        return xf, z

    def forward(self, x_t: np.ndarray, t, cond: np.ndarray):
        xf, z = self._features(np.asarray(x_t), t, np.asarray(cond))
        v = self._views
        h1 = np.tanh(z @ v["W1"].T + v["b1"])
        gate = h1 @ v["wg"] + v["bg"][0]
        y = h1 @ v["W2"].T + v["b2"]
        eps = gate[:, None] * xf + y
        cache = (xf, z, h1, gate)
        return eps.reshape(x_t.shape), cache

    def predict_noise(self, x_t: np.ndarray, t, cond: np.ndarray) -> np.ndarray:
        eps, _ = self.forward(x_t, t, cond)
        return eps

    def backward(self, cache, d_eps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        xf, z, h1, _gate = cache
        v = self._views
        b = d_eps.shape[0]
        d_flat = d_eps.reshape(b, self.n).astype(self.dtype)

        d_gate = (d_flat * xf).sum(axis=1)
        d_h1 = d_flat @ v["W2"] + d_gate[:, None] * v["wg"][None, :]
        d_a1 = d_h1 * (1.0 - h1 * h1)

        grads = {
            "W1": d_a1.T @ z,
            "b1": d_a1.sum(axis=0),
            "wg": h1.T @ d_gate,
            "bg": np.array([d_gate.sum()], dtype=self.dtype),
            "W2": d_flat.T @ h1,
            "b2": d_flat.sum(axis=0),
        }
        flat = np.concatenate([grads[name].reshape(-1) for name in self._shapes]).astype(self.dtype)
        d_z = d_a1 @ v["W1"]
        d_cond = d_z[:, self.n_pooled + self.n_time_features :]
        return flat, d_cond

    def descriptor(self) -> dict:
        return {
            "kind": self.KIND,
            "latent_shape": list(self.latent_shape),
            "cond_dim": self.cond_dim,
            "hidden": self.hidden,
            "n_time_features": self.n_time_features,
            "pool": self.pool,
            "t_scale": self.t_scale,
            "dtype": self.dtype.name,
            "init_seed": self.init_seed,
        }

    @classmethod
    def from_descriptor(cls, desc: dict) -> "CondMlpDenoiser":
        if desc.get("kind") != cls.KIND:
            raise ShapeMismatchError(f"unknown model kind {desc.get('kind')!r}")
        return cls(
            latent_shape=tuple(desc["latent_shape"]),
            cond_dim=desc["cond_dim"],
            hidden=desc["hidden"],
            n_time_features=desc["n_time_features"],
            pool=desc["pool"],
            t_scale=desc["t_scale"],
            dtype=np.dtype(desc.get("dtype", "float32")),
            init_seed=desc.get("init_seed", 0),
        )


def model_from_descriptor(desc: dict) -> DenoiserModel:
    if desc.get("kind") == CondMlpDenoiser.KIND:
        return CondMlpDenoiser.from_descriptor(desc)
    raise ShapeMismatchError(f"unknown model kind {desc.get('kind')!r}")
