"""Checkpoint container and its binary file format.

Layout: magic "TTXD", format version (u32 LE), sha256 content digest of the
segment blob, then five length-prefixed segments (u64 LE lengths):

  1. architecture descriptor      UTF-8 JSON (model, codec, layout, schedule meta)
  2. parameter vector             little-endian float32
  3. schedule arrays              little-endian float64 (betas | alphas | alpha_bars)
  4. text-encoder vocabulary      UTF-8 JSON
  5. config snapshot + metrics    UTF-8 JSON

The parameter vector is the full trainable state: denoiser parameters
followed by the text-embedding table. Save -> load round-trips bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import LatentCodec, codec_from_descriptor
from .errors import (
    CorruptCheckpointError,
    DigestMismatchError,
    IncompatibleCheckpointError,
    VersionMismatchError,
)
from .model import DenoiserModel, model_from_descriptor
from .schedule import NoiseSchedule
from .text import TextEncoder

MAGIC = b"TTXD"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to rebuild the generator: weights, schedule, text, codec."""

    architecture: dict          # model descriptor + embedding layout + schedule meta
    params: np.ndarray          # float32 flat vector: denoiser params ++ embedding table
    schedule: NoiseSchedule
    encoder_state: dict         # vocabulary + reserved row indices
    codec_descriptor: dict
    config_snapshot: dict
    metrics_history: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.params = np.ascontiguousarray(self.params, dtype=np.float32)

    # --- component reconstruction -------------------------------------------

    def _split_params(self) -> tuple[np.ndarray, np.ndarray]:
        n_model = int(self.architecture["denoiser_param_count"])
        emb_shape = tuple(self.architecture["embedding_shape"])
        expected = n_model + int(np.prod(emb_shape))
        if self.params.size != expected:
            raise IncompatibleCheckpointError(
                f"parameter vector has {self.params.size} values, descriptor implies {expected}"
            )
        theta = self.params[:n_model]
        emb = self.params[n_model:].reshape(emb_shape)
        return theta, emb

    def build_components(self) -> tuple[DenoiserModel, TextEncoder, NoiseSchedule, LatentCodec]:
        theta, emb = self._split_params()
        model = model_from_descriptor(self.architecture["denoiser"])
        model.set_parameters(theta)
        encoder = TextEncoder.from_state(self.encoder_state, emb.copy())
        codec = codec_from_descriptor(self.codec_descriptor)
        return model, encoder, self.schedule, codec

    # --- serialization ---------------------------------------------------------

    def _segments(self) -> list[bytes]:
        arrays = np.concatenate([self.schedule.betas, self.schedule.alphas, self.schedule.alpha_bars])
        snapshot = {"train_config": self.config_snapshot, "metrics_history": self.metrics_history}
        return [
            json.dumps(self.architecture, sort_keys=True).encode("utf-8"),
            self.params.astype("<f4").tobytes(),
            arrays.astype("<f8").tobytes(),
            json.dumps(self.encoder_state, sort_keys=True).encode("utf-8"),
            json.dumps(snapshot, sort_keys=True).encode("utf-8"),
        ]

    def serialize(self) -> bytes:
        blob = b"".join(struct.pack("<Q", len(seg)) + seg for seg in self._segments())
        digest = hashlib.sha256(blob).digest()
        return MAGIC + struct.pack("<I", self.format_version) + digest + blob

    def digest(self) -> str:
        blob = b"".join(struct.pack("<Q", len(seg)) + seg for seg in self._segments())
        return hashlib.sha256(blob).hexdigest()


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint.serialize())
    return path


def _read_segments(blob: bytes) -> list[bytes]:
    segments = []
    offset = 0
    while offset < len(blob):
        if offset + 8 > len(blob):
            raise CorruptCheckpointError("truncated segment length")
        (length,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        if offset + length > len(blob):
            raise CorruptCheckpointError("truncated segment payload")
        segments.append(blob[offset : offset + length])
        offset += length
    return segments


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 4 + 32 or raw[:4] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    stored_digest = raw[8:40]
    blob = raw[40:]
    if hashlib.sha256(blob).digest() != stored_digest:
        raise DigestMismatchError(f"{path}: content digest mismatch")
    segments = _read_segments(blob)
    if len(segments) != 5:
        raise CorruptCheckpointError(f"{path}: expected 5 segments, found {len(segments)}")

    architecture = json.loads(segments[0].decode("utf-8"))
    params = np.frombuffer(segments[1], dtype="<f4").astype(np.float32)
    arrays = np.frombuffer(segments[2], dtype="<f8")
    if arrays.size % 3:
        raise CorruptCheckpointError(f"{path}: schedule arrays not divisible by 3")
    T = arrays.size // 3
    schedule = NoiseSchedule(
        kind=architecture.get("schedule", {}).get("kind", "linear"),
        betas=arrays[:T].copy(),
        alphas=arrays[T : 2 * T].copy(),
        alpha_bars=arrays[2 * T :].copy(),
    )
    encoder_state = json.loads(segments[3].decode("utf-8"))
    snapshot = json.loads(segments[4].decode("utf-8"))
    return Checkpoint(
        architecture=architecture,
        params=params,
        schedule=schedule,
        encoder_state=encoder_state,
        codec_descriptor=architecture["codec"],
        config_snapshot=snapshot.get("train_config", {}),
        metrics_history=snapshot.get("metrics_history", {}),
        format_version=version,
    )


def make_checkpoint(
    model: DenoiserModel,
    encoder: TextEncoder,
    schedule: NoiseSchedule,
    codec: LatentCodec,
    config_snapshot: dict,
    metrics_history: dict | None = None,
    params_override: np.ndarray | None = None,
) -> Checkpoint:
    """Assemble a checkpoint from live components (or EMA parameters)."""
    theta = model.parameters
    emb = encoder.embedding
    params = params_override if params_override is not None else np.concatenate([theta, emb.reshape(-1)])
    architecture = {
        "denoiser": model.descriptor(),
        "denoiser_param_count": int(theta.size),
        "embedding_shape": list(emb.shape),
        "codec": codec.descriptor(),
        "schedule": {"kind": schedule.kind, "T": schedule.T},
    }
    return Checkpoint(
        architecture=architecture,
        params=np.asarray(params, dtype=np.float32),
        schedule=schedule,
        encoder_state=encoder.state(),
        codec_descriptor=codec.descriptor(),
        config_snapshot=config_snapshot,
        metrics_history=metrics_history or {},
    )
