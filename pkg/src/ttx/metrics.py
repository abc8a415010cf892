"""Quantitative evaluation: image/keyword similarity and perceptual distance.

Both metrics are defined against pluggable interfaces. The in-repo reference
implementations are deterministic and weight-free: a 30-feature statistics
embedder for the joint image/keyword space, and a fixed random convolutional
feature bank (3 layers x 16 channels, kernels drawn once from a pinned seed)
for perceptual distance. Adapters for external pretrained models plug in
behind the same interfaces.
"""

from __future__ import annotations

import hashlib
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint
from .dataset import DatasetManifest
from .diffusion import sample
from .errors import (
    EmptyImageSetError,
    EmptySetError,
    NoRecordsForKeywordError,
    UnknownKeywordError,
)

REPORT_VERSION = 1

# --- interfaces -------------------------------------------------------------


class JointEmbedder(ABC):
    """Image and keyword embeddings into one unit-norm space."""

    name: str = "embedder"

    @abstractmethod
    def embed_image(self, image: np.ndarray) -> np.ndarray:
        """Storage-space image (H, W, 3) in [0, 1] -> unit vector (E,)."""

    def embed_text(self, keyword: str, reference_manifest: DatasetManifest) -> np.ndarray:
        """Keyword -> unit vector; default: normalized centroid of tagged images."""
        return _text_centroid(self, keyword, reference_manifest)


class FeatureExtractor(ABC):
    """Per-layer, channel-normalized feature stacks for perceptual distance."""

    name: str = "extractor"

    @abstractmethod
    def features(self, image: np.ndarray) -> list[np.ndarray]:
        ...


# --- reference embedder --------------------------------------------------------

# Fixed per-feature scales: channel means, channel stds, 8 orientation bins,
# 16 autocorrelation lags. Pure scaling keeps the final L2 normalization
# invariant under global rescaling of the raw features.
_FEATURE_SCALE = np.array([0.5] * 3 + [0.25] * 3 + [0.125] * 8 + [0.5] * 16, dtype=np.float64)

_N_ORIENT_BINS = 8
_N_LAGS = 8


def _grayscale(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=np.float64).mean(axis=-1)


def orientation_histogram(image: np.ndarray) -> np.ndarray:
    """Magnitude-weighted 8-bin histogram of wrapped central-difference gradients.

    Gradients of a constant image carry no mass; the histogram is then
    uniform by symmetry.
    """
    z = _grayscale(image)
    gx = (np.roll(z, -1, axis=1) - np.roll(z, 1, axis=1)) / 2.0
    gy = (np.roll(z, -1, axis=0) - np.roll(z, 1, axis=0)) / 2.0
    mag = np.hypot(gx, gy)
    total = mag.sum()
    if total <= 1e-12:
        return np.full(_N_ORIENT_BINS, 1.0 / _N_ORIENT_BINS)
    angle = np.arctan2(gy, gx)  # (-pi, pi]
    bins = (np.floor((angle + np.pi) / (2.0 * np.pi) * _N_ORIENT_BINS).astype(int)) % _N_ORIENT_BINS
    hist = np.bincount(bins.reshape(-1), weights=mag.reshape(-1), minlength=_N_ORIENT_BINS)
    return hist / total


def autocorrelation_profile(image: np.ndarray) -> np.ndarray:
    """Circular autocorrelation at lags 1..8 along columns then rows (16 values)."""
    z = _grayscale(image)
    z = z - z.mean()
    denom = float((z * z).sum())
    out = np.zeros(2 * _N_LAGS)
    if denom <= 1e-12:
        return out
    for lag in range(1, _N_LAGS + 1):
        out[lag - 1] = float((z * np.roll(z, lag, axis=1)).sum()) / denom
        out[_N_LAGS + lag - 1] = float((z * np.roll(z, lag, axis=0)).sum()) / denom
    return out


class StatsEmbedder(JointEmbedder):
    """30-feature statistics embedder: color moments, orientation, periodicity."""

    name = "stats-v1"

    def raw_features(self, image: np.ndarray) -> np.ndarray:
        arr = np.asarray(image, dtype=np.float64)
        means = arr.reshape(-1, arr.shape[-1]).mean(axis=0)
        stds = arr.reshape(-1, arr.shape[-1]).std(axis=0)
        hist = orientation_histogram(arr)
        acorr = autocorrelation_profile(arr)
        return np.concatenate([means, stds, hist, acorr])

    def finalize(self, raw: np.ndarray) -> np.ndarray:
        scaled = np.asarray(raw, dtype=np.float64) / _FEATURE_SCALE[: raw.shape[0]]
        norm = float(np.linalg.norm(scaled))
        if norm <= 1e-12:
            unit = np.zeros_like(scaled)
            unit[0] = 1.0
            return unit
        return scaled / norm

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        return self.finalize(self.raw_features(image))


_TEXT_CACHE: dict[tuple[str, str, str], np.ndarray] = {}


def _text_centroid(embedder: JointEmbedder, keyword: str, manifest: DatasetManifest) -> np.ndarray:
    if not manifest.taxonomy.is_canonical(keyword):
        raise UnknownKeywordError(f"not a canonical keyword: {keyword!r}")
    key = (embedder.name, manifest.checksum, keyword)
    cached = _TEXT_CACHE.get(key)
    if cached is not None:
        return cached.copy()
    records = manifest.records_for_keyword(keyword)
    if not records:
        raise NoRecordsForKeywordError(f"no records tagged {keyword!r} in the reference manifest")
    centroid = np.mean([embedder.embed_image(rec.image) for rec in records], axis=0)
    norm = float(np.linalg.norm(centroid))
    unit = centroid / norm if norm > 1e-12 else embedder.embed_image(records[0].image)
    _TEXT_CACHE[key] = unit
    return unit.copy()


def embed_image(image: np.ndarray, embedder: JointEmbedder) -> np.ndarray:
    return embedder.embed_image(image)


def embed_text(keyword: str, reference_manifest: DatasetManifest, embedder: JointEmbedder) -> np.ndarray:
    return embedder.embed_text(keyword, reference_manifest)


def clip_similarity(
    images: Sequence[np.ndarray],
    keyword: str,
    reference_manifest: DatasetManifest,
    embedder: JointEmbedder,
) -> float:
    """100 x mean cosine between image embeddings and the keyword embedding."""
    if len(images) == 0:
        raise EmptyImageSetError("clip_similarity needs at least one image")
    text = embedder.embed_text(keyword, reference_manifest)
    cosines = [float(np.dot(embedder.embed_image(img), text)) for img in images]
    return 100.0 * float(np.mean(cosines))


# --- reference feature extractor ----------------------------------------------------

_BANK_SEED = 1742
_BANK_LAYERS = 3
_BANK_CHANNELS = 16
_KERNEL = 3


def _conv_bank() -> list[np.ndarray]:
    """Kernels drawn once from a pinned seed; cached as module constants."""
    rng = np.random.Generator(np.random.PCG64(_BANK_SEED))
    kernels = []
    in_ch = 3
    for _ in range(_BANK_LAYERS):
        fan_in = in_ch * _KERNEL * _KERNEL
        k = rng.standard_normal((_BANK_CHANNELS, in_ch, _KERNEL, _KERNEL)) * np.sqrt(2.0 / fan_in)
        kernels.append(k)
        in_ch = _BANK_CHANNELS
    return kernels


_BANK = _conv_bank()


def _conv2d_wrap(x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """3x3 same-size convolution with wrap padding; x: (H, W, Cin) -> (H, W, Cout)."""
    shifts = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            shifts.append(np.roll(np.roll(x, dy, axis=0), dx, axis=1))
    stack = np.stack(shifts)  # (9, H, W, Cin)
    w = kernels.reshape(kernels.shape[0], kernels.shape[1], 9).transpose(2, 1, 0)  # (9, Cin, Cout)
    return np.tensordot(stack, w, axes=([0, 3], [0, 1]))


def _avgpool2(x: np.ndarray) -> np.ndarray:
    h, w, c = x.shape
    h2, w2 = h - h % 2, w - w % 2
    return x[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2, c).mean(axis=(1, 3))


def channel_normalize(feat: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    norm = np.sqrt((feat * feat).sum(axis=-1, keepdims=True))
    return feat / (norm + eps)


class RandomConvFeatures(FeatureExtractor):
    """Fixed random 3-layer convolutional feature bank with wrap padding."""

    name = "randconv-v1"

    def features(self, image: np.ndarray) -> list[np.ndarray]:
        x = np.asarray(image, dtype=np.float64) * 2.0 - 1.0
        out = []
        for kernels in _BANK:
            x = np.maximum(_conv2d_wrap(x, kernels), 0.0)
            out.append(channel_normalize(x))
            x = _avgpool2(x)
        return out


def feature_distance(stack_a: Sequence[np.ndarray], stack_b: Sequence[np.ndarray]) -> float:
    """Mean over layers of the mean squared feature difference."""
    if len(stack_a) != len(stack_b):
        raise EmptySetError("feature stacks disagree on layer count")
    per_layer = []
    for fa, fb in zip(stack_a, stack_b):
        d = np.asarray(fa, dtype=np.float64) - np.asarray(fb, dtype=np.float64)
        per_layer.append(float(np.mean(d * d)))
    return float(np.mean(per_layer))


def perceptual_loss(
    generated_images: Sequence[np.ndarray],
    base_images: Sequence[np.ndarray],
    extractor: FeatureExtractor,
    pairing_seed: int,
) -> float:
    """100 x mean pair distance; base images drawn uniformly with replacement."""
    if len(generated_images) == 0 or len(base_images) == 0:
        raise EmptySetError("perceptual_loss needs non-empty image sets")
    rng = np.random.Generator(np.random.PCG64(pairing_seed))
    idx = rng.integers(0, len(base_images), size=len(generated_images))
    base_features: dict[int, list[np.ndarray]] = {}
    total = 0.0
    for gen, i in zip(generated_images, idx):
        if int(i) not in base_features:
            base_features[int(i)] = extractor.features(base_images[int(i)])
        total += feature_distance(extractor.features(gen), base_features[int(i)])
    return 100.0 * total / len(generated_images)


# --- two-model comparison ------------------------------------------------------------


@dataclass(frozen=True)
class EvalRow:
    keyword: str
    perceptual_candidate: float
    perceptual_baseline: float
    similarity_candidate: float
    similarity_baseline: float


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalRow, ...]
    config: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EvalConfig:
    seed: int = 7
    num_generated: int = 16
    steps: int = 50
    guidance: float = 3.0


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary string/int parts."""
    h = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little") >> 1


def evaluate_pair(
    candidate_ckpt: Checkpoint,
    baseline_ckpt: Checkpoint,
    keywords: Sequence[str],
    reference_manifest: DatasetManifest,
    eval_config: EvalConfig = EvalConfig(),
    embedder: JointEmbedder | None = None,
    extractor: FeatureExtractor | None = None,
) -> EvalReport:
    """Table-shaped comparison of two checkpoints over keyword prompts.

    Per keyword both models generate the same number of images (seeds derived
    from eval seed, keyword and checkpoint digest) and are scored against the
    same seeded base-image draws, so the comparison is paired.
    """
    embedder = embedder or StatsEmbedder()
    extractor = extractor or RandomConvFeatures()
    taxonomy = reference_manifest.taxonomy
    for keyword in keywords:
        if not taxonomy.is_canonical(keyword):
            raise UnknownKeywordError(f"not a canonical keyword: {keyword!r}")
    ordered = sorted(set(keywords), key=taxonomy.index)

    components = {
        "candidate": (candidate_ckpt.build_components(), candidate_ckpt.digest()),
        "baseline": (baseline_ckpt.build_components(), baseline_ckpt.digest()),
    }

    rows = []
    for keyword in ordered:
        base_records = reference_manifest.records_for_keyword(keyword)
        if not base_records:
            raise NoRecordsForKeywordError(f"no reference records for {keyword!r}")
        base_images = [rec.image for rec in base_records]
        pairing_seed = derive_seed(eval_config.seed, keyword, "pairing")

        scores = {}
        for label, ((model, encoder, schedule, codec), digest) in components.items():
            gen = sample(
                model,
                schedule,
                codec,
                encoder,
                prompt=keyword,
                seed=derive_seed(eval_config.seed, keyword, digest),
                count=eval_config.num_generated,
                steps=eval_config.steps,
                guidance=eval_config.guidance,
            )
            gen_list = list(gen)
            scores[label] = (
                perceptual_loss(gen_list, base_images, extractor, pairing_seed),
                clip_similarity(gen_list, keyword, reference_manifest, embedder),
            )
        rows.append(
            EvalRow(
                keyword=keyword,
                perceptual_candidate=scores["candidate"][0],
                perceptual_baseline=scores["baseline"][0],
                similarity_candidate=scores["candidate"][1],
                similarity_baseline=scores["baseline"][1],
            )
        )

    config = {
        "seed": eval_config.seed,
        "num_generated": eval_config.num_generated,
        "steps": eval_config.steps,
        "guidance": eval_config.guidance,
        "candidate_digest": components["candidate"][1],
        "baseline_digest": components["baseline"][1],
        "embedder": embedder.name,
        "extractor": extractor.name,
    }
    return EvalReport(rows=tuple(rows), config=config)


# --- report rendering and I/O -----------------------------------------------------------

_COLUMNS = (
    "Perceptual Loss (candidate)",
    "Perceptual Loss (baseline)",
    "Clip Similarity (candidate)",
    "Clip Similarity (baseline)",
)


def format_metric(value: float) -> str:
    """Up to 2 decimals, at least 1: 57 -> '57.0', 30.134 -> '30.13'."""
    s = f"{value:.2f}"
    if s.endswith("0"):
        s = s[:-1]
    return s


def _row_cells(row: EvalRow) -> list[str]:
    return [
        row.keyword,
        format_metric(row.perceptual_candidate),
        format_metric(row.perceptual_baseline),
        format_metric(row.similarity_candidate),
        format_metric(row.similarity_baseline),
    ]


def render_report(report: EvalReport, format: str = "text") -> str:
    """Deterministic text/markdown/csv rendering in the published column order."""
    header = ["Keywords", *_COLUMNS]
    if format == "text":
        lines = [" | ".join(header), "-" * len(" | ".join(header))]
        lines.extend(" | ".join(_row_cells(row)) for row in report.rows)
        return "\n".join(lines) + "\n"
    if format == "markdown":
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines.extend("| " + " | ".join(_row_cells(row)) + " |" for row in report.rows)
        return "\n".join(lines) + "\n"
    if format == "csv":
        lines = [",".join(header)]
        for row in report.rows:
            cells = _row_cells(row)
            cells[0] = '"' + cells[0].replace('"', '""') + '"'
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {format!r}")


def save_report(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"version": REPORT_VERSION, "config": report.config}, sort_keys=True)]
    for row in report.rows:
        lines.append(
            json.dumps(
                {
                    "keyword": row.keyword,
                    "perceptual_candidate": row.perceptual_candidate,
                    "perceptual_baseline": row.perceptual_baseline,
                    "similarity_candidate": row.similarity_candidate,
                    "similarity_baseline": row.similarity_baseline,
                },
                sort_keys=True,
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_report(path: str | Path) -> EvalReport:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    header = json.loads(lines[0])
    rows = []
    for line in lines[1:]:
        obj = json.loads(line)
        rows.append(
            EvalRow(
                keyword=obj["keyword"],
                perceptual_candidate=obj["perceptual_candidate"],
                perceptual_baseline=obj["perceptual_baseline"],
                similarity_candidate=obj["similarity_candidate"],
                similarity_baseline=obj["similarity_baseline"],
            )
        )
    return EvalReport(rows=tuple(rows), config=header.get("config", {}))
