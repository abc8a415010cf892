"""Seeded procedural pattern corpus.

A desk-scale stand-in for a scraped pattern collection: five motif families
rendered from per-class palettes with small per-image jitter, every image
exactly tileable (first row equals last row, first column equals last column).

Class structure (motif geometry, palette anchor) is a function of the class
definition; per-image randomness only jitters colors and phases slightly so
that class statistics stay tight enough to learn from a few hundred images.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .dataset import DatasetManifest, PatternRecord, augment_caption
from .errors import InvalidSpecError
from .taxonomy import KeywordTaxonomy, load_taxonomy

MOTIFS = ("stripes", "dots", "checker", "floral_blob", "zigzag")

# Role constants keep the per-purpose random streams disjoint.
_ROLE_CLASS = 11
_ROLE_IMAGE = 23


@dataclass(frozen=True)
class SyntheticClass:
    class_name: str
    keyword: str
    palette_seed: int
    motif: str


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    classes: tuple[SyntheticClass, ...]
    per_class_count: int
    image_size: tuple[int, int]
    seed: int


# One default class per canonical keyword, cycling the motif families.
_DEFAULT_CLASS_NAMES = (
    "striped allover", "checkered abstract", "calico dot", "animal spot",
    "ottoman zigzag", "indian blossom", "japanese wave stripe", "african dot grid",
    "rug medallion check", "floral sprig", "turkish star stripe", "oriental dot lattice",
    "dot painting", "vintage bloom", "nouveau vine zigzag",
)


def default_classes(taxonomy: KeywordTaxonomy | None = None) -> tuple[SyntheticClass, ...]:
    taxonomy = taxonomy or load_taxonomy()
    classes = []
    for i, keyword in enumerate(taxonomy.keywords):
        classes.append(
            SyntheticClass(
                class_name=_DEFAULT_CLASS_NAMES[i],
                keyword=keyword,
                palette_seed=i,
                motif=MOTIFS[i % len(MOTIFS)],
            )
        )
    return tuple(classes)


def default_corpus_spec(
    num_classes: int = 5,
    per_class_count: int = 100,
    image_size: tuple[int, int] = (32, 32),
    seed: int = 7,
    taxonomy: KeywordTaxonomy | None = None,
) -> SyntheticCorpusSpec:
    classes = default_classes(taxonomy)
    if not (1 <= num_classes <= len(classes)):
        raise InvalidSpecError(f"num_classes must be in 1..{len(classes)}, got {num_classes}")
    return SyntheticCorpusSpec(
        classes=classes[:num_classes],
        per_class_count=per_class_count,
        image_size=image_size,
        seed=seed,
    )


def _validate_spec(spec: SyntheticCorpusSpec, taxonomy: KeywordTaxonomy) -> None:
    if not spec.classes:
        raise InvalidSpecError("corpus spec has no classes")
    if spec.per_class_count < 1:
        raise InvalidSpecError(f"per_class_count must be positive, got {spec.per_class_count}")
    h, w = spec.image_size
    if h < 8 or w < 8:
        raise InvalidSpecError(f"image_size too small: {spec.image_size}")
    for cls in spec.classes:
        if not taxonomy.is_canonical(cls.keyword):
            raise InvalidSpecError(f"class {cls.class_name!r} keyword {cls.keyword!r} is not canonical")
        if cls.motif not in MOTIFS:
            raise InvalidSpecError(f"class {cls.class_name!r} motif {cls.motif!r} unknown")


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def _palette(seed: int, class_idx: int, palette_seed: int) -> tuple[float, float, float, float]:
    """Per-class color anchor: background hue, foreground hue, sat, value."""
    rng = _rng(seed, _ROLE_CLASS, class_idx, palette_seed)
    bg_hue = float(rng.random())
    fg_hue = (bg_hue + 0.38 + 0.24 * float(rng.random())) % 1.0
    sat = 0.55 + 0.35 * float(rng.random())
    val = 0.7 + 0.25 * float(rng.random())
    return bg_hue, fg_hue, sat, val


def _hsv(h: float, s: float, v: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(h % 1.0, min(max(s, 0.0), 1.0), min(max(v, 0.0), 1.0)))


def _motif_mask(motif: str, hb: int, wb: int, rng: np.random.Generator) -> np.ndarray:
    """Render a [0, 1] coverage mask on the (hb, wb) base grid.

    All spatial terms use integer cycle counts over the base grid so the
    pattern wraps continuously; per-image phase jitter is kept small so class
    means stay structured.
    """
    y, x = np.meshgrid(np.arange(hb), np.arange(wb), indexing="ij")
    u = x / wb
    v = y / hb
    jitter = float(rng.uniform(0.0, 0.125))

    if motif == "stripes":
        cycles = 4
        wave = np.sin(2 * np.pi * (cycles * u + jitter))
        return (wave > 0.0).astype(np.float64)
    if motif == "dots":
        cy, cx = 4, 4
        bump = np.cos(2 * np.pi * (cx * u + jitter)) * np.cos(2 * np.pi * (cy * v + jitter))
        return (bump > 0.45).astype(np.float64)
    if motif == "checker":
        cy, cx = 3, 3
        cell = np.sign(np.sin(2 * np.pi * (cx * u + jitter))) * np.sign(np.sin(2 * np.pi * (cy * v + jitter)))
        return (cell > 0.0).astype(np.float64)
    if motif == "floral_blob":
        s = np.zeros((hb, wb))
        harmonics = ((1, 2), (2, 1), (3, 3), (1, 1))
        for k, (p, q) in enumerate(harmonics):
            amp = 0.5 + 0.5 * float(rng.random())
            phase = jitter + 0.2 * k
            s += amp * np.cos(2 * np.pi * (p * u + q * v + phase))
        return 1.0 / (1.0 + np.exp(-3.0 * s))
    if motif == "zigzag":
        cycles_x, cycles_y = 3, 4
        tri = 2.0 * np.abs(((cycles_x * u + jitter) % 1.0) - 0.5)
        wave = np.sin(2 * np.pi * (cycles_y * v + 0.6 * tri))
        return (wave > 0.0).astype(np.float64)
    raise InvalidSpecError(f"unknown motif {motif!r}")


def render_pattern(
    motif: str,
    image_size: tuple[int, int],
    palette: tuple[float, float, float, float],
    rng: np.random.Generator,
) -> np.ndarray:
    """Render one tileable pattern image in storage space [0, 1].

    The motif is drawn on an (H-1, W-1) base grid that wraps continuously;
    the final row/column duplicate the first so opposing edges match exactly.
    """
    h, w = image_size
    hb, wb = h - 1, w - 1
    bg_hue, fg_hue, sat, val = palette
    hue_jit = float(rng.uniform(-0.02, 0.02))
    val_jit = float(rng.uniform(-0.06, 0.06))
    bg = _hsv(bg_hue + hue_jit, sat * 0.45, min(val + val_jit + 0.1, 1.0))
    fg = _hsv(fg_hue + hue_jit, sat, val + val_jit)

    mask = _motif_mask(motif, hb, wb, rng)
    base = bg[None, None, :] + (fg - bg)[None, None, :] * mask[:, :, None]
    tiled = base[np.arange(h) % hb][:, np.arange(w) % wb]
    return tiled


def synthesize_corpus(
    spec: SyntheticCorpusSpec,
    taxonomy: KeywordTaxonomy | None = None,
) -> DatasetManifest:
    """Generate the seeded corpus described by the spec."""
    taxonomy = taxonomy or load_taxonomy()
    _validate_spec(spec, taxonomy)

    records: list[PatternRecord] = []
    for class_idx, cls in enumerate(spec.classes):
        palette = _palette(spec.seed, class_idx, cls.palette_seed)
        caption = augment_caption(
            f"a seamless {cls.class_name} textile pattern", {cls.keyword}, taxonomy
        )
        for image_idx in range(spec.per_class_count):
            rng = _rng(spec.seed, _ROLE_IMAGE, class_idx, image_idx)
            image = render_pattern(cls.motif, spec.image_size, palette, rng)
            records.append(
                PatternRecord.create(image, caption=caption, keywords=[cls.keyword], source="synthetic")
            )
    return DatasetManifest.build(records, taxonomy, spec.image_size)
