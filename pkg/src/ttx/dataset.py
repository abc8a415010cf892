"""Pattern dataset: records, manifests, ingestion, captioning and splitting.

A manifest is the unit of exchange between pipeline stages. On disk it is a
UTF-8 JSON-lines file (header line + one line per record) with the images
stored as PNGs beside it; in memory it is an immutable value whose records
are always sorted by content id so the checksum is order-independent.
"""

from __future__ import annotations

import dataclasses
import json
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .captioners import CaptionerAdapter
from .errors import (
    CaptionerFailureError,
    EmptyDirectoryError,
    NonCanonicalKeywordError,
    TooFewRecordsError,
)
from .imaging import content_id, load_image, quantize01, save_png
from .taxonomy import KeywordTaxonomy, load_taxonomy

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
MANIFEST_FILENAME = "manifest.jsonl"
IMAGE_DIRNAME = "images"

SOURCES = ("ingested", "synthetic")
SPLITS = ("unassigned", "train", "val")

CAPTION_SUFFIX_TAIL = "textile pattern"


@dataclass(frozen=True)
class PatternRecord:
    """One captioned, keyword-tagged pattern image."""

    id: str
    image: np.ndarray  # (H, W, 3) float32 in [0, 1], 8-bit-quantized
    caption: str
    keywords: frozenset[str]
    source: str
    split: str = "unassigned"

    @classmethod
    def create(
        cls,
        image: np.ndarray,
        caption: str,
        keywords: Iterable[str],
        source: str,
        split: str = "unassigned",
    ) -> "PatternRecord":
        img = quantize01(image)
        return cls(
            id=content_id(img),
            image=img,
            caption=caption,
            keywords=frozenset(keywords),
            source=source,
            split=split,
        )


def compute_checksum(records: Sequence[PatternRecord]) -> str:
    """Digest over sorted record ids and captions."""
    h = hashlib.sha256()
    for rec in sorted(records, key=lambda r: r.id):
        h.update(rec.id.encode("utf-8"))
        h.update(b"\t")
        h.update(rec.caption.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


@dataclass(frozen=True)
class DatasetManifest:
    """A versioned, checksummed collection of pattern records."""

    records: tuple[PatternRecord, ...]
    taxonomy: KeywordTaxonomy
    image_size: tuple[int, int]  # (H, W)
    checksum: str
    created_with: str = field(default=f"ttx {__version__}")

    @classmethod
    def build(
        cls,
        records: Iterable[PatternRecord],
        taxonomy: KeywordTaxonomy,
        image_size: tuple[int, int],
    ) -> "DatasetManifest":
        ordered = tuple(sorted(records, key=lambda r: r.id))
        return cls(
            records=ordered,
            taxonomy=taxonomy,
            image_size=(int(image_size[0]), int(image_size[1])),
            checksum=compute_checksum(ordered),
        )

    def __len__(self) -> int:
        return len(self.records)

    def records_for_keyword(self, keyword: str) -> list[PatternRecord]:
        return [r for r in self.records if keyword in r.keywords]

    def keywords_present(self) -> list[str]:
        present = set()
        for rec in self.records:
            present.update(rec.keywords)
        return self.taxonomy.sort_keywords(k for k in present if self.taxonomy.is_canonical(k))

    def with_records(self, records: Iterable[PatternRecord]) -> "DatasetManifest":
        return DatasetManifest.build(records, self.taxonomy, self.image_size)


# --- ingestion ----------------------------------------------------------------

@dataclass(frozen=True)
class IngestResult:
    """Manifest plus the warning summary of what got skipped."""

    manifest: DatasetManifest
    skipped_files: tuple[str, ...]
    unknown_directories: tuple[str, ...]

    @property
    def warning_count(self) -> int:
        return len(self.skipped_files) + len(self.unknown_directories)


def ingest_images(
    directory_path: str | Path,
    taxonomy: KeywordTaxonomy | None = None,
    target_size: tuple[int, int] = (32, 32),
) -> IngestResult:
    """Build a manifest from a directory of keyword-named subdirectories.

    Every decodable image under ``<dir>/<keyword variant>/`` becomes a record
    resized to target_size and tagged with the resolved canonical keyword.
    Undecodable files are skipped with a warning; subdirectories that resolve
    to no canonical keyword are reported and their files skipped. The same
    image appearing under two keyword directories merges into one record with
    the union of keywords.
    """
    taxonomy = taxonomy or load_taxonomy()
    root = Path(directory_path)
    if not root.is_dir():
        raise EmptyDirectoryError(f"not a directory: {root}")
    if target_size[0] <= 0 or target_size[1] <= 0:
        raise ValueError(f"target_size must be positive, got {target_size}")

    skipped: list[str] = []
    unknown_dirs: list[str] = []
    by_id: dict[str, PatternRecord] = {}

    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    stray = sorted(p for p in root.iterdir() if p.is_file())
    for f in stray:
        skipped.append(str(f.relative_to(root)))
        log.warning("ingest: file outside a keyword directory, skipped: %s", f.name)

    for sub in subdirs:
        keyword = taxonomy.resolve(sub.name)
        if keyword is None:
            unknown_dirs.append(sub.name)
            log.warning("ingest: directory %r resolves to no canonical keyword, skipped", sub.name)
            continue
        for f in sorted(p for p in sub.rglob("*") if p.is_file()):
            try:
                image = load_image(f, target_size=target_size)
            except Exception:
                skipped.append(str(f.relative_to(root)))
                log.warning("ingest: undecodable file skipped: %s", f)
                continue
            rec = PatternRecord.create(image, caption="", keywords=[keyword], source="ingested")
            prior = by_id.get(rec.id)
            if prior is not None:
                rec = dataclasses.replace(prior, keywords=prior.keywords | rec.keywords)
            by_id[rec.id] = rec

    if not by_id:
        raise EmptyDirectoryError(f"no decodable images under a known keyword in {root}")

    manifest = DatasetManifest.build(by_id.values(), taxonomy, target_size)
    return IngestResult(
        manifest=manifest,
        skipped_files=tuple(skipped),
        unknown_directories=tuple(unknown_dirs),
    )


# --- captioning -----------------------------------------------------------------

def caption_records(manifest: DatasetManifest, captioner: CaptionerAdapter) -> DatasetManifest:
    """Replace every record's caption with the adapter's output.

    Aborts on the first adapter failure (empty caption or raised exception);
    the input manifest is never mutated.
    """
    captioned: list[PatternRecord] = []
    for rec in manifest.records:
        try:
            text = captioner.caption(rec.image)
        except Exception as exc:
            raise CaptionerFailureError(
                f"captioner {captioner.name!r} raised on record {rec.id}: {exc}"
            ) from exc
        if not isinstance(text, str) or not text.strip():
            raise CaptionerFailureError(
                f"captioner {captioner.name!r} returned an empty caption for record {rec.id}"
            )
        captioned.append(dataclasses.replace(rec, caption=text))
    return manifest.with_records(captioned)


def augment_caption(
    caption: str,
    keywords: Iterable[str],
    taxonomy: KeywordTaxonomy | None = None,
) -> str:
    """Append keywords (in taxonomy order) and the constant tail to a caption.

    Idempotent on its own output: re-augmenting with the same keyword set
    does not duplicate the suffix.
    """
    taxonomy = taxonomy or load_taxonomy()
    kws = set(keywords)
    for kw in kws:
        if not taxonomy.is_canonical(kw):
            raise NonCanonicalKeywordError(f"not a canonical keyword: {kw!r}")
    ordered = taxonomy.sort_keywords(kws)
    suffix = ", " + ", ".join([*ordered, CAPTION_SUFFIX_TAIL])
    if caption.endswith(suffix):
        return caption
    return caption + suffix


# --- splitting ---------------------------------------------------------------------

def split_manifest(
    manifest: DatasetManifest,
    val_fraction: float,
    seed: int,
) -> tuple[DatasetManifest, DatasetManifest]:
    """Deterministic stratified train/val split.

    Stratification key is the record's first keyword in taxonomy order; each
    stratum contributes round-half-up(val_fraction * n) records to val,
    clamped so both sides stay non-empty.
    """
    if not (0.0 < val_fraction < 1.0):
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")

    strata: dict[str, list[PatternRecord]] = {}
    for rec in manifest.records:
        key = min(rec.keywords, key=manifest.taxonomy.index)
        strata.setdefault(key, []).append(rec)

    for key, recs in strata.items():
        if len(recs) < 2:
            raise TooFewRecordsError(f"keyword {key!r} has {len(recs)} record(s); need at least 2")

    rng = np.random.Generator(np.random.PCG64(seed))
    train: list[PatternRecord] = []
    val: list[PatternRecord] = []
    for key in manifest.taxonomy.sort_keywords(strata):
        recs = sorted(strata[key], key=lambda r: r.id)
        n = len(recs)
        n_val = int(np.floor(val_fraction * n + 0.5))
        n_val = min(max(n_val, 1), n - 1)
        order = rng.permutation(n)
        chosen = set(order[:n_val].tolist())
        for i, rec in enumerate(recs):
            if i in chosen:
                val.append(dataclasses.replace(rec, split="val"))
            else:
                train.append(dataclasses.replace(rec, split="train"))

    return manifest.with_records(train), manifest.with_records(val)


# --- validation ----------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    code: str
    record_id: str | None
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_manifest(manifest: DatasetManifest) -> ValidationReport:
    """Check every record/manifest invariant; violations are data, not errors."""
    violations: list[Violation] = []
    seen: set[str] = set()
    h, w = manifest.image_size
    for rec in manifest.records:
        if rec.id in seen:
            violations.append(Violation("duplicate_id", rec.id, f"duplicate record id {rec.id}"))
        seen.add(rec.id)
        if not rec.caption.strip():
            violations.append(Violation("empty_caption", rec.id, f"record {rec.id} has an empty caption"))
        if not rec.keywords:
            violations.append(Violation("no_keywords", rec.id, f"record {rec.id} has no keywords"))
        for kw in rec.keywords:
            if not manifest.taxonomy.is_canonical(kw):
                violations.append(
                    Violation("non_canonical_keyword", rec.id, f"record {rec.id} keyword {kw!r} is not canonical")
                )
        if rec.source not in SOURCES:
            violations.append(Violation("bad_source", rec.id, f"record {rec.id} source {rec.source!r}"))
        if rec.split not in SPLITS:
            violations.append(Violation("bad_split", rec.id, f"record {rec.id} split {rec.split!r}"))
        if rec.image.shape != (h, w, 3):
            violations.append(
                Violation("size_mismatch", rec.id, f"record {rec.id} image shape {rec.image.shape} != {(h, w, 3)}")
            )
        else:
            if rec.image.min() < 0.0 or rec.image.max() > 1.0:
                violations.append(Violation("value_range", rec.id, f"record {rec.id} has values outside [0, 1]"))
            if content_id(rec.image) != rec.id:
                violations.append(Violation("id_mismatch", rec.id, f"record {rec.id} does not hash to its id"))
    if compute_checksum(manifest.records) != manifest.checksum:
        violations.append(Violation("checksum_mismatch", None, "stored checksum does not match recomputation"))
    return ValidationReport(tuple(violations))


# --- manifest file I/O ------------------------------------------------------------------

def _manifest_paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix == ".jsonl":
        return p, p.parent / IMAGE_DIRNAME
    return p / MANIFEST_FILENAME, p / IMAGE_DIRNAME


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    """Write manifest.jsonl plus the PNG images; returns the manifest file path."""
    manifest_file, image_dir = _manifest_paths(path)
    manifest_file.parent.mkdir(parents=True, exist_ok=True)
    image_dir.mkdir(parents=True, exist_ok=True)

    header = {
        "version": MANIFEST_VERSION,
        "image_size": list(manifest.image_size),
        "checksum": manifest.checksum,
        "taxonomy": {
            "keywords": list(manifest.taxonomy.keywords),
            "aliases": dict(manifest.taxonomy.aliases),
        },
        "created_with": manifest.created_with,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for rec in manifest.records:
        rel = f"{IMAGE_DIRNAME}/{rec.id}.png"
        save_png(rec.image, manifest_file.parent / rel)
        lines.append(
            json.dumps(
                {
                    "id": rec.id,
                    "caption": rec.caption,
                    "keywords": sorted(rec.keywords),
                    "source": rec.source,
                    "split": rec.split,
                    "image_path": rel,
                },
                sort_keys=True,
            )
        )
    manifest_file.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest_file


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a manifest written by save_manifest."""
    manifest_file, _ = _manifest_paths(path)
    text = manifest_file.read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise EmptyDirectoryError(f"manifest file {manifest_file} is empty")
    header = json.loads(lines[0])
    if header.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {header.get('version')!r}")
    taxonomy = KeywordTaxonomy(
        keywords=tuple(header["taxonomy"]["keywords"]),
        aliases=dict(header["taxonomy"]["aliases"]),
    )
    image_size = (int(header["image_size"][0]), int(header["image_size"][1]))

    records = []
    for line in lines[1:]:
        obj = json.loads(line)
        image = load_image(manifest_file.parent / obj["image_path"])
        records.append(
            PatternRecord(
                id=obj["id"],
                image=image,
                caption=obj["caption"],
                keywords=frozenset(obj["keywords"]),
                source=obj["source"],
                split=obj["split"],
            )
        )
    loaded = DatasetManifest(
        records=tuple(sorted(records, key=lambda r: r.id)),
        taxonomy=taxonomy,
        image_size=image_size,
        checksum=header["checksum"],
        created_with=header.get("created_with", ""),
    )
    return loaded
