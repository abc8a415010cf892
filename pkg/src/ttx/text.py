"""Caption -> conditioning vector encoding.

A deliberately small text pipeline: a vocabulary of word tokens plus the
canonical keyword phrases (matched greedily before word splitting), a
learned embedding table, and mean pooling. The empty caption maps to a
dedicated learned null row used for classifier-free guidance.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .taxonomy import KeywordTaxonomy, load_taxonomy

NULL_TOKEN = "<null>"
OOV_TOKEN = "<oov>"


@dataclass(frozen=True)
class ConditioningVector:
    values: np.ndarray  # (D,) float32
    is_null: bool = False


def _split_words(fragment: str) -> list[str]:
    return [w for w in re.split(r"[\s,]+", fragment) if w]


class TextEncoder:
    """Deterministic caption encoder over a trainable embedding table."""

    def __init__(
        self,
        vocabulary: dict[str, int],
        embedding_table: np.ndarray,
        null_index: int,
        oov_index: int,
    ):
        self.vocabulary = dict(vocabulary)
        self.embedding = np.asarray(embedding_table, dtype=np.float32)
        self.null_index = int(null_index)
        self.oov_index = int(oov_index)
        if self.embedding.ndim != 2:
            raise ValueError("embedding table must be 2-D")
        if len(self.vocabulary) + 2 != self.embedding.shape[0]:
            raise ValueError("vocabulary and embedding table disagree on row count")
        # Multi-word vocabulary entries are keyword phrases; they match as
        # single tokens before any word splitting, longest first.
        phrases = sorted((t for t in self.vocabulary if " " in t), key=len, reverse=True)
        self._phrase_re = (
            re.compile("(" + "|".join(re.escape(p) for p in phrases) + ")") if phrases else None
        )

    @property
    def dim(self) -> int:
        return int(self.embedding.shape[1])

    @property
    def vocab_size(self) -> int:
        return int(self.embedding.shape[0])

    def tokenize(self, caption: str) -> list[str]:
        text = " ".join(caption.casefold().split())
        if not text:
            return []
        if self._phrase_re is None:
            return _split_words(text)
        tokens: list[str] = []
        for fragment in self._phrase_re.split(text):
            if not fragment:
                continue
            if fragment in self.vocabulary and " " in fragment:
                tokens.append(fragment)
            else:
                tokens.extend(_split_words(fragment))
        return tokens

    def token_rows(self, caption: str) -> list[int]:
        """Embedding row index per token; unknown tokens share the OOV row."""
        return [self.vocabulary.get(tok, self.oov_index) for tok in self.tokenize(caption)]

    def encode(self, caption: str) -> ConditioningVector:
        rows = self.token_rows(caption)
        if not rows:
            return ConditioningVector(values=self.embedding[self.null_index].copy(), is_null=True)
        return ConditioningVector(values=self.embedding[rows].mean(axis=0), is_null=False)

    def null_vector(self) -> ConditioningVector:
        return ConditioningVector(values=self.embedding[self.null_index].copy(), is_null=True)

    def state(self) -> dict:
        return {
            "dim": self.dim,
            "null_index": self.null_index,
            "oov_index": self.oov_index,
            "tokens": self.vocabulary,
        }

    @classmethod
    def from_state(cls, state: dict, embedding_table: np.ndarray) -> "TextEncoder":
        return cls(
            vocabulary=state["tokens"],
            embedding_table=embedding_table,
            null_index=state["null_index"],
            oov_index=state["oov_index"],
        )


def build_text_encoder(
    captions: Iterable[str],
    taxonomy: KeywordTaxonomy | None = None,
    dim: int = 64,
    seed: int = 0,
) -> TextEncoder:
    """Build vocabulary from captions plus all canonical keyword phrases."""
    taxonomy = taxonomy or load_taxonomy()
    phrases = [k.casefold() for k in taxonomy.keywords]
    phrase_re = re.compile("(" + "|".join(re.escape(p) for p in sorted(phrases, key=len, reverse=True)) + ")")

    tokens: set[str] = set(phrases)
    for caption in captions:
        text = " ".join(caption.casefold().split())
        for fragment in phrase_re.split(text):
            if fragment in tokens:
                continue
            tokens.update(_split_words(fragment))

    ordered = sorted(tokens)
    vocabulary = {tok: i + 2 for i, tok in enumerate(ordered)}  # rows 0, 1 reserved
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 101])))
    table = rng.standard_normal((len(ordered) + 2, dim)) / np.sqrt(dim)
    return TextEncoder(
        vocabulary=vocabulary,
        embedding_table=table.astype(np.float32),
        null_index=0,
        oov_index=1,
    )


def encode_text(caption: str, text_encoder: TextEncoder, taxonomy: KeywordTaxonomy | None = None) -> ConditioningVector:
    """Functional wrapper around TextEncoder.encode (taxonomy is baked into the encoder)."""
    return text_encoder.encode(caption)
