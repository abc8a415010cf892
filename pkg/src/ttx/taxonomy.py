"""The 15-keyword style taxonomy used for dataset tagging, prompts and reports.

Canonical keyword strings are fixed; every tolerated variant (case, plural,
spacing, and the published spelling drift such as "Aborigin patterns" vs
"Aboriginal Patterns") resolves to exactly one canonical keyword.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

# Row-major order of the published keyword list. This order is load-bearing:
# caption augmentation and report rows both sort by it.
CANONICAL_KEYWORDS: tuple[str, ...] = (
    "Allover patterns",
    "Abstract Patterns",
    "Calico Patterns",
    "Animal Patterns Printed",
    "Ottoman Embroidery Patterns",
    "Indian Fabric Patterns",
    "Traditional Japanese Patterns",
    "African Pattern Fabric",
    "Iranian Rug pattern",
    "Floral Pattern Fabric",
    "Turkish Patterns",
    "Oriental patterns",
    "Aboriginal Patterns",
    "Vintage Fabric Patterns",
    "Art Nouveau pattern",
)

# Variant spelling -> canonical keyword. Covers the spelling drift between the
# published keyword list and the report tables, plus figure-caption shorthands.
ALIASES: dict[str, str] = {
    "Aborigin patterns": "Aboriginal Patterns",
    "Aboriginal Pattern": "Aboriginal Patterns",
    "Calico Pattern": "Calico Patterns",
    "Oriental Patterns": "Oriental patterns",
    "Oriental Pattern": "Oriental patterns",
    "Iranian Pattern": "Iranian Rug pattern",
    "Iranian Rug Pattern": "Iranian Rug pattern",
    "Iranian Patterns": "Iranian Rug pattern",
    "Persian patterns": "Iranian Rug pattern",
    "African Pattern fabric": "African Pattern Fabric",
    "African Patterns Fabric": "African Pattern Fabric",
    "Ottoman Embroidery": "Ottoman Embroidery Patterns",
    "Animal Patterns": "Animal Patterns Printed",
    "Animal Pattern Printed": "Animal Patterns Printed",
    "Indian Patterns": "Indian Fabric Patterns",
    "Indian Fabric Pattern": "Indian Fabric Patterns",
    "Traditional Japanese": "Traditional Japanese Patterns",
    "Traditional Japanese Pattern": "Traditional Japanese Patterns",
    "Turkish Pattern": "Turkish Patterns",
    "Abstract Pattern": "Abstract Patterns",
    "Allover pattern": "Allover patterns",
    "Floral Patterns Fabric": "Floral Pattern Fabric",
    "Floral Pattern Fabrics": "Floral Pattern Fabric",
    "Vintage Fabric Pattern": "Vintage Fabric Patterns",
    "Art Nouveau patterns": "Art Nouveau pattern",
}


def _normalize(name: str) -> str:
    return " ".join(name.casefold().split())


def _depluralize(normalized: str) -> str:
    # Only the trailing word's plural 's' is tolerated; anything fancier
    # would start conflating distinct keywords.
    words = normalized.split(" ")
    if words and words[-1].endswith("s") and len(words[-1]) > 1:
        words[-1] = words[-1][:-1]
    return " ".join(words)


@dataclass(frozen=True)
class KeywordTaxonomy:
    """Ordered canonical keywords plus the variant-resolution table."""

    keywords: tuple[str, ...]
    aliases: dict[str, str]
    _lookup: dict[str, str] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        canonical = set(self.keywords)
        for variant, target in self.aliases.items():
            if target not in canonical:
                raise ValueError(f"alias {variant!r} maps to non-canonical {target!r}")
        lookup: dict[str, str] = {}
        for kw in self.keywords:
            for key in (_normalize(kw), _depluralize(_normalize(kw))):
                if lookup.get(key, kw) != kw:
                    raise ValueError(f"normalized collision on {key!r}")
                lookup[key] = kw
        for variant, target in self.aliases.items():
            for key in (_normalize(variant), _depluralize(_normalize(variant))):
                if lookup.get(key, target) != target:
                    raise ValueError(f"normalized collision on {key!r}")
                lookup[key] = target
        object.__setattr__(self, "_lookup", lookup)

    def resolve(self, name: str) -> str | None:
        """Map a keyword variant to its canonical form, or None if unknown."""
        if name in self.keywords:
            return name
        if name in self.aliases:
            return self.aliases[name]
        key = _normalize(name)
        hit = self._lookup.get(key)
        if hit is None:
            hit = self._lookup.get(_depluralize(key))
        return hit

    def is_canonical(self, name: str) -> bool:
        return name in self.keywords

    def index(self, keyword: str) -> int:
        """Position of a canonical keyword in taxonomy order."""
        return self.keywords.index(keyword)

    def sort_keywords(self, keywords: Iterable[str]) -> list[str]:
        """Return the given canonical keywords in taxonomy order."""
        return sorted(set(keywords), key=self.index)


_BUILTIN = KeywordTaxonomy(keywords=CANONICAL_KEYWORDS, aliases=dict(ALIASES))


def load_taxonomy() -> KeywordTaxonomy:
    """Return the built-in 15-keyword taxonomy."""
    return _BUILTIN
