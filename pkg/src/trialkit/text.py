"""Text helpers shared by the parsers, dedup, search and metrics code."""

from __future__ import annotations

import re
import unicodedata
from collections.abc import Iterable

_WS = re.compile(r"\s+")
_TOKEN = re.compile(r"[a-z0-9]+")
_TERMINAL_PUNCT = ".,;:!?"


def normalize_text(value: str | None) -> str:
    """NFC-normalize and collapse runs of whitespace to a single space."""
    if not value:
        return ""
    return _WS.sub(" ", unicodedata.normalize("NFC", str(value))).strip()


def normalize_term(term: str) -> str:
    """Canonical form of a search term: lowercase, trimmed, no terminal punctuation."""
    t = normalize_text(term).lower()
    while t and t[-1] in _TERMINAL_PUNCT:
        t = t[:-1].rstrip()
    return t.strip()


def unique(items: Iterable[str]) -> list[str]:
    """Order-preserving de-duplication that also drops empty strings."""
    seen: set[str] = set()
    out = []
    for item in items:
        if item and item not in seen:
            seen.add(item)
            out.append(item)
    return out


def normalize_terms(terms: Iterable[str]) -> list[str]:
    return unique(normalize_term(t) for t in terms)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumerics. Used by ROUGE, BLEU and shingling."""
    return _TOKEN.findall(unicodedata.normalize("NFC", text or "").lower())


def shingles(text: str, size: int = 5) -> set[str]:
    """Contiguous token n-grams. Texts shorter than ``size`` yield one shingle."""
    tokens = tokenize(text)
    if not tokens:
        return set()
    if len(tokens) <= size:
        return {" ".join(tokens)}
    return {" ".join(tokens[i:i + size]) for i in range(len(tokens) - size + 1)}


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)
