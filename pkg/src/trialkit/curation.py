"""PII scrubbing, exact/near-duplicate removal and date-based splitting."""

from __future__ import annotations

import copy
import datetime as dt
import hashlib
import json
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .corpus import Arm, EligibilityBlock, TrialDocument, dumps_canonical
from .text import jaccard, shingles, tokenize

DEFAULT_CUTOFF = dt.date(2023, 1, 1)
SHINGLE_SIZE = 5
NUM_PERM = 128
NUM_BANDS = 32


@dataclass(frozen=True)
class PiiPattern:
    name: str
    regex: re.Pattern
    placeholder: str


def _p(name: str, pattern: str, flags: int = 0) -> PiiPattern:
    return PiiPattern(name, re.compile(pattern, flags), f"[{name.upper()}]")


DEFAULT_PII_PATTERNS = (
    _p("email", r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}"),
    _p("url", r"https?://\S*?(?:~|/(?:users?|people|profile|in)/)[^\s)\]]+", re.IGNORECASE),
    _p("phone", r"(?<![\w-])(?:\+\d{1,3}[\s.-]?\d{1,4}(?:[\s.-]\d{2,4}){1,3}"
                r"|\(\d{2,4}\)\s?\d{3,4}[\s.-]\d{4}|\d{3}[\s.-]\d{3}[\s.-]\d{4})(?![\w-])"),
    # only the name after the label is replaced (named group "pii")
    _p("contact", r"(?i:\b(?:contact(?: person)?|investigator|principal investigator)\s*:\s*)"
                  r"(?P<pii>(?:(?:Dr|Prof|Mr|Mrs|Ms)\.? )?[A-Z][a-z]+(?: [A-Z]\.)?(?: [A-Z][a-z'-]+)+)"),
)

# raw-payload keys holding structured contact data; dropped outright
CONTACT_KEYS = frozenset({
    "contactsLocationsModule", "centralContacts", "overallOfficials",
    "contacts", "contact_name", "contact_email", "contact_phone", "investigators",
})


def _scrub(text: str, patterns: Sequence[PiiPattern]) -> str:
    for p in patterns:
        if "pii" in p.regex.groupindex:
            text = p.regex.sub(lambda m, p=p: m.group(0)[: m.start("pii") - m.start()] + p.placeholder, text)
        else:
            text = p.regex.sub(p.placeholder, text)
    return text


def _drop_contacts(raw):
    if isinstance(raw, dict):
        return {k: _drop_contacts(v) for k, v in raw.items() if k not in CONTACT_KEYS}
    if isinstance(raw, list):
        return [_drop_contacts(v) for v in raw]
    return raw


def scrub_pii(doc: TrialDocument, patterns: Sequence[PiiPattern] = DEFAULT_PII_PATTERNS) -> TrialDocument:
    """Replace PII pattern hits in free text with typed placeholders; drop contact fields."""
    if not patterns:
        raise ValueError("empty PII pattern set")
    s = lambda t: _scrub(t, patterns)  # noqa: E731
    e = doc.eligibility
    out = replace(
        doc,
        public_title=s(doc.public_title),
        scientific_title=s(doc.scientific_title),
        brief_summary=s(doc.brief_summary),
        detailed_description=s(doc.detailed_description),
        design_details=s(doc.design_details),
        eligibility=EligibilityBlock(
            inclusion=[s(c) for c in e.inclusion],
            exclusion=[s(c) for c in e.exclusion],
            min_age=e.min_age, max_age=e.max_age, sexes=e.sexes,
            accepts_healthy_volunteers=e.accepts_healthy_volunteers,
        ),
        arms=[Arm(a.label, s(a.description)) for a in doc.arms],
        primary_outcomes=[s(o) for o in doc.primary_outcomes],
        secondary_outcomes=[s(o) for o in doc.secondary_outcomes],
        raw=_drop_contacts(copy.deepcopy(doc.raw)),
        flags=list(doc.flags),
    )
    return out


# -- dedup --------------------------------------------------------------------

def dedup_text(doc: TrialDocument) -> str:
    """Layout-independent content text; two registries' copies of a trial compare equal."""
    e = doc.eligibility
    parts = [doc.public_title, doc.scientific_title, doc.brief_summary, doc.detailed_description,
             *doc.conditions, *doc.interventions, *e.inclusion, *e.exclusion,
             *(f"{a.label} {a.description}" for a in doc.arms),
             *doc.primary_outcomes, *doc.secondary_outcomes]
    return " ".join(tokenize(" ".join(parts)))


def content_hash(doc: TrialDocument) -> str:
    return hashlib.sha256(dedup_text(doc).encode("utf-8")).hexdigest()


class MinHasher:
    """MinHash signatures via multiply-shift hashing of 32-bit shingle hashes."""

    def __init__(self, num_perm: int = NUM_PERM, seed: int = 1):
        rng = np.random.default_rng(seed)
        self.num_perm = num_perm
        self._a = rng.integers(1, 2**63, num_perm, dtype=np.uint64) | np.uint64(1)
        self._b = rng.integers(0, 2**63, num_perm, dtype=np.uint64)

    @staticmethod
    def _hash32(shingle: str) -> int:
        return int.from_bytes(hashlib.blake2b(shingle.encode("utf-8"), digest_size=4).digest(), "little")

    def signature(self, shingle_set: Iterable[str]) -> np.ndarray:
        hv = np.fromiter((self._hash32(s) for s in shingle_set), dtype=np.uint64)
        if hv.size == 0:
            return np.full(self.num_perm, np.iinfo(np.uint64).max, dtype=np.uint64)
        with np.errstate(over="ignore"):
            mixed = (self._a[:, None] * hv[None, :] + self._b[:, None]) >> np.uint64(32)
        return mixed.min(axis=1)

    @staticmethod
    def estimate(sig_a: np.ndarray, sig_b: np.ndarray) -> float:
        return float(np.mean(sig_a == sig_b))


def lsh_candidates(signatures: Sequence[np.ndarray], bands: int = NUM_BANDS) -> set[tuple[int, int]]:
    """Index pairs (i < j) sharing at least one band bucket."""
    if not signatures:
        return set()
    rows = len(signatures[0]) // bands
    pairs: set[tuple[int, int]] = set()
    for b in range(bands):
        buckets: dict[bytes, list[int]] = defaultdict(list)
        for i, sig in enumerate(signatures):
            buckets[sig[b * rows:(b + 1) * rows].tobytes()].append(i)
        for members in buckets.values():
            for x in range(len(members)):
                for y in range(x + 1, len(members)):
                    pairs.add((members[x], members[y]))
    return pairs


@dataclass
class DedupDecision:
    kept_id: str
    dropped_ids: list[str]
    reason: str  # "exact-hash" | "near-dup"
    similarity: float

    def to_dict(self) -> dict:
        return {"kept_id": self.kept_id, "dropped_ids": self.dropped_ids,
                "reason": self.reason, "similarity": self.similarity}


def priority_order(docs: Sequence[TrialDocument], source_priority: Sequence[str]) -> list[int]:
    """Indices sorted by source priority, then earliest registration date, then id."""
    rank = {s: i for i, s in enumerate(source_priority)}

    def key(i: int):
        d = docs[i]
        date = d.registration_date or dt.date.max
        return (rank.get(d.source, len(rank)), date, d.id)

    return sorted(range(len(docs)), key=key)


def dedup_corpus(docs: Sequence[TrialDocument], threshold: float = 0.9,
                 source_priority: Sequence[str] = (), *, shingle_size: int = SHINGLE_SIZE,
                 num_perm: int = NUM_PERM, bands: int = NUM_BANDS, seed: int = 1,
                 ) -> tuple[list[TrialDocument], list[DedupDecision]]:
    """Remove exact and near-duplicate documents within and across sources.

    Documents are visited in priority order and each is kept unless it
    duplicates an already-kept document: exact first (normalized content hash),
    then near-duplicate, where MinHash/LSH proposes candidates and the exact
    shingle Jaccard decides. One decision is emitted per dropped document.
    Kept documents are returned in input order.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    hasher = MinHasher(num_perm, seed)
    texts = [dedup_text(d) for d in docs]
    hashes = [hashlib.sha256(t.encode("utf-8")).hexdigest() for t in texts]
    sets = [shingles(t, shingle_size) for t in texts]
    sigs = [hasher.signature(s) for s in sets]
    neighbours: dict[int, set[int]] = defaultdict(set)
    for i, j in lsh_candidates(sigs, bands):
        neighbours[i].add(j)
        neighbours[j].add(i)

    kept_by_hash: dict[str, int] = {}
    kept: set[int] = set()
    decisions = []
    for i in priority_order(docs, source_priority):
        if hashes[i] in kept_by_hash:
            k = kept_by_hash[hashes[i]]
            decisions.append(DedupDecision(docs[k].id, [docs[i].id], "exact-hash", 1.0))
            continue
        best, best_sim = None, -1.0
        for j in sorted(neighbours[i] & kept):
            sim = jaccard(sets[i], sets[j])
            if sim > best_sim:
                best, best_sim = j, sim
        if best is not None and best_sim >= threshold:
            decisions.append(DedupDecision(docs[best].id, [docs[i].id], "near-dup", best_sim))
            continue
        kept.add(i)
        kept_by_hash[hashes[i]] = i
    return [d for i, d in enumerate(docs) if i in kept], decisions


def dedup_report_lines(decisions: Iterable[DedupDecision]) -> str:
    return "".join(dumps_canonical(d.to_dict()) + "\n" for d in decisions)


# -- date split ---------------------------------------------------------------

@dataclass(frozen=True)
class SplitAssignment:
    doc_id: str
    split: str  # "train" | "test" | "excluded"
    cutoff: dt.date


def assign_split(date: dt.date | None, cutoff: dt.date = DEFAULT_CUTOFF) -> str:
    if date is None:
        return "excluded"
    return "train" if date < cutoff else "test"


def split_by_date(docs: Iterable[TrialDocument], cutoff: dt.date = DEFAULT_CUTOFF) -> list[SplitAssignment]:
    return [SplitAssignment(d.id, assign_split(d.registration_date, cutoff), cutoff) for d in docs]


def split_counts(assignments: Iterable[SplitAssignment]) -> dict[str, int]:
    c = Counter(a.split for a in assignments)
    return {k: c.get(k, 0) for k in ("train", "test", "excluded")}


@dataclass
class SplitManifest:
    cutoff: dt.date
    train: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)
    excluded: list[str] = field(default_factory=list)

    @classmethod
    def from_assignments(cls, assignments: Sequence[SplitAssignment], cutoff: dt.date) -> SplitManifest:
        m = cls(cutoff)
        for a in assignments:
            getattr(m, a.split).append(a.doc_id)
        return m

    def to_json(self) -> str:
        return json.dumps({"cutoff": self.cutoff.isoformat(), "train": self.train, "test": self.test,
                           "excluded": self.excluded,
                           "counts": {"train": len(self.train), "test": len(self.test),
                                      "excluded": len(self.excluded)}},
                          indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> SplitManifest:
        d = json.loads(text)
        return cls(dt.date.fromisoformat(d["cutoff"]), d["train"], d["test"], d["excluded"])

    def split_of(self, doc_id: str) -> str:
        for name in ("train", "test", "excluded"):
            if doc_id in getattr(self, name):
                return name
        raise KeyError(doc_id)


def split_violations(docs: Iterable[TrialDocument], assignments: Iterable[SplitAssignment]) -> list[str]:
    """Full scan for leakage: ids whose assignment contradicts their date."""
    by_id = {d.id: d for d in docs}
    bad = []
    for a in assignments:
        date = by_id[a.doc_id].registration_date
        ok = ((a.split == "train" and date is not None and date < a.cutoff)
              or (a.split == "test" and date is not None and date >= a.cutoff)
              or (a.split == "excluded" and date is None))
        if not ok:
            bad.append(a.doc_id)
    return bad
