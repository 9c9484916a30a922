"""Access to the bundled synthetic mini-corpus and helpers for planting duplicates."""

from __future__ import annotations

import json
import random
from dataclasses import replace
from pathlib import Path

from .corpus import SOURCES, TrialDocument, parse_papers, read_registry_file
from .curation import dedup_text
from .instruct import ReviewPair, query_record
from .matching import PatientCase, read_cases
from .mock import MockBackend
from .search import StructuredQuery
from .text import jaccard, shingles

DATA_DIR = Path(__file__).parent / "data"


def data_path(name: str) -> Path:
    return DATA_DIR / name


def registry_files() -> dict[Path, str]:
    """Bundled ingest files mapped to their registry source."""
    mapping = json.loads(data_path("sources.json").read_text(encoding="utf-8"))
    return {data_path(name): source for name, source in sorted(mapping.items())}


def mini_corpus() -> list[TrialDocument]:
    docs = []
    for path, source in registry_files().items():
        docs.extend(read_registry_file(path, source))
    return docs


def _jsonl(name: str) -> list[dict]:
    with open(data_path(name), encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def papers():
    return parse_papers(_jsonl("papers.jsonl"))


def review_pairs() -> list[ReviewPair]:
    return [ReviewPair(**r) for r in _jsonl("reviews.jsonl")]


def matching_cases(scheme: str | None = None) -> list[PatientCase]:
    cases = read_cases(data_path("matching_cases.jsonl"))
    return [c for c in cases if scheme is None or c.scheme == scheme]


def query_seeds(seed: int = 0):
    return [query_record(r["request"], StructuredQuery.from_dict(r["query"]), seed)
            for r in _jsonl("query_seeds.jsonl")]


def mock_lexicon() -> dict:
    return json.loads(data_path("mock_lexicon.json").read_text(encoding="utf-8"))


def mock_backend(model_id: str = "mock", sentinel: str | None = None) -> MockBackend:
    lex = mock_lexicon()
    return MockBackend(lex["lexicon"], lex["related"], model_id=model_id, sentinel=sentinel)


_FILLER = ("participants", "will", "continue", "routine", "follow", "up", "visits", "with", "the", "study",
           "team", "after", "treatment", "ends", "and", "report", "any", "new", "symptoms", "promptly")


def near_duplicate(doc: TrialDocument, new_id: str, target: float = 0.95, source: str | None = None) -> TrialDocument:
    """Copy of ``doc`` with filler words appended to its description so that the
    5-token shingle Jaccard with the original is close to ``target``."""
    base = shingles(dedup_text(doc))
    best = None
    for extra in range(1, len(base)):
        words = [_FILLER[i % len(_FILLER)] + (str(i // len(_FILLER)) if i >= len(_FILLER) else "")
                 for i in range(extra)]
        copy = replace(doc, id=new_id, source=source or doc.source, raw=None, flags=[],
                       detailed_description=f"{doc.detailed_description} {' '.join(words)}".strip())
        sim = jaccard(base, shingles(dedup_text(copy)))
        if best is None or abs(sim - target) < abs(best[1] - target):
            best = (copy, sim)
        if sim < target:
            break
    copy, sim = best
    if not target - 0.03 <= sim < 1.0:
        raise ValueError(f"could not plant a near duplicate at {target} (got {sim:.3f})")
    return copy


def plant_duplicates(docs: list[TrialDocument], exact: int = 3, near: int = 2, seed: int = 0,
                     near_target: float = 0.95) -> tuple[list[TrialDocument], list[str]]:
    """Append ``exact`` cross-registry exact copies and ``near`` near-duplicates.

    Copies are re-registered under another source with a later date, so the
    originals win the priority ordering. Returns the enlarged corpus and the
    ids of the planted documents.
    """
    rng = random.Random(seed)
    picks = rng.sample(range(len(docs)), exact + near)
    planted = []
    for n, i in enumerate(picks):
        orig = docs[i]
        other = next(s for s in SOURCES[1:] if s != orig.source)
        new_id = f"DUP-{n + 1:02d}-{orig.id}"
        if n < exact:
            copy = replace(orig, id=new_id, source=other, raw=None, flags=[])
        else:
            copy = near_duplicate(orig, new_id, near_target, source=other)
        if orig.registration_date is not None:
            copy = replace(copy, registration_date=orig.registration_date.replace(year=orig.registration_date.year + 1)
                           if not (orig.registration_date.month == 2 and orig.registration_date.day == 29)
                           else orig.registration_date)
        planted.append(copy)
    return list(docs) + planted, [p.id for p in planted]
