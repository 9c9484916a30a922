"""Five-category structured queries, their boolean compilation and a local inverted index."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import TrialDocument
from .gateway import (Backend, ConstraintViolation, FieldSpec, Gateway, DEFAULT_TEMPLATES,
                      as_gateway, constrained_fill, string_list, user)
from .text import normalize_term, normalize_terms

CATEGORIES = ("diseases", "interventions", "phases", "statuses", "study_types")

PHASES = ("early phase 1", "phase 1", "phase 2", "phase 3", "phase 4")
STATUSES = (
    "not yet recruiting", "recruiting", "enrolling by invitation", "active, not recruiting",
    "suspended", "terminated", "completed", "withdrawn", "unknown status",
)
STUDY_TYPES = ("interventional", "observational", "expanded access")
VOCABULARIES: dict[str, tuple[str, ...]] = {"phases": PHASES, "statuses": STATUSES, "study_types": STUDY_TYPES}

_ROMAN = {"i": "1", "ii": "2", "iii": "3", "iv": "4"}


class QueryError(ValueError):
    pass


class CompileError(QueryError):
    pass


def canonical_term(term: str, category: str) -> str:
    """Normalize a term; controlled categories also map registry enum spellings
    (``PHASE3``, ``ACTIVE_NOT_RECRUITING``, ``Phase III``) onto the vocabulary."""
    t = normalize_term(term)
    if category == "phases":
        t = t.replace("_", " ")
        t = re.sub(r"^(early )?phase ?([0-4]|iv|iii|ii|i)$", lambda m: f"{m.group(1) or ''}phase {_ROMAN.get(m.group(2), m.group(2))}", t)
        if t == "phase 0":
            t = "early phase 1"
    elif category == "statuses":
        t = t.replace("_", " ")
        if t == "active not recruiting":
            t = "active, not recruiting"
        if t == "unknown":
            t = "unknown status"
    elif category == "study_types":
        t = t.replace("_", " ")
    return t


@dataclass
class StructuredQuery:
    diseases: list[str] = field(default_factory=list)
    interventions: list[str] = field(default_factory=list)
    phases: list[str] = field(default_factory=list)
    statuses: list[str] = field(default_factory=list)
    study_types: list[str] = field(default_factory=list)
    # keys whose extraction fell back to empty; not part of equality
    flags: list[str] = field(default_factory=list, compare=False)

    def __post_init__(self):
        for c in CATEGORIES:
            terms = list(dict.fromkeys(canonical_term(t, c) for t in getattr(self, c)))
            terms = [t for t in terms if t]
            vocab = VOCABULARIES.get(c)
            if vocab is not None:
                bad = [t for t in terms if t not in vocab]
                if bad:
                    raise QueryError(f"{c}: {bad[0]!r} is outside the controlled vocabulary")
            setattr(self, c, terms)

    def is_empty(self) -> bool:
        return not any(getattr(self, c) for c in CATEGORIES)

    def to_dict(self) -> dict[str, list[str]]:
        return {c: list(getattr(self, c)) for c in CATEGORIES}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: Mapping[str, Iterable[str]]) -> StructuredQuery:
        unknown = set(d) - set(CATEGORIES) - {"flags"}
        if unknown:
            raise QueryError(f"unknown query keys {sorted(unknown)}")
        return cls(**{c: list(d.get(c, [])) for c in CATEGORIES})


# -- boolean expression -------------------------------------------------------

@dataclass(frozen=True)
class OrGroup:
    category: str | None
    terms: tuple[str, ...]

    def __post_init__(self):
        if not self.terms:
            raise QueryError("empty OR-group")


@dataclass(frozen=True)
class SearchExpression:
    """AND of OR-groups. A group with ``category=None`` matches any category."""

    conjuncts: tuple[OrGroup, ...]

    def __post_init__(self):
        if not self.conjuncts:
            raise QueryError("expression needs at least one conjunct")

    def to_string(self, qualified: bool = False) -> str:
        parts = []
        for g in self.conjuncts:
            body = "(" + " OR ".join(_quote(t) for t in g.terms) + ")"
            parts.append(f"{g.category}:{body}" if qualified and g.category else body)
        return " AND ".join(parts)

    def __str__(self) -> str:
        return self.to_string()

    def to_dict(self) -> dict:
        return {"conjuncts": [{"category": g.category, "terms": list(g.terms)} for g in self.conjuncts]}


_BARE = re.compile(r"^[^\s()\"]+(?: [^\s()\"]+)*$")


def _quote(term: str) -> str:
    if _BARE.match(term) and " OR " not in term and " AND " not in term:
        return term
    return json.dumps(term, ensure_ascii=False)


def compile_query(q: StructuredQuery) -> SearchExpression:
    """OR within a category, AND across categories, in fixed category order."""
    groups = [OrGroup(c, tuple(getattr(q, c))) for c in CATEGORIES if getattr(q, c)]
    if not groups:
        raise CompileError("cannot compile an all-empty query (no match-all semantics)")
    return SearchExpression(tuple(groups))


def parse_expression(text: str) -> SearchExpression:
    """Parse the canonical string form, qualified (``diseases:(a OR b)``) or not."""
    pos = 0
    groups = []
    text = text.strip()

    def expect(token: str):
        nonlocal pos
        if not text.startswith(token, pos):
            raise QueryError(f"expected {token!r} at {pos}")
        pos += len(token)

    while True:
        m = re.compile(r"([a-z_]+):").match(text, pos)
        category = None
        if m:
            category = m.group(1)
            if category not in CATEGORIES:
                raise QueryError(f"unknown category {category!r}")
            pos = m.end()
        expect("(")
        terms = []
        while True:
            if text.startswith('"', pos):
                term, end = json.JSONDecoder().raw_decode(text, pos)
                pos = end
            else:
                m = re.compile(r"(.+?)(?= OR |\))").match(text, pos)
                if not m:
                    raise QueryError(f"unterminated group at {pos}")
                term = m.group(1)
                pos = m.end()
            terms.append(term)
            if text.startswith(" OR ", pos):
                pos += 4
                continue
            expect(")")
            break
        groups.append(OrGroup(category, tuple(terms)))
        if pos == len(text):
            return SearchExpression(tuple(groups))
        expect(" AND ")


# -- index --------------------------------------------------------------------

def document_terms(doc: TrialDocument) -> dict[str, list[str]]:
    """Per-category normalized terms under which a document is indexed."""
    def controlled(values, cat):
        out = []
        for v in values:
            t = canonical_term(v, cat)
            if t in VOCABULARIES[cat]:
                out.append(t)
        return out

    return {
        "diseases": normalize_terms([*doc.conditions, *doc.mesh_terms]),
        "interventions": normalize_terms(doc.interventions),
        "phases": controlled(doc.phase.split("/") if doc.phase else [], "phases"),
        "statuses": controlled([doc.status], "statuses"),
        "study_types": controlled([doc.study_type], "study_types"),
    }


@dataclass
class TermIndex:
    postings: dict[str, dict[str, frozenset[str]]]
    doc_ids: frozenset[str]

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    @classmethod
    def from_terms(cls, docs: Mapping[str, Mapping[str, Iterable[str]]]) -> TermIndex:
        """Build from ``{doc_id: {category: terms}}``."""
        post: dict[str, dict[str, set[str]]] = {c: {} for c in CATEGORIES}
        for doc_id, cats in docs.items():
            for c, terms in cats.items():
                if c not in post:
                    raise QueryError(f"unknown category {c!r}")
                for t in terms:
                    post[c].setdefault(canonical_term(t, c), set()).add(doc_id)
        return cls({c: {t: frozenset(ids) for t, ids in p.items()} for c, p in post.items()},
                   frozenset(docs))

    @classmethod
    def build(cls, docs: Iterable[TrialDocument]) -> TermIndex:
        return cls.from_terms({d.id: document_terms(d) for d in docs})

    def posting(self, category: str | None, term: str) -> frozenset[str]:
        if category is None:
            out: frozenset[str] = frozenset()
            for c in CATEGORIES:
                out |= self.postings[c].get(canonical_term(term, c), frozenset())
            return out
        return self.postings.get(category, {}).get(canonical_term(term, category), frozenset())

    def save(self, path: str | Path) -> None:
        """JSON: ``{"doc_ids": [...], "postings": {category: {term: [ids]}}}``, all sorted."""
        data = {"doc_ids": sorted(self.doc_ids),
                "postings": {c: {t: sorted(ids) for t, ids in sorted(p.items())}
                             for c, p in self.postings.items()}}
        Path(path).write_text(json.dumps(data, ensure_ascii=False, indent=1, sort_keys=True) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> TermIndex:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        ids = frozenset(data["doc_ids"])
        postings = {c: {t: frozenset(v) for t, v in p.items()} for c, p in data["postings"].items()}
        for p in postings.values():
            for v in p.values():
                if not v <= ids:
                    raise QueryError("posting references an id missing from the manifest")
        return cls(postings, ids)


def evaluate_expression(expr: SearchExpression, index: TermIndex) -> set[str]:
    result: set[str] | None = None
    for g in expr.conjuncts:
        union: set[str] = set()
        for t in g.terms:
            union |= index.posting(g.category, t)
        result = union if result is None else result & union
        if not result:
            return set()
    return result or set()


class LocalRegistry:
    """Registry client executing structured queries against a local index."""

    def __init__(self, index: TermIndex):
        self.index = index

    def count(self, q: StructuredQuery) -> int:
        return len(evaluate_expression(compile_query(q), self.index))


# -- LLM-driven extraction ----------------------------------------------------

KEY_DESCRIPTIONS = {
    "diseases": "diseases or conditions",
    "interventions": "interventions, drugs or treatments",
    "phases": "trial phases",
    "statuses": "recruitment statuses",
    "study_types": "study types",
}


def _term_list_parser(category: str):
    vocab = VOCABULARIES.get(category)

    def parse(text: str) -> list[str]:
        terms = [canonical_term(t, category) for t in string_list(text)]
        terms = [t for t in dict.fromkeys(terms) if t]
        if vocab is not None:
            bad = [t for t in terms if t not in vocab]
            if bad:
                raise ConstraintViolation(f"{bad[0]!r} is not one of {list(vocab)}")
        return terms

    return parse


def query_schema(max_attempts: int = 3) -> list[FieldSpec]:
    specs = []
    for c in CATEGORIES:
        allowed = VOCABULARIES.get(c)
        hint = f" Allowed values: {json.dumps(list(allowed))}." if allowed else ""
        prompt = (f'Fill the key "{c}": list the {KEY_DESCRIPTIONS[c]} mentioned in the request.{hint} '
                  f'Answer with a JSON array of strings only; use [] if none.')
        specs.append(FieldSpec(c, prompt, _term_list_parser(c), fallback=list, max_attempts=max_attempts))
    return specs


def extract_structured_query(user_text: str, backend: Backend | Gateway, max_attempts: int = 3) -> StructuredQuery:
    """Named-entity style extraction, one key at a time in category order.

    Keys that cannot be filled within the re-ask budget are empty and listed in
    ``flags``. Transport failures propagate as ``TransportError``.
    """
    context = DEFAULT_TEMPLATES.render("query_generation_eval", request=user_text)
    filled = constrained_fill(query_schema(max_attempts), backend, context=context, tag="extract")
    q = StructuredQuery(**filled.values)
    q.flags = list(filled.flags)
    return q


def expand_terms(seed_terms: Sequence[str], backend: Backend | Gateway, max_attempts: int = 2) -> list[str]:
    """Ask the backend for related search terms; output is normalized and disjoint from the seeds."""
    if not seed_terms:
        raise QueryError("expand_terms needs at least one seed term")
    gw = as_gateway(backend)
    prompt = DEFAULT_TEMPLATES.render("query_expansion_eval", terms=json.dumps(list(seed_terms), ensure_ascii=False))
    raw: list[str] = []
    for _ in range(max_attempts):
        answer = gw.complete(user(prompt, tag="expand"))
        try:
            raw = string_list(answer)
            break
        except ConstraintViolation:
            continue
    seeds = set(normalize_terms(seed_terms))
    return [t for t in normalize_terms(raw) if t not in seeds]
