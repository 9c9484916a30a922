"""Builders for the eight instruction-tuning task datasets."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .corpus import CTGOV, TrialDocument, TrialPaper, dumps_canonical, render_trial_markdown
from .curation import DEFAULT_CUTOFF
from .gateway import (DEFAULT_TEMPLATES, Backend, ConstraintViolation, Gateway, GatewayError,
                      TransportError, as_gateway, extract_json_list, ordered_map, user)
from .matching import PatientCase, matching_input, matching_instruction, matching_prompt, parse_eligibility
from .search import QueryError, StructuredQuery
from .text import jaccard, normalize_term, shingles

logger = logging.getLogger(__name__)

TASKS = (
    "query_generation", "query_expansion", "single_summarization", "multi_summarization",
    "criteria_design", "study_arm_design", "outcome_measure_design", "patient_trial_matching",
)
DESIGN_TASKS = ("criteria_design", "study_arm_design", "outcome_measure_design")
SPLITS = ("train", "dev", "test")

DEV_FRACTION = 0.15
MIN_SUMMARY_WORDS = 20
QUERY_SIMILARITY = 0.8
QUERY_SHINGLE = 3

INSTRUCTIONS = {
    "query_generation": "Generate a structured clinical trial search query (diseases, interventions, phases, "
                        "statuses, study_types) for the request.",
    "query_expansion": "Given the MeSH terms of a clinical trial search, suggest additional related terms.",
    "single_summarization": "Summarize the clinical trial document below.",
    "multi_summarization": "Write a review-style conclusion synthesizing the clinical trial papers below.",
}


@dataclass
class InstructionRecord:
    task: str
    split: str
    provenance: list[str]
    instruction: str = ""
    input: str = ""
    output: str = ""
    messages: list[dict] | None = None
    extra: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        multi = self.task in DESIGN_TASKS
        if multi != (self.messages is not None):
            raise ValueError(f"{self.task} records must be {'multi' if multi else 'single'}-turn")

    @property
    def is_multi_turn(self) -> bool:
        return self.messages is not None

    def to_dict(self) -> dict:
        d: dict = ({"messages": self.messages} if self.is_multi_turn
                   else {"instruction": self.instruction, "input": self.input, "output": self.output})
        d["provenance"] = self.provenance
        d.update(self.extra)
        if self.flags:
            d["flags"] = self.flags
        return d

    @classmethod
    def from_dict(cls, d: dict, task: str, split: str) -> InstructionRecord:
        d = dict(d)
        known = {"messages", "instruction", "input", "output", "provenance", "flags"}
        extra = {k: v for k, v in d.items() if k not in known}
        return cls(task, split, d.get("provenance", []), d.get("instruction", ""), d.get("input", ""),
                   d.get("output", ""), d.get("messages"), extra, d.get("flags", []))


def _unit(seed: int, key: str) -> float:
    h = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    return int.from_bytes(h[:8], "big") / 2**64


def date_split(date: dt.date | None, key: str, cutoff: dt.date = DEFAULT_CUTOFF, seed: int = 0,
               dev_fraction: float = DEV_FRACTION) -> str | None:
    """test when on/after the cutoff; before it, a seeded hash picks dev vs train.
    Undated items get None and are left out."""
    if date is None:
        return None
    if date >= cutoff:
        return "test"
    return "dev" if _unit(seed, key) < dev_fraction else "train"


def hash_split(key: str, seed: int = 0, test_fraction: float = 0.3, dev_fraction: float = DEV_FRACTION) -> str:
    u = _unit(seed, "split:" + key)
    if u < test_fraction:
        return "test"
    return "dev" if _unit(seed, "dev:" + key) < dev_fraction else "train"


def _sorted(records: list[InstructionRecord]) -> list[InstructionRecord]:
    return sorted(records, key=lambda r: (r.provenance, r.split))


# -- trial search -------------------------------------------------------------

class RegistryClient(Protocol):
    def count(self, q: StructuredQuery) -> int: ...


class RegistryUnavailable(Exception):
    pass


@dataclass
class BuildReport:
    counts: Counter = field(default_factory=Counter)

    def add(self, key: str, n: int = 1):
        self.counts[key] += n

    def to_dict(self) -> dict:
        return dict(sorted(self.counts.items()))


def query_record(request: str, query: StructuredQuery, seed: int = 0, origin: str = "seed") -> InstructionRecord:
    rid = "qg-" + hashlib.sha256(request.encode("utf-8")).hexdigest()[:12]
    return InstructionRecord("query_generation", hash_split(rid, seed), [rid],
                             INSTRUCTIONS["query_generation"], request, query.to_json(), extra={"origin": origin})


def _parse_candidates(text: str) -> list[tuple[str, StructuredQuery]]:
    out = []
    try:
        items = extract_json_list(text)
    except ConstraintViolation:
        return out
    for item in items:
        if not isinstance(item, dict) or not isinstance(item.get("request"), str):
            continue
        try:
            q = StructuredQuery.from_dict(item.get("query") or {})
        except (QueryError, TypeError, AttributeError):
            continue
        if item["request"].strip() and not q.is_empty():
            out.append((item["request"].strip(), q))
    return out


def build_query_generation_set(seeds: Sequence[InstructionRecord], backend: Backend | Gateway,
                               registry_client: RegistryClient, rounds: int = 3, per_round: int = 5,
                               examples_per_prompt: int = 5, similarity: float = QUERY_SIMILARITY,
                               seed: int = 0) -> tuple[list[InstructionRecord], BuildReport]:
    """Grow a seed pool with backend-written (request, query) pairs.

    Each round shows the backend a sample of the pool; candidates whose request
    has shingle Jaccard >= ``similarity`` with any pool member are discarded and
    the rest join the pool. Finally every query is executed and those with no
    results are removed. If the registry cannot be reached the remaining
    records are kept with an ``unexecuted`` flag.
    """
    if not seeds:
        raise ValueError("need at least one seed record")
    gw = as_gateway(backend)
    report = BuildReport()
    pool = list(seeds)
    pool_shingles = [shingles(r.input, QUERY_SHINGLE) for r in pool]
    rng = random.Random(seed)
    for rnd in range(rounds):
        sample = rng.sample(pool, min(examples_per_prompt, len(pool)))
        examples = "\n".join(dumps_canonical({"request": r.input, "query": json.loads(r.output)}) for r in sample)
        prompt = DEFAULT_TEMPLATES.render("query_generation_data", examples=examples, n=per_round)
        answer = gw.complete(user(prompt, tag="querygen", temperature=0.7))
        candidates = _parse_candidates(answer)
        report.add("candidates", len(candidates))
        for request, q in candidates:
            sh = shingles(request, QUERY_SHINGLE)
            if any(jaccard(sh, other) >= similarity for other in pool_shingles):
                report.add("dropped_similar")
                continue
            pool.append(query_record(request, q, seed, origin=f"round{rnd + 1}"))
            pool_shingles.append(sh)
    out = []
    reachable = True
    for rec in pool:
        if reachable:
            try:
                hits = registry_client.count(StructuredQuery.from_dict(json.loads(rec.output)))
            except (RegistryUnavailable, GatewayError, OSError) as exc:
                logger.warning("registry unreachable, remaining queries left unexecuted: %s", exc)
                reachable = False
            else:
                if hits == 0:
                    report.add("dropped_no_results")
                    continue
        if not reachable:
            rec.flags.append("unexecuted")
            report.add("unexecuted")
        out.append(rec)
    report.add("records", len(out))
    return _sorted(out), report


def build_query_expansion_set(docs: Iterable[TrialDocument], cutoff: dt.date = DEFAULT_CUTOFF,
                              seed: int = 0, n_input: int = 5) -> list[InstructionRecord]:
    """First five (normalized, de-duplicated) MeSH terms as input, the rest as output."""
    out = []
    for doc in docs:
        terms = list(dict.fromkeys(normalize_term(t) for t in doc.mesh_terms if normalize_term(t)))
        if len(terms) <= n_input:
            continue
        split = date_split(doc.registration_date, doc.id, cutoff, seed)
        if split is None:
            continue
        out.append(InstructionRecord("query_expansion", split, [doc.id], INSTRUCTIONS["query_expansion"],
                                     json.dumps(terms[:n_input], ensure_ascii=False),
                                     json.dumps(terms[n_input:], ensure_ascii=False)))
    return _sorted(out)


# -- summarization -------------------------------------------------------------

def build_single_summarization_set(docs: Iterable[TrialDocument], cutoff: dt.date = DEFAULT_CUTOFF,
                                   seed: int = 0, min_words: int = MIN_SUMMARY_WORDS) -> list[InstructionRecord]:
    out = []
    for doc in docs:
        if doc.source != CTGOV or len(doc.brief_summary.split()) < min_words:
            continue
        split = date_split(doc.registration_date, doc.id, cutoff, seed)
        if split is None:
            continue
        out.append(InstructionRecord("single_summarization", split, [doc.id],
                                     INSTRUCTIONS["single_summarization"],
                                     render_trial_markdown(doc, omit=("Brief Summary",)), doc.brief_summary))
    return _sorted(out)


@dataclass
class ReviewPair:
    review_id: str
    pmids: list[str]
    review: str
    split: str = ""


def paper_block(paper: TrialPaper) -> str:
    return f"Title: {paper.title}\nAbstract: {paper.abstract}"


def build_multi_summarization_set(review_pairs: Iterable[ReviewPair], papers: Mapping[str, TrialPaper],
                                  min_papers: int = 3, seed: int = 0) -> list[InstructionRecord]:
    """Keep review pairs with at least ``min_papers`` pmids resolving to stored trial papers."""
    out = []
    for pair in review_pairs:
        resolved = [papers[p] for p in pair.pmids if p in papers]
        if len(resolved) < min_papers:
            continue
        split = pair.split or hash_split(pair.review_id, seed, test_fraction=0.1)
        text = "\n\n".join(paper_block(p) for p in resolved)
        out.append(InstructionRecord("multi_summarization", split, [pair.review_id, *(p.pmid for p in resolved)],
                                     INSTRUCTIONS["multi_summarization"], text, pair.review))
    return _sorted(out)


# -- design conversations --------------------------------------------------------

COMPONENT_NAMES = {
    "criteria_design": "eligibility criteria",
    "study_arm_design": "study arms",
    "outcome_measure_design": "outcome measures",
}


def trial_setup(doc: TrialDocument) -> str:
    return (f"Title: {doc.public_title}\nConditions: {', '.join(doc.conditions)}\n"
            f"Drugs: {', '.join(doc.interventions)}\nPhase: {doc.phase or 'N/A'}")


def criteria_text(doc: TrialDocument) -> list[str]:
    e = doc.eligibility
    return [f"Inclusion: {c}" for c in e.inclusion] + [f"Exclusion: {c}" for c in e.exclusion]


def arm_text(doc: TrialDocument) -> list[str]:
    return [f"{a.label}: {a.description}" if a.description else a.label for a in doc.arms]


def design_components(doc: TrialDocument, task: str) -> tuple[list[str], str]:
    """Ground-truth items for a design subtask and the upstream context shown with them."""
    crit = "Eligibility criteria:\n" + "\n".join(f"- {c}" for c in criteria_text(doc))
    arms = "Study arms:\n" + "\n".join(f"- {a}" for a in arm_text(doc))
    if task == "criteria_design":
        return criteria_text(doc), ""
    if task == "study_arm_design":
        return arm_text(doc), crit
    if task == "outcome_measure_design":
        outcomes = [f"Primary: {o}" for o in doc.primary_outcomes] + [f"Secondary: {o}" for o in doc.secondary_outcomes]
        return outcomes, f"{arms}\n{crit}"
    raise ValueError(f"not a design task: {task!r}")


def _required_ok(doc: TrialDocument, task: str) -> bool:
    has_crit = bool(doc.eligibility.inclusion or doc.eligibility.exclusion)
    if task == "criteria_design":
        return has_crit
    if task == "study_arm_design":
        return has_crit and bool(doc.arms)
    return has_crit and bool(doc.arms) and bool(doc.primary_outcomes or doc.secondary_outcomes)


_NUMBERED = re.compile(r"^\s*(\d+)[.)]\s+(.*\S)")


def parse_numbered(text: str) -> list[str]:
    return [m.group(2) for m in map(_NUMBERED.match, text.splitlines()) if m]


def parse_conversation(text: str) -> list[dict]:
    """JSON message array with user/assistant roles alternating from the user and ending on the assistant."""
    items = extract_json_list(text)
    msgs = []
    for i, m in enumerate(items):
        if not isinstance(m, dict) or not isinstance(m.get("content"), str) or not m["content"].strip():
            raise ConstraintViolation(f"message {i} malformed")
        expected = "user" if i % 2 == 0 else "assistant"
        if m.get("role") != expected:
            raise ConstraintViolation(f"message {i} should be {expected}")
        msgs.append({"role": expected, "content": m["content"]})
    if not msgs or msgs[-1]["role"] != "assistant":
        raise ConstraintViolation("conversation must end with an assistant turn")
    return msgs


@dataclass
class DesignOutcome:
    record: InstructionRecord | None
    reasons_prompt: str = ""
    flag: str = ""


def _design_one(doc: TrialDocument, task: str, gw: Gateway, split: str) -> DesignOutcome:
    components, context = design_components(doc, task)
    name = COMPONENT_NAMES[task]
    setup = trial_setup(doc)
    ctx = f"\n{context}\n" if context else ""
    numbered = "\n".join(f"{i}. {c}" for i, c in enumerate(components, 1))
    prompt1 = DEFAULT_TEMPLATES.render("design_reasons", setup=setup, context=ctx, component_name=name,
                                       components=numbered)
    try:
        reasons = parse_numbered(gw.complete(user(prompt1, tag=f"design_reasons:{task}")))
        if len(reasons) != len(components):
            return DesignOutcome(None, prompt1, "reason_count_mismatch")
        with_reasons = "\n".join(f"{i}. {c}\n   Reason: {r}" for i, (c, r) in enumerate(zip(components, reasons), 1))
        prompt2 = DEFAULT_TEMPLATES.render("design_conversation", setup=setup, context=ctx, component_name=name,
                                           components_with_reasons=with_reasons)
        answer = gw.complete(user(prompt2, tag=f"design_conversation:{task}"))
    except TransportError:
        return DesignOutcome(None, prompt1, "backend_failure")
    try:
        messages = parse_conversation(answer)
    except ConstraintViolation:
        return DesignOutcome(None, prompt1, "malformed_conversation")
    assistant_text = "\n".join(m["content"] for m in messages if m["role"] == "assistant")
    if any(c not in assistant_text for c in components):
        return DesignOutcome(None, prompt1, "ground_truth_missing")
    rec = InstructionRecord(task, split, [doc.id], messages=messages,
                            extra={"reasons": reasons, "components": components})
    return DesignOutcome(rec, prompt1)


def build_design_conversations(docs: Iterable[TrialDocument], task: str, backend: Backend | Gateway,
                               cutoff: dt.date = DEFAULT_CUTOFF, seed: int = 0,
                               workers: int = 1) -> tuple[list[InstructionRecord], BuildReport]:
    """Two-stage conversation synthesis for one design subtask.

    Stage one asks for a reason per ground-truth item given the trial setup
    (title, conditions, drugs, phase) and upstream design context; stage two
    asks for a user/assistant conversation built from items, reasons and
    setup. Conversations whose assistant turns do not quote every item
    verbatim are dropped.
    """
    if task not in DESIGN_TASKS:
        raise ValueError(f"not a design task: {task!r}")
    gw = as_gateway(backend)
    report = BuildReport()
    todo = []
    for doc in docs:
        if doc.source != CTGOV or not _required_ok(doc, task):
            report.add("skipped_missing_fields")
            continue
        split = date_split(doc.registration_date, doc.id, cutoff, seed)
        if split is None:
            report.add("skipped_undated")
            continue
        todo.append((doc, split))
    outcomes = ordered_map(lambda item: _design_one(item[0], task, gw, item[1]), todo, workers)
    records = []
    for o in outcomes:
        if o.record is None:
            report.add(o.flag)
        else:
            records.append(o.record)
    report.add("records", len(records))
    return _sorted(records), report


# -- patient-trial matching ------------------------------------------------------

def build_matching_set(cases: Sequence[PatientCase], backend: Backend | Gateway,
                       workers: int = 1) -> tuple[list[InstructionRecord], BuildReport]:
    """Keep cases the backend labels correctly, with its full reasoning as the target output."""
    gw = as_gateway(backend)
    report = BuildReport()

    def answer(case: PatientCase) -> str | None:
        try:
            return gw.complete(user(matching_prompt(case), tag="matching"))
        except TransportError:
            return None

    answers = ordered_map(answer, cases, workers)
    records = []
    for case, text in zip(cases, answers):
        if text is None:
            report.add("backend_failure")
            continue
        pred = parse_eligibility(text, case.scheme)
        if pred is None:
            report.add("unparsed")
            continue
        if pred != case.label:
            report.add("wrong_label")
            continue
        split = "dev" if case.split == "dev" else ("test" if case.split == "test" else "train")
        records.append(InstructionRecord(
            "patient_trial_matching", split, [case.case_id], matching_instruction(case.scheme),
            matching_input(case), text.strip(), extra={"label": pred, "scheme": case.scheme}))
    report.add("records", len(records))
    return _sorted(records), report


# -- files ---------------------------------------------------------------------

def write_records(records: Iterable[InstructionRecord], out_dir: str | Path) -> dict[str, dict[str, int]]:
    """One JSONL per task per split (``<task>.<split>.jsonl``); returns counts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grouped: dict[tuple[str, str], list[InstructionRecord]] = {}
    for r in records:
        grouped.setdefault((r.task, r.split), []).append(r)
    counts: dict[str, dict[str, int]] = {}
    for (task, split), recs in sorted(grouped.items()):
        path = out_dir / f"{task}.{split}.jsonl"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r in recs:
                fh.write(dumps_canonical(r.to_dict()) + "\n")
        counts.setdefault(task, {})[split] = len(recs)
    return counts


def read_records(out_dir: str | Path, task: str, split: str) -> list[InstructionRecord]:
    path = Path(out_dir) / f"{task}.{split}.jsonl"
    if not path.exists():
        return []
    with open(path, encoding="utf-8") as fh:
        return [InstructionRecord.from_dict(json.loads(line), task, split) for line in fh if line.strip()]
