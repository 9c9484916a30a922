"""Canonical trial/paper records, registry parsers and the markdown passage renderer."""

from __future__ import annotations

import datetime as dt
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

from .text import normalize_text, unique

CTGOV = "ClinicalTrials.gov"

# Registry names accepted by the parsers, in the order of the source inventory.
SOURCES = (
    CTGOV,
    "ChiCTR",
    "EUCTR",
    "JRCT",
    "ANZCTR",
    "ISRCTN",
    "ReBEC",
    "CRIS",
    "DRKS",
    "IRCT",
    "TCTR",
    "LTR",
    "PACTR",
    "SLCTR",
)

CTGOV_SECTIONS = (
    "Public Title",
    "Study Overview",
    "Participation Criteria",
    "Study Plan",
    "Terms related to the study",
)

GENERIC_FIELDS = (
    "Public Title",
    "Scientific Title",
    "Study Type",
    "Study Design",
    "Intervention",
    "Inclusion Criteria",
    "Exclusion Criteria",
    "Primary Outcome Measures",
    "Secondary Outcome Measures",
)


class CorpusError(Exception):
    pass


class ParseError(CorpusError):
    """Malformed ingest payload. ``offset`` is a byte offset into the input."""

    def __init__(self, source: str, offset: int, message: str):
        self.source = source
        self.offset = offset
        super().__init__(f"{source} @ byte {offset}: {message}")


class RecordRejected(CorpusError):
    """Structurally valid payload that cannot become a record (missing or duplicate id)."""


class UnknownSource(CorpusError):
    pass


@dataclass
class EligibilityBlock:
    inclusion: list[str] = field(default_factory=list)
    exclusion: list[str] = field(default_factory=list)
    min_age: str = ""
    max_age: str = ""
    sexes: str = ""
    accepts_healthy_volunteers: bool | None = None

    def __post_init__(self):
        self.inclusion = unique(normalize_text(c) for c in self.inclusion)
        incl = set(self.inclusion)
        self.exclusion = [c for c in unique(normalize_text(c) for c in self.exclusion) if c not in incl]


@dataclass
class Arm:
    label: str
    description: str = ""


@dataclass
class TrialDocument:
    id: str
    source: str
    registration_date: dt.date | None = None
    public_title: str = ""
    scientific_title: str = ""
    brief_summary: str = ""
    detailed_description: str = ""
    conditions: list[str] = field(default_factory=list)
    interventions: list[str] = field(default_factory=list)
    phase: str = ""
    status: str = ""
    study_type: str = ""
    design_details: str = ""
    eligibility: EligibilityBlock = field(default_factory=EligibilityBlock)
    arms: list[Arm] = field(default_factory=list)
    primary_outcomes: list[str] = field(default_factory=list)
    secondary_outcomes: list[str] = field(default_factory=list)
    mesh_terms: list[str] = field(default_factory=list)
    raw: Any = field(default=None, compare=False, repr=False)
    flags: list[str] = field(default_factory=list, compare=False)

    def __post_init__(self):
        if not self.id:
            raise RecordRejected(f"{self.source}: record without id")
        for name in ("public_title", "scientific_title", "brief_summary", "detailed_description",
                     "phase", "status", "study_type", "design_details"):
            setattr(self, name, normalize_text(getattr(self, name)))
        for name in ("conditions", "interventions", "primary_outcomes", "secondary_outcomes", "mesh_terms"):
            setattr(self, name, unique(normalize_text(v) for v in getattr(self, name)))
        arms, seen = [], set()
        for arm in self.arms:
            arm = Arm(normalize_text(arm.label), normalize_text(arm.description))
            if arm.label and arm.label not in seen:
                seen.add(arm.label)
                arms.append(arm)
        self.arms = arms

    @property
    def outcome_measures(self) -> dict[str, list[str]]:
        return {"primary": self.primary_outcomes, "secondary": self.secondary_outcomes}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["registration_date"] = self.registration_date.isoformat() if self.registration_date else None
        d.pop("flags")
        if not self.flags:
            return d
        d["flags"] = list(self.flags)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrialDocument:
        d = dict(d)
        d["registration_date"] = parse_date(d.get("registration_date"))
        d["eligibility"] = EligibilityBlock(**d.get("eligibility", {}))
        d["arms"] = [Arm(**a) for a in d.get("arms", [])]
        return cls(**d)


@dataclass
class TrialPaper:
    pmid: str
    title: str
    abstract: str
    full_text: str | None = None
    mesh_terms: list[str] = field(default_factory=list)
    publication_date: dt.date | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["publication_date"] = self.publication_date.isoformat() if self.publication_date else None
        return d


def parse_date(value: Any) -> dt.date | None:
    """ISO dates, plus the registries' month-precision ``YYYY-MM`` form (day 1)."""
    if value in (None, ""):
        return None
    if isinstance(value, dt.date):
        return value
    text = str(value).strip()
    try:
        if re.fullmatch(r"\d{4}-\d{2}", text):
            return dt.date.fromisoformat(text + "-01")
        return dt.date.fromisoformat(text[:10])
    except ValueError as exc:
        raise CorpusError(f"invalid calendar date {text!r}") from exc


# -- eligibility criteria -----------------------------------------------------

_HEADER = re.compile(r"\b(inclusion|exclusion)\s+criteria\b\s*:?", re.IGNORECASE)
_BULLET = re.compile(r"^\s*(?:[-*•·]|\d{1,3}[.)]|\(?[a-z]\))\s+", re.IGNORECASE)


def _segment(block: str) -> list[str]:
    items = []
    for line in re.split(r"\n|(?<=\S)\s+(?=[•]\s)", block):
        line = _BULLET.sub("", line)
        line = normalize_text(line)
        if line:
            items.append(line)
    return items


def split_criteria(text: str) -> tuple[list[str], list[str], bool]:
    """Split free-text eligibility into (inclusion, exclusion, split_ok).

    Headers are matched case-insensitively; text without any header goes
    wholesale to inclusion and ``split_ok`` is False.
    """
    if not text or not text.strip():
        return [], [], True
    headers = list(_HEADER.finditer(text))
    if not headers:
        return _segment(text), [], False
    inclusion, exclusion = [], []
    preamble = text[: headers[0].start()]
    inclusion.extend(_segment(preamble))
    for i, m in enumerate(headers):
        end = headers[i + 1].start() if i + 1 < len(headers) else len(text)
        target = inclusion if m.group(1).lower() == "inclusion" else exclusion
        target.extend(_segment(text[m.end():end]))
    return inclusion, exclusion, True


# -- registry parsers ---------------------------------------------------------

def _load(raw: Any, source: str) -> dict:
    if isinstance(raw, dict):
        return raw
    text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else str(raw)
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ParseError(source, offset, exc.msg) from None
    if not isinstance(payload, dict):
        raise ParseError(source, 0, "record is not a JSON object")
    return payload


def _ctgov_outcome(o: dict) -> str:
    measure = o.get("measure", "")
    tf = o.get("timeFrame")
    return f"{measure} [{tf}]" if tf else measure


def _parse_ctgov(p: dict) -> TrialDocument:
    ps = p.get("protocolSection")
    if not isinstance(ps, dict):
        raise ParseError(CTGOV, 0, "missing protocolSection")
    ident = ps.get("identificationModule", {})
    status = ps.get("statusModule", {})
    desc = ps.get("descriptionModule", {})
    cond = ps.get("conditionsModule", {})
    design = ps.get("designModule", {})
    arms_mod = ps.get("armsInterventionsModule", {})
    elig = ps.get("eligibilityModule", {})
    outcomes = ps.get("outcomesModule", {})
    derived = p.get("derivedSection", {})

    reg = status.get("studyFirstSubmitDate") or status.get("studyFirstPostDateStruct", {}).get("date")
    info = design.get("designInfo", {})
    design_parts = [
        ("Allocation", info.get("allocation")),
        ("Intervention Model", info.get("interventionModel")),
        ("Primary Purpose", info.get("primaryPurpose")),
        ("Masking", info.get("maskingInfo", {}).get("masking")),
    ]
    inclusion, exclusion, ok = split_criteria(elig.get("eligibilityCriteria", ""))
    meshes = [m.get("term", "") for m in derived.get("conditionBrowseModule", {}).get("meshes", [])]
    meshes += [m.get("term", "") for m in derived.get("interventionBrowseModule", {}).get("meshes", [])]
    doc = TrialDocument(
        id=normalize_text(ident.get("nctId")),
        source=CTGOV,
        registration_date=parse_date(reg),
        public_title=ident.get("briefTitle", ""),
        scientific_title=ident.get("officialTitle", ""),
        brief_summary=desc.get("briefSummary", ""),
        detailed_description=desc.get("detailedDescription", ""),
        conditions=cond.get("conditions", []),
        interventions=[i.get("name", "") for i in arms_mod.get("interventions", [])],
        # multi-valued phase labels are kept verbatim, joined with "/"
        phase="/".join(design.get("phases", [])),
        status=status.get("overallStatus", ""),
        study_type=design.get("studyType", ""),
        design_details="; ".join(f"{k}: {v}" for k, v in design_parts if v),
        eligibility=EligibilityBlock(
            inclusion=inclusion,
            exclusion=exclusion,
            min_age=elig.get("minimumAge", ""),
            max_age=elig.get("maximumAge", ""),
            sexes=elig.get("sex", ""),
            accepts_healthy_volunteers=elig.get("healthyVolunteers"),
        ),
        arms=[Arm(a.get("label", ""), a.get("description", "")) for a in arms_mod.get("armGroups", [])],
        primary_outcomes=[_ctgov_outcome(o) for o in outcomes.get("primaryOutcomes", [])],
        secondary_outcomes=[_ctgov_outcome(o) for o in outcomes.get("secondaryOutcomes", [])],
        mesh_terms=meshes,
        raw=p,
    )
    if not ok:
        doc.flags.append("criteria_unsplit")
    return doc


def _as_list(value: Any) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return _segment(value)
    return [str(v) for v in value]


def _parse_generic(p: dict, source: str) -> TrialDocument:
    flags = []
    inclusion = _as_list(p.get("inclusion_criteria"))
    exclusion = _as_list(p.get("exclusion_criteria"))
    if p.get("eligibility_criteria"):
        inc, exc, ok = split_criteria(p["eligibility_criteria"])
        inclusion += inc
        exclusion += exc
        if not ok:
            flags.append("criteria_unsplit")
    doc = TrialDocument(
        id=normalize_text(p.get("id")),
        source=source,
        registration_date=parse_date(p.get("registration_date")),
        public_title=p.get("public_title", ""),
        scientific_title=p.get("scientific_title", ""),
        brief_summary=p.get("brief_summary", ""),
        detailed_description=p.get("detailed_description", ""),
        conditions=_as_list(p.get("conditions")),
        interventions=_as_list(p.get("interventions")),
        phase=p.get("phase", ""),
        status=p.get("status", ""),
        study_type=p.get("study_type", ""),
        design_details=p.get("study_design", ""),
        eligibility=EligibilityBlock(
            inclusion=inclusion,
            exclusion=exclusion,
            min_age=p.get("min_age", ""),
            max_age=p.get("max_age", ""),
            sexes=p.get("sexes", ""),
            accepts_healthy_volunteers=p.get("healthy_volunteers"),
        ),
        arms=[Arm(a.get("label", ""), a.get("description", "")) for a in p.get("arms", [])],
        primary_outcomes=_as_list(p.get("primary_outcomes")),
        secondary_outcomes=_as_list(p.get("secondary_outcomes")),
        mesh_terms=_as_list(p.get("mesh_terms")),
        raw=p,
    )
    doc.flags.extend(flags)
    return doc


def parse_registry_record(raw: Any, source: str) -> TrialDocument:
    """Parse one ingest record (JSON text, bytes or an already-decoded dict).

    ClinicalTrials.gov records use the v2 API study JSON; every other
    registry uses the flat record schema documented in the README.
    """
    if source not in SOURCES:
        raise UnknownSource(f"unknown registry source {source!r}")
    payload = _load(raw, source)
    try:
        if source == CTGOV:
            return _parse_ctgov(payload)
        return _parse_generic(payload, source)
    except RecordRejected:
        raise
    except (AttributeError, TypeError) as exc:
        raise ParseError(source, 0, f"unexpected field type: {exc}") from None


def read_registry_file(path: str | Path, source: str) -> Iterator[TrialDocument]:
    """Stream TrialDocuments from a JSONL ingest file; parse errors carry file byte offsets."""
    seen: set[str] = set()
    offset = 0
    with open(path, "rb") as fh:
        for line in fh:
            start = offset
            offset += len(line)
            if not line.strip():
                continue
            try:
                doc = parse_registry_record(line, source)
            except ParseError as exc:
                raise ParseError(source, start + exc.offset, str(exc).split(": ", 1)[-1]) from None
            if doc.id in seen:
                raise RecordRejected(f"{source}: duplicate id {doc.id}")
            seen.add(doc.id)
            yield doc


def parse_paper_record(raw: Any) -> TrialPaper:
    p = _load(raw, "papers")
    pmid = normalize_text(str(p.get("pmid") or ""))
    if not pmid:
        raise RecordRejected("paper record without pmid")
    full_text = normalize_text(p.get("full_text")) or None
    return TrialPaper(
        pmid=pmid,
        title=normalize_text(p.get("title")),
        abstract=normalize_text(p.get("abstract")),
        full_text=full_text,
        mesh_terms=unique(normalize_text(t) for t in p.get("mesh_terms", [])),
        publication_date=parse_date(p.get("publication_date")),
    )


def parse_papers(records: Iterable[Any]) -> dict[str, TrialPaper]:
    """Parse a batch of papers into a pmid-keyed store; a repeated pmid is rejected."""
    store: dict[str, TrialPaper] = {}
    for raw in records:
        paper = parse_paper_record(raw)
        if paper.pmid in store:
            raise RecordRejected(f"duplicate pmid {paper.pmid}")
        store[paper.pmid] = paper
    return store


# -- canonical JSONL ---------------------------------------------------------

def dumps_canonical(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def write_documents(docs: Iterable[TrialDocument], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(dumps_canonical(doc.to_dict()) + "\n")
            n += 1
    return n


def read_documents(path: str | Path) -> list[TrialDocument]:
    with open(path, encoding="utf-8") as fh:
        return [TrialDocument.from_dict(json.loads(line)) for line in fh if line.strip()]


# -- markdown -----------------------------------------------------------------

def _bullets(items: Iterable[str]) -> list[str]:
    return [f"- {item}" for item in items]


def _yes_no(value: bool | None) -> str:
    return {True: "Yes", False: "No", None: ""}[value]


def _criteria_lines(e: EligibilityBlock) -> list[str]:
    lines = []
    if e.inclusion:
        lines += ["Inclusion Criteria:", *_bullets(e.inclusion)]
    if e.exclusion:
        if lines:
            lines.append("")
        lines += ["Exclusion Criteria:", *_bullets(e.exclusion)]
    return lines


def _section(heading: str, body: list[str] | str) -> list[str]:
    if isinstance(body, str):
        body = [body] if body else []
    return [heading, *body, ""]


def render_trial_markdown(doc: TrialDocument, omit: Iterable[str] = ()) -> str:
    """Arrange a trial document into the markdown passage used for alignment.

    ``omit`` names subsections to leave out entirely (e.g. ``"Brief Summary"``
    when the summary is the prediction target).
    """
    omit = set(omit)
    if doc.source == CTGOV:
        lines = _render_ctgov(doc, omit)
    else:
        lines = _render_generic(doc, omit)
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines) + "\n"


def _render_ctgov(doc: TrialDocument, omit: set[str]) -> list[str]:
    e = doc.eligibility
    ages = []
    if e.min_age:
        ages.append(f"Minimum Age: {e.min_age}")
    if e.max_age:
        ages.append(f"Maximum Age: {e.max_age}")
    design = [f"{k}: {v}" for k, v in (("Study Type", doc.study_type), ("Phase", doc.phase),
                                       ("Status", doc.status), ("Design", doc.design_details)) if v]
    subsections = [
        ("## Brief Summary", doc.brief_summary),
        ("## Detailed Description", doc.detailed_description),
        ("## Official Title", doc.scientific_title),
        ("## Conditions", _bullets(doc.conditions)),
        ("## Intervention/Treatment", _bullets(doc.interventions)),
    ]
    lines = _section("# Public Title", doc.public_title)
    lines += ["# Study Overview", ""]
    for heading, body in subsections:
        if heading[3:] not in omit:
            lines += _section(heading, body)
    lines += ["# Participation Criteria", ""]
    lines += _section("## Eligibility Criteria", _criteria_lines(e))
    lines += _section("## Ages Eligibility for Study", ages)
    lines += _section("## Sexes Eligibility for Study", e.sexes)
    lines += _section("## Accepts Healthy Volunteers", _yes_no(e.accepts_healthy_volunteers))
    lines += ["# Study Plan", "", "## How is the study designed?", ""]
    lines += _section("### Design Details", design)
    lines += _section("### Arms and Interventions", [f"- **{a.label}**: {a.description}" for a in doc.arms])
    lines += ["## What is the study measuring?", ""]
    lines += _section("### Primary Outcome Measures", _bullets(doc.primary_outcomes))
    lines += _section("### Secondary Outcome Measures", _bullets(doc.secondary_outcomes))
    lines += _section("# Terms related to the study", _bullets(doc.mesh_terms))
    return lines


def _render_generic(doc: TrialDocument, omit: set[str]) -> list[str]:
    bodies = {
        "Public Title": doc.public_title,
        "Scientific Title": doc.scientific_title,
        "Study Type": doc.study_type,
        "Study Design": doc.design_details,
        "Intervention": _bullets(doc.interventions),
        "Inclusion Criteria": _bullets(doc.eligibility.inclusion),
        "Exclusion Criteria": _bullets(doc.eligibility.exclusion),
        "Primary Outcome Measures": _bullets(doc.primary_outcomes),
        "Secondary Outcome Measures": _bullets(doc.secondary_outcomes),
    }
    lines: list[str] = []
    for name in GENERIC_FIELDS:
        if name not in omit:
            lines += _section(f"# {name}", bodies[name])
    return lines


def _markdown_sections(text: str) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        m = re.match(r"^#{1,3} (.+)$", line)
        if m:
            current = m.group(1)
            sections[current] = []
        elif current is not None and line.strip():
            sections[current].append(line)
    return sections


def _unbullet(lines: list[str]) -> list[str]:
    return [line[2:] for line in lines if line.startswith("- ")]


def _keyed(lines: list[str]) -> dict[str, str]:
    out = {}
    for line in lines:
        key, _, value = line.partition(": ")
        out[key] = value
    return out


def parse_trial_markdown(text: str, *, id: str, source: str,
                         registration_date: dt.date | None = None) -> TrialDocument:
    """Inverse of :func:`render_trial_markdown` for the fields the passage carries."""
    s = _markdown_sections(text)
    one = lambda name: " ".join(s.get(name, []))  # noqa: E731
    if source != CTGOV:
        return TrialDocument(
            id=id, source=source, registration_date=registration_date,
            public_title=one("Public Title"), scientific_title=one("Scientific Title"),
            study_type=one("Study Type"), design_details=one("Study Design"),
            interventions=_unbullet(s.get("Intervention", [])),
            eligibility=EligibilityBlock(inclusion=_unbullet(s.get("Inclusion Criteria", [])),
                                         exclusion=_unbullet(s.get("Exclusion Criteria", []))),
            primary_outcomes=_unbullet(s.get("Primary Outcome Measures", [])),
            secondary_outcomes=_unbullet(s.get("Secondary Outcome Measures", [])),
        )
    crit = "\n".join(s.get("Eligibility Criteria", []))
    inclusion, exclusion, _ = split_criteria(crit)
    ages = _keyed(s.get("Ages Eligibility for Study", []))
    design = _keyed(s.get("Design Details", []))
    hv = one("Accepts Healthy Volunteers")
    arms = []
    for line in s.get("Arms and Interventions", []):
        m = re.match(r"^- \*\*(.+?)\*\*: ?(.*)$", line)
        if m:
            arms.append(Arm(m.group(1), m.group(2)))
    return TrialDocument(
        id=id, source=source, registration_date=registration_date,
        public_title=one("Public Title"),
        brief_summary=one("Brief Summary"),
        detailed_description=one("Detailed Description"),
        scientific_title=one("Official Title"),
        conditions=_unbullet(s.get("Conditions", [])),
        interventions=_unbullet(s.get("Intervention/Treatment", [])),
        phase=design.get("Phase", ""), status=design.get("Status", ""),
        study_type=design.get("Study Type", ""), design_details=design.get("Design", ""),
        eligibility=EligibilityBlock(
            inclusion=inclusion, exclusion=exclusion,
            min_age=ages.get("Minimum Age", ""), max_age=ages.get("Maximum Age", ""),
            sexes=one("Sexes Eligibility for Study"),
            accepts_healthy_volunteers={"Yes": True, "No": False}.get(hv),
        ),
        arms=arms,
        primary_outcomes=_unbullet(s.get("Primary Outcome Measures", [])),
        secondary_outcomes=_unbullet(s.get("Secondary Outcome Measures", [])),
        mesh_terms=_unbullet(s.get("Terms related to the study", [])),
    )
