"""Patient-trial matching cases, label schemes and free-text label parsing."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

from .gateway import DEFAULT_TEMPLATES
from .metrics import parse_label


@dataclass(frozen=True)
class LabelScheme:
    name: str
    labels: dict[int, str]
    phrases: dict[int, tuple[str, ...]]
    positive: int = 2
    unparsed: int = 1

    def label_block(self) -> str:
        return "\n".join(f"{k}) {v}" for k, v in sorted(self.labels.items()))


SCHEMES = {
    "TREC2021": LabelScheme(
        "TREC2021",
        {0: "Excluded (patient meets inclusion criteria, but is excluded on the grounds of the trial's exclusion criteria)",
         1: "Not relevant (patient does not have sufficient information to qualify for the trial)",
         2: "Eligible (patient meets inclusion criteria and exclusion criteria do not apply)"},
        {0: ("excluded", "not eligible", "ineligible"),
         1: ("not relevant", "irrelevant"),
         2: ("eligible",)},
    ),
    "SIGIR": LabelScheme(
        "SIGIR",
        {0: "Would not refer this patient for this clinical trial",
         1: "Would consider referring this patient to this clinical trial upon further investigation",
         2: "Highly likely to refer this patient for this clinical trial"},
        {0: ("would not refer",),
         1: ("would consider referring",),
         2: ("highly likely to refer",)},
    ),
}


class CaseError(ValueError):
    pass


@dataclass(frozen=True)
class PatientCase:
    patient_id: str
    note: str
    trial_id: str
    criteria: str
    label: int
    scheme: str
    split: str = "test"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise CaseError(f"unknown scheme {self.scheme!r}")
        if self.label not in SCHEMES[self.scheme].labels:
            raise CaseError(f"label {self.label!r} not in {self.scheme} label set")

    @property
    def case_id(self) -> str:
        return f"{self.patient_id}::{self.trial_id}"

    def to_dict(self) -> dict:
        return asdict(self)


def read_cases(path: str | Path) -> list[PatientCase]:
    with open(path, encoding="utf-8") as fh:
        return [PatientCase(**json.loads(line)) for line in fh if line.strip()]


def parse_eligibility(text: str, scheme: str) -> int | None:
    """Longest scheme label phrase, last occurrence wins; None when nothing matches."""
    return parse_label(text, SCHEMES[scheme].phrases)


def matching_instruction(scheme: str) -> str:
    return DEFAULT_TEMPLATES.render(
        "matching_instruction",
        labels=SCHEMES[scheme].label_block(),
        demonstration=DEFAULT_TEMPLATES.render(f"matching_demo_{scheme.lower()}"),
    )


def matching_input(case: PatientCase) -> str:
    return f"Patient notes:\n{case.note}\n\nTrial criteria:\n{case.criteria}"


def matching_prompt(case: PatientCase) -> str:
    return DEFAULT_TEMPLATES.render("matching", instruction=matching_instruction(case.scheme),
                                    case=matching_input(case))


def check_single_scheme(cases: Iterable[PatientCase]) -> str:
    schemes = {c.scheme for c in cases}
    if len(schemes) != 1:
        raise CaseError(f"cases must share one label scheme, got {sorted(schemes)}")
    return schemes.pop()
