import copy
import datetime as dt
import json

import pytest
from hypothesis import given, strategies as st

from trialkit.corpus import (CTGOV, CTGOV_SECTIONS, GENERIC_FIELDS, Arm, EligibilityBlock, ParseError,
                             RecordRejected, TrialDocument, UnknownSource, parse_paper_record, parse_papers,
                             parse_registry_record, parse_trial_markdown, read_documents, read_registry_file,
                             render_trial_markdown, split_criteria, write_documents)

GOLDEN_CTGOV = {
    "protocolSection": {
        "identificationModule": {"nctId": "NCT01234567", "briefTitle": "Drug  X for melanoma",
                                 "officialTitle": "A Phase 2 Study of Drug X"},
        "statusModule": {"overallStatus": "RECRUITING", "studyFirstSubmitDate": "2021-05-04"},
        "descriptionModule": {"briefSummary": "Short summary.", "detailedDescription": "Longer text."},
        "conditionsModule": {"conditions": ["Melanoma", "Skin Cancer"]},
        "designModule": {"studyType": "INTERVENTIONAL", "phases": ["PHASE2"]},
        "armsInterventionsModule": {"armGroups": [{"label": "Arm A", "description": "Drug X 10 mg"}],
                                    "interventions": [{"name": "Drug X"}]},
        "eligibilityModule": {
            "eligibilityCriteria": "Inclusion Criteria:\n\n* age 18 or older\n* confirmed melanoma\n"
                                   "* ECOG 0-1\n\nExclusion Criteria:\n\n* pregnancy\n* prior drug X",
            "minimumAge": "18 Years", "sex": "ALL", "healthyVolunteers": False},
        "outcomesModule": {"primaryOutcomes": [{"measure": "Response rate", "timeFrame": "12 weeks"}]},
    },
    "derivedSection": {"conditionBrowseModule": {"meshes": [{"term": "Melanoma"}]}},
}


def test_golden_ctgov_record_field_by_field():
    doc = parse_registry_record(json.dumps(GOLDEN_CTGOV), CTGOV)
    assert doc.id == "NCT01234567"
    assert doc.source == "ClinicalTrials.gov"
    assert doc.registration_date == dt.date(2021, 5, 4)
    assert doc.public_title == "Drug X for melanoma"  # whitespace collapsed
    assert doc.scientific_title == "A Phase 2 Study of Drug X"
    assert doc.conditions == ["Melanoma", "Skin Cancer"]
    assert doc.interventions == ["Drug X"]
    assert doc.phase == "PHASE2" and doc.status == "RECRUITING" and doc.study_type == "INTERVENTIONAL"
    assert doc.eligibility.inclusion == ["age 18 or older", "confirmed melanoma", "ECOG 0-1"]
    assert doc.eligibility.exclusion == ["pregnancy", "prior drug X"]
    assert doc.eligibility.min_age == "18 Years" and doc.eligibility.accepts_healthy_volunteers is False
    assert doc.arms == [Arm("Arm A", "Drug X 10 mg")]
    assert doc.primary_outcomes == ["Response rate [12 weeks]"]
    assert doc.mesh_terms == ["Melanoma"]
    assert doc.raw["protocolSection"]["identificationModule"]["nctId"] == "NCT01234567"


def test_missing_registration_date_is_null():
    rec = copy.deepcopy(GOLDEN_CTGOV)
    del rec["protocolSection"]["statusModule"]["studyFirstSubmitDate"]
    assert parse_registry_record(rec, CTGOV).registration_date is None


def test_criteria_header_split_and_unsplittable_flag():
    inc, exc, ok = split_criteria("INCLUSION CRITERIA: - a\n- b\n- c\nexclusion criteria:\n- d\n- e")
    assert (inc, exc, ok) == (["a", "b", "c"], ["d", "e"], True)
    inc, exc, ok = split_criteria("adults with asthma")
    assert inc == ["adults with asthma"] and exc == [] and not ok


def test_malformed_payload_reports_byte_offset():
    with pytest.raises(ParseError) as err:
        parse_registry_record('{"id": "X", "public_title": }', "ChiCTR")
    assert err.value.source == "ChiCTR"
    assert err.value.offset == len('{"id": "X", "public_title": ')


def test_missing_id_rejected_and_unknown_source():
    with pytest.raises(RecordRejected):
        parse_registry_record({"public_title": "t"}, "DRKS")
    with pytest.raises(UnknownSource):
        parse_registry_record({"id": "a"}, "NotARegistry")


def test_file_offsets_and_duplicate_ids(tmp_path):
    p = tmp_path / "x.jsonl"
    good = '{"id": "A-1"}\n'
    p.write_text(good + '{"id": oops}\n', encoding="utf-8")
    with pytest.raises(ParseError) as err:
        list(read_registry_file(p, "DRKS"))
    assert err.value.offset == len(good) + len('{"id": ')
    p.write_text(good + good, encoding="utf-8")
    with pytest.raises(RecordRejected, match="duplicate id"):
        list(read_registry_file(p, "DRKS"))


def test_eligibility_lists_disjoint_and_dedup():
    e = EligibilityBlock(inclusion=["a", "b", "a"], exclusion=["b", "c"])
    assert e.inclusion == ["a", "b"] and e.exclusion == ["c"]


def test_fixture_corpus_has_fifty_docs(corpus):
    assert len(corpus) == 50
    assert len({(d.source, d.id) for d in corpus}) == 50


def test_ctgov_markdown_five_sections_in_order(corpus):
    doc = next(d for d in corpus if d.source == CTGOV)
    md = render_trial_markdown(doc)
    heads = [line[2:] for line in md.splitlines() if line.startswith("# ")]
    assert heads == list(CTGOV_SECTIONS)
    for sub in ("Brief Summary", "Detailed Description", "Official Title", "Conditions", "Intervention/Treatment"):
        assert f"## {sub}" in md
    assert md.endswith("\n") and not md.endswith("\n\n")


def test_generic_markdown_nine_fields(corpus):
    doc = next(d for d in corpus if d.source != CTGOV)
    md = render_trial_markdown(doc)
    heads = [line[2:] for line in md.splitlines() if line.startswith("# ")]
    assert heads == list(GENERIC_FIELDS) and len(heads) == 9


def test_empty_arms_subsection_present():
    md = render_trial_markdown(TrialDocument("NCT1", CTGOV))
    assert "## Arms and Interventions" in md


def _reparse(doc):
    return parse_trial_markdown(render_trial_markdown(doc), id=doc.id, source=doc.source,
                                registration_date=doc.registration_date)


def test_render_deterministic_and_parse_render_stable(corpus):
    for doc in corpus:
        md = render_trial_markdown(doc)
        assert md == render_trial_markdown(doc)
        first = _reparse(doc)
        assert _reparse(first) == first, doc.id
        assert render_trial_markdown(first) == md
        if doc.source == CTGOV:
            # the five-section passage carries every field of a CT.gov document
            assert first == doc, doc.id


def test_canonical_jsonl_roundtrip(tmp_path, corpus):
    p = tmp_path / "c.jsonl"
    assert write_documents(corpus, p) == 50
    assert read_documents(p) == corpus


_term = st.text(alphabet=st.characters(codec="utf-8", categories=["L", "N"]), min_size=1, max_size=12)


@given(st.lists(_term, max_size=4), st.lists(_term, max_size=4), st.lists(_term, max_size=3))
def test_generic_parse_render_roundtrip_property(conds, incl, outcomes):
    raw = {"id": "ISRCTN1", "public_title": "t", "conditions": conds, "inclusion_criteria": incl,
           "primary_outcomes": outcomes, "registration_date": "2020-01-02"}
    first = _reparse(parse_registry_record(raw, "ISRCTN"))
    assert _reparse(first) == first
    assert first.conditions == []  # not part of the nine-field layout
    assert first.eligibility.inclusion == parse_registry_record(raw, "ISRCTN").eligibility.inclusion


def test_papers():
    p = parse_paper_record({"pmid": "1", "title": "T", "abstract": "A"})
    assert p.full_text is None
    assert parse_paper_record({"pmid": "2", "title": "T", "abstract": "A", "full_text": "Body"}).full_text == "Body"
    with pytest.raises(RecordRejected):
        parse_paper_record({"title": "T"})
    with pytest.raises(RecordRejected, match="duplicate pmid"):
        parse_papers([{"pmid": "1", "title": "a", "abstract": "x"}, {"pmid": "1", "title": "b", "abstract": "y"}])
