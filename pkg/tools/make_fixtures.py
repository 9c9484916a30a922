"""Regenerate the bundled synthetic fixtures under src/trialkit/data/.

Everything is drawn from a seeded RNG, so rerunning reproduces the files
byte for byte. Run from the repository root:

    python3 tools/make_fixtures.py
"""

from __future__ import annotations

import datetime as dt
import json
import random
import sys
from itertools import combinations
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from trialkit.corpus import parse_registry_record  # noqa: E402
from trialkit.curation import dedup_text  # noqa: E402
from trialkit.text import jaccard, shingles  # noqa: E402

DATA = ROOT / "src" / "trialkit" / "data"
SEED = 20240601

# (condition, MeSH heading, related headings)
DISEASES = [
    ("type 2 diabetes", "Diabetes Mellitus, Type 2", ["Hyperglycemia", "Insulin Resistance", "Obesity"]),
    ("hypertension", "Hypertension", ["Cardiovascular Diseases", "Vascular Diseases", "Kidney Diseases"]),
    ("asthma", "Asthma", ["Bronchial Diseases", "Lung Diseases, Obstructive", "Respiratory Hypersensitivity"]),
    ("rheumatoid arthritis", "Arthritis, Rheumatoid", ["Autoimmune Diseases", "Joint Diseases", "Connective Tissue Diseases"]),
    ("major depressive disorder", "Depressive Disorder, Major", ["Mood Disorders", "Mental Disorders", "Depression"]),
    ("breast cancer", "Breast Neoplasms", ["Neoplasms by Site", "Breast Diseases", "Carcinoma"]),
    ("non-small cell lung cancer", "Carcinoma, Non-Small-Cell Lung", ["Lung Neoplasms", "Carcinoma, Bronchogenic", "Respiratory Tract Neoplasms"]),
    ("heart failure", "Heart Failure", ["Heart Diseases", "Cardiovascular Diseases", "Cardiomyopathies"]),
    ("chronic kidney disease", "Renal Insufficiency, Chronic", ["Kidney Diseases", "Urologic Diseases", "Renal Insufficiency"]),
    ("psoriasis", "Psoriasis", ["Skin Diseases, Papulosquamous", "Skin Diseases", "Autoimmune Diseases"]),
    ("migraine", "Migraine Disorders", ["Headache Disorders, Primary", "Brain Diseases", "Headache Disorders"]),
    ("osteoarthritis of the knee", "Osteoarthritis, Knee", ["Osteoarthritis", "Joint Diseases", "Rheumatic Diseases"]),
    ("atrial fibrillation", "Atrial Fibrillation", ["Arrhythmias, Cardiac", "Heart Diseases", "Pathologic Processes"]),
    ("chronic obstructive pulmonary disease", "Pulmonary Disease, Chronic Obstructive", ["Lung Diseases, Obstructive", "Lung Diseases", "Chronic Disease"]),
    ("parkinson disease", "Parkinson Disease", ["Parkinsonian Disorders", "Basal Ganglia Diseases", "Movement Disorders"]),
    ("hepatitis c", "Hepatitis C", ["Hepatitis, Viral, Human", "Flaviviridae Infections", "Liver Diseases"]),
]
DRUGS = [
    ("metformin", "Metformin", ["Hypoglycemic Agents"]),
    ("empagliflozin", "Empagliflozin", ["Sodium-Glucose Transporter 2 Inhibitors"]),
    ("lisinopril", "Lisinopril", ["Angiotensin-Converting Enzyme Inhibitors"]),
    ("budesonide", "Budesonide", ["Glucocorticoids"]),
    ("adalimumab", "Adalimumab", ["Tumor Necrosis Factor Inhibitors"]),
    ("sertraline", "Sertraline", ["Selective Serotonin Reuptake Inhibitors"]),
    ("trastuzumab", "Trastuzumab", ["Antineoplastic Agents, Immunological"]),
    ("pembrolizumab", "Pembrolizumab", ["Immune Checkpoint Inhibitors"]),
    ("sacubitril", "Sacubitril", ["Neprilysin Inhibitors"]),
    ("dapagliflozin", "Dapagliflozin", ["Sodium-Glucose Transporter 2 Inhibitors"]),
    ("secukinumab", "Secukinumab", ["Interleukin-17 Inhibitors"]),
    ("erenumab", "Erenumab", ["Calcitonin Gene-Related Peptide Receptor Antagonists"]),
    ("apixaban", "Apixaban", ["Factor Xa Inhibitors"]),
    ("tiotropium", "Tiotropium Bromide", ["Cholinergic Antagonists"]),
    ("levodopa", "Levodopa", ["Dopamine Agents"]),
    ("sofosbuvir", "Sofosbuvir", ["Antiviral Agents"]),
]

OTHER_SOURCES = [("ChiCTR", "ChiCTR", 5), ("EUCTR", "EUCTR", 4), ("ISRCTN", "ISRCTN", 4),
                 ("DRKS", "DRKS", 4), ("ANZCTR", "ACTRN", 3)]
CTGOV_COUNT = 30

PHASES = ["PHASE1", "PHASE2", "PHASE3", "PHASE4"]
STATUSES = ["RECRUITING", "COMPLETED", "ACTIVE_NOT_RECRUITING", "NOT_YET_RECRUITING", "TERMINATED"]
GENERIC_PHASE = {"PHASE1": "Phase 1", "PHASE2": "Phase 2", "PHASE3": "Phase 3", "PHASE4": "Phase 4"}
GENERIC_STATUS = {"RECRUITING": "Recruiting", "COMPLETED": "Completed", "ACTIVE_NOT_RECRUITING": "Active, not recruiting",
                  "NOT_YET_RECRUITING": "Not yet recruiting", "TERMINATED": "Terminated"}

SETTINGS = ["outpatient clinics", "tertiary referral hospitals", "community practices", "academic centres",
            "primary care networks", "specialist units"]
OUTCOMES = ["change in {m} from baseline", "proportion of participants achieving {m} response",
            "time to first {m} event", "incidence of treatment-emergent adverse events",
            "change in quality of life score", "rate of hospital admission for {m}", "mean {m} symptom score"]
INCL = ["aged {a} to {b} years", "confirmed diagnosis of {d} for at least {n} months",
        "stable background therapy for {n} weeks before screening", "able to give written informed consent",
        "body mass index between {x} and {y} kg/m2", "willing to attend {n} study visits",
        "inadequate response to at least one prior {d} treatment"]
EXCL = ["pregnancy or breastfeeding", "known hypersensitivity to {i}", "severe hepatic impairment",
        "participation in another interventional study within {n} days", "active malignancy within {n} years",
        "uncontrolled {o}", "estimated glomerular filtration rate below {x} mL/min"]
SENT = [
    "This {design} study evaluates whether {i} improves outcomes in adults with {d} treated in {s}.",
    "Participants are randomly assigned to {i} or a comparator and followed for {n} weeks.",
    "The investigators expect that {i} will reduce {d} severity compared with usual care.",
    "Secondary aims include safety, tolerability and patient reported outcomes over {m} months.",
    "Recruitment takes place across {k} sites, and visits are scheduled every {w} weeks.",
    "A total of {t} participants will be enrolled, stratified by baseline disease activity.",
    "Blood samples are collected at each visit to measure exposure and biomarkers of {d}.",
    "Adherence is monitored with pill counts and electronic diaries throughout the {n} week period.",
]
CONCLUSIONS = [
    ("{i} significantly improved {d} control compared with placebo.", "positive effect"),
    ("{i} reduced the rate of {d} exacerbations and was effective over the study period.", "positive effect"),
    ("There was no significant difference between {i} and placebo in {d} outcomes.", "no significant difference"),
    ("Patients receiving {i} had worse {d} outcomes and an increased risk of adverse effect.", "negative effect"),
    ("The evidence for {i} in {d} remains limited and further trials are required.", "inconclusive"),
]


def fill(tpl: str, rng: random.Random, d: str, i: str, **kw) -> str:
    vals = dict(d=d, i=i, a=rng.choice([18, 21, 40, 50]), b=rng.choice([65, 75, 80, 85]),
                n=rng.randint(2, 52), x=rng.randint(15, 30), y=rng.randint(31, 45), m=rng.randint(3, 24),
                s=rng.choice(SETTINGS), k=rng.randint(3, 60), w=rng.randint(2, 8), t=rng.randint(40, 900),
                o=rng.choice(["hypertension", "diabetes", "thyroid disease", "infection"]),
                design=rng.choice(["randomized, double-blind", "open-label", "multicentre, placebo-controlled",
                                   "parallel-group"]))
    vals.update(kw)
    return tpl.format(**vals)


def random_date(rng: random.Random) -> dt.date:
    return dt.date(2015, 1, 1) + dt.timedelta(days=rng.randint(0, 365 * 10))


def trial_content(rng: random.Random, idx: int) -> dict:
    dz, dz_mesh, dz_rel = DISEASES[idx % len(DISEASES)]
    drug, drug_mesh, drug_rel = DRUGS[(idx * 7 + 3) % len(DRUGS)]
    sents = rng.sample(SENT, 6)
    summary = " ".join(fill(s, rng, dz, drug) for s in sents[:3])
    description = " ".join(fill(s, rng, dz, drug) for s in sents[3:])
    metric = dz.split()[-1]
    incl = [fill(t, rng, dz, drug) for t in rng.sample(INCL, rng.randint(3, 5))]
    excl = [fill(t, rng, dz, drug) for t in rng.sample(EXCL, rng.randint(2, 4))]
    prim = [fill(t, rng, dz, drug, m=metric) for t in rng.sample(OUTCOMES, 1)]
    sec = [fill(t, rng, dz, drug, m=metric) for t in rng.sample([o for o in OUTCOMES if o not in prim], 2)]
    dose = rng.choice([5, 10, 20, 40, 100, 150, 300])
    arms = [
        {"label": f"{drug.title()} {dose} mg", "description": f"{drug} {dose} mg once daily for {rng.randint(8, 52)} weeks"},
        {"label": "Placebo", "description": f"matching placebo once daily, visit schedule {rng.randint(2, 6)}"},
    ]
    n_mesh = rng.randint(3, 9)
    pool = [dz_mesh, drug_mesh, *dz_rel, *drug_rel]
    extra = [m for _, m, _ in DISEASES if m != dz_mesh]
    rng.shuffle(extra)
    mesh = (pool + extra)[:n_mesh]
    phase = rng.choice(PHASES)
    status = rng.choice(STATUSES)
    title = f"{drug.title()} in {dz.title()}: a {rng.choice(['pilot', 'pivotal', 'confirmatory', 'exploratory'])} trial {idx}"
    official = f"A {fill('{design}', rng, dz, drug)} study of {drug} {dose} mg in {dz} ({rng.choice(['STAR', 'ORBIT', 'NOVA', 'PEAK', 'CREST'])}-{idx})"
    return dict(dz=dz, drug=drug, summary=summary, description=description, incl=incl, excl=excl, prim=prim,
                sec=sec, arms=arms, mesh=mesh, dz_mesh=dz_mesh, drug_mesh=drug_mesh, phase=phase,
                status=status, title=title, official=official, n_mesh=n_mesh)


def ctgov_study(c: dict, nct: str, date: dt.date | None, rng: random.Random) -> dict:
    criteria = ("Inclusion Criteria:\n\n" + "\n".join(f"* {x}" for x in c["incl"])
                + "\n\nExclusion Criteria:\n\n" + "\n".join(f"* {x}" for x in c["excl"]))
    ps = {
        "identificationModule": {"nctId": nct, "briefTitle": c["title"], "officialTitle": c["official"]},
        "statusModule": {"overallStatus": c["status"]},
        "descriptionModule": {"briefSummary": c["summary"], "detailedDescription": c["description"]},
        "conditionsModule": {"conditions": [c["dz"]]},
        "designModule": {"studyType": "INTERVENTIONAL", "phases": [c["phase"]],
                         "designInfo": {"allocation": "RANDOMIZED", "interventionModel": "PARALLEL",
                                        "primaryPurpose": "TREATMENT",
                                        "maskingInfo": {"masking": rng.choice(["DOUBLE", "NONE", "QUADRUPLE"])}}},
        "armsInterventionsModule": {
            "armGroups": c["arms"],
            "interventions": [{"type": "DRUG", "name": c["drug"]}, {"type": "DRUG", "name": "placebo"}],
        },
        "eligibilityModule": {"eligibilityCriteria": criteria, "sex": rng.choice(["ALL", "FEMALE", "MALE"]),
                              "minimumAge": "18 Years", "maximumAge": f"{rng.choice([65, 75, 80])} Years",
                              "healthyVolunteers": False},
        "outcomesModule": {
            "primaryOutcomes": [{"measure": m, "timeFrame": f"Week {rng.choice([12, 24, 52])}"} for m in c["prim"]],
            "secondaryOutcomes": [{"measure": m, "timeFrame": f"Week {rng.choice([12, 24, 52])}"} for m in c["sec"]],
        },
    }
    if date is not None:
        ps["statusModule"]["studyFirstSubmitDate"] = date.isoformat()
    mesh = c["mesh"]
    derived = {"conditionBrowseModule": {"meshes": [{"id": f"D{i:06d}", "term": m} for i, m in enumerate(mesh) if m != c["drug_mesh"]]},
               "interventionBrowseModule": {"meshes": [{"id": "D900000", "term": c["drug_mesh"]}] if c["drug_mesh"] in mesh else []}}
    return {"protocolSection": ps, "derivedSection": derived, "hasResults": False}


def generic_record(c: dict, rid: str, date: dt.date | None, rng: random.Random) -> dict:
    rec = {
        "id": rid, "registration_date": date.isoformat() if date else None,
        "public_title": c["title"], "scientific_title": c["official"], "study_type": "Interventional",
        "study_design": "Randomised, parallel group, placebo controlled",
        "brief_summary": c["summary"], "detailed_description": c["description"],
        "conditions": [c["dz"]], "interventions": [c["drug"], "placebo"],
        "phase": GENERIC_PHASE[c["phase"]], "status": GENERIC_STATUS[c["status"]],
        "inclusion_criteria": c["incl"], "exclusion_criteria": c["excl"],
        "min_age": "18 Years", "max_age": "75 Years", "sexes": "Both", "healthy_volunteers": False,
        "arms": c["arms"], "primary_outcomes": c["prim"], "secondary_outcomes": c["sec"],
        "mesh_terms": c["mesh"],
    }
    if rng.random() < 0.3:
        rec["contact_email"] = f"investigator{rng.randint(1, 99)}@example.org"
    return rec


def write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")


def main() -> None:
    rng = random.Random(SEED)
    DATA.mkdir(parents=True, exist_ok=True)
    sources: dict[str, str] = {}
    contents = []
    docs = []

    studies = []
    for k in range(CTGOV_COUNT):
        c = trial_content(rng, k)
        # two undated CT.gov records, the rest spread over 2015-2024
        date = None if k in (7, 19) else random_date(rng)
        nct = f"NCT0{5000000 + k * 1237:07d}"
        studies.append(ctgov_study(c, nct, date, rng))
        contents.append(c)
    write_jsonl(DATA / "registry_ctgov.jsonl", studies)
    sources["registry_ctgov.jsonl"] = "ClinicalTrials.gov"
    docs += [parse_registry_record(s, "ClinicalTrials.gov") for s in studies]

    idx = CTGOV_COUNT
    for source, prefix, n in OTHER_SOURCES:
        rows = []
        for j in range(n):
            c = trial_content(rng, idx)
            date = None if (source, j) in (("EUCTR", 1), ("DRKS", 3)) else random_date(rng)
            rows.append(generic_record(c, f"{prefix}-{2000 + idx * 13}", date, rng))
            contents.append(c)
            idx += 1
        name = f"registry_{source.lower()}.jsonl"
        write_jsonl(DATA / name, rows)
        sources[name] = source
        docs += [parse_registry_record(r, source) for r in rows]
    (DATA / "sources.json").write_text(json.dumps(sources, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    sets = [shingles(dedup_text(d)) for d in docs]
    worst = max(jaccard(a, b) for a, b in combinations(sets, 2))
    assert worst < 0.9, worst
    assert len(docs) == 50

    # papers and reviews
    papers = []
    pmid = 31000000
    by_pair: dict[tuple[str, str], list[str]] = {}
    for c in contents[:24]:
        for _ in range(2):
            pmid += rng.randint(11, 997)
            concl, _label = rng.choice(CONCLUSIONS)
            n = rng.randint(60, 600)
            abstract = (f"Background: {c['dz']} remains a major clinical burden. "
                        f"Methods: we randomized {n} adults with {c['dz']} to {c['drug']} or placebo for "
                        f"{rng.randint(8, 52)} weeks. Results: {fill(concl, rng, c['dz'], c['drug'])} "
                        f"Conclusions: these findings inform the use of {c['drug']} in {c['dz']}.")
            papers.append({"pmid": str(pmid), "title": f"{c['drug'].title()} for {c['dz']}: a randomized trial ({n} patients)",
                           "abstract": abstract, "mesh_terms": c["mesh"][:4],
                           "publication_date": random_date(rng).isoformat()})
            by_pair.setdefault((c["dz"], c["drug"]), []).append(str(pmid))
    write_jsonl(DATA / "papers.jsonl", papers)

    reviews = []
    keys = sorted(by_pair)
    for r in range(12):
        group = keys[r % len(keys): r % len(keys) + 2]
        pmids = [p for k in group for p in by_pair[k]]
        if r % 4 == 3:
            pmids = pmids[:2] + ["99999999"]  # fewer than three resolvable papers
        dz, drug = group[0]
        concl, _ = CONCLUSIONS[r % len(CONCLUSIONS)]
        review = (f"Across the included trials, {fill(concl, rng, dz, drug)} "
                  f"The certainty of evidence for {drug} in {dz} was judged moderate.")
        reviews.append({"review_id": f"CD{10000 + r * 37}", "pmids": pmids, "review": review,
                        "split": "test" if r % 3 == 0 else "train"})
    write_jsonl(DATA / "reviews.jsonl", reviews)

    # patient-trial matching cases, built against CT.gov criteria
    cases = []
    for n_case in range(42):
        scheme = "TREC2021" if n_case < 30 else "SIGIR"
        s = studies[n_case % CTGOV_COUNT]
        c = contents[n_case % CTGOV_COUNT]
        label = n_case % 3
        age = rng.randint(25, 70)
        if label == 2:
            note = (f"{age}-year-old with {c['dz']}; {c['incl'][0]}. {c['incl'][1]}. "
                    f"No other relevant history. Currently on {c['drug']} screening.")
        elif label == 0:
            note = (f"{age}-year-old with {c['dz']}. History notable for {c['excl'][0]} and {c['excl'][1]}.")
        else:
            note = f"{age}-year-old presenting with a sprained ankle after a fall, otherwise healthy."
        cases.append({"patient_id": f"P{n_case + 1:03d}", "note": note, "trial_id": s["protocolSection"]["identificationModule"]["nctId"],
                      "criteria": s["protocolSection"]["eligibilityModule"]["eligibilityCriteria"],
                      "label": label, "scheme": scheme, "split": "test" if n_case % 2 else "train"})
    write_jsonl(DATA / "matching_cases.jsonl", cases)

    # query seeds
    seeds = []
    phase_words = ["phase 1", "phase 2", "phase 3", "phase 4"]
    for k in range(20):
        dz = DISEASES[k % len(DISEASES)][0]
        drug = DRUGS[(k * 5) % len(DRUGS)][0]
        phase = phase_words[k % 4]
        style = k % 4
        if style == 0:
            req, q = f"Show me {phase} trials testing {drug} for {dz}.", {"diseases": [dz], "interventions": [drug], "phases": [phase]}
        elif style == 1:
            req, q = f"Which recruiting studies enroll patients with {dz}?", {"diseases": [dz], "statuses": ["recruiting"]}
        elif style == 2:
            req, q = (f"Completed interventional trials of {drug} in {dz}",
                      {"diseases": [dz], "interventions": [drug], "statuses": ["completed"], "study_types": ["interventional"]})
        else:
            req, q = f"Any studies on {drug}?", {"interventions": [drug]}
        seeds.append({"request": req, "query": q})
    write_jsonl(DATA / "query_seeds.jsonl", seeds)

    related: dict[str, list[str]] = {}
    for _, mesh, rel in DISEASES + DRUGS:
        related[mesh.lower()] = [r.lower() for r in rel]
    for doc in docs:
        terms = [t.lower() for t in doc.mesh_terms]
        for t in terms:
            related.setdefault(t, [])
            for u in terms:
                if u != t and u not in related[t]:
                    related[t].append(u)
    lexicon = {"diseases": sorted({d for d, _, _ in DISEASES} | {m.lower() for _, m, _ in DISEASES}),
               "interventions": sorted({d for d, _, _ in DRUGS} | {"placebo"})}
    (DATA / "mock_lexicon.json").write_text(
        json.dumps({"lexicon": lexicon, "related": {k: related[k] for k in sorted(related)}},
                   indent=1, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    print(f"wrote fixtures to {DATA} (max pairwise shingle Jaccard {worst:.3f})")


if __name__ == "__main__":
    main()
