"""Acceptance criteria, one test per criterion; each prints a PASS/FAIL line."""

import contextlib
import json
import random
import time
from fractions import Fraction

import pytest

from trialkit import fixtures
from trialkit.cli import EXIT_OK, run
from trialkit.curation import DEFAULT_CUTOFF, SplitManifest, dedup_corpus, split_by_date, split_violations
from trialkit.gateway import GatewayError, ScriptedBackend, TransportError
from trialkit.harness import run_design_eval
from trialkit.instruct import DESIGN_TASKS, build_design_conversations, build_matching_set, build_query_expansion_set
from trialkit.metrics import classification_metrics, clinical_relevance, conclusion_consistency, judge_relevance
from trialkit.mock import StubServer, chat_route
from trialkit.search import (CATEGORIES, PHASES, STATUSES, STUDY_TYPES, QueryError, StructuredQuery, TermIndex,
                             compile_query, evaluate_expression, extract_structured_query)

from test_metrics import oracle


@pytest.fixture
def criterion(request, capsys):
    """Yields a recorder; prints ``PASS``/``FAIL`` with the criterion title and elapsed time."""

    @contextlib.contextmanager
    def check(number, title, limit=None):
        start = time.perf_counter()
        ok = False
        try:
            yield
            elapsed = time.perf_counter() - start
            if limit is not None:
                assert elapsed < limit, f"took {elapsed:.1f}s (limit {limit}s)"
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            with capsys.disabled():
                print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({elapsed:.2f}s)")

    return check


def test_c1_metric_oracle(criterion):
    with criterion(1, "metric oracle suite", limit=10):
        rng = random.Random(1)
        for _ in range(1000):
            n = rng.randint(1, 50)
            gold = [rng.randrange(3) for _ in range(n)]
            pred = [rng.randrange(3) for _ in range(n)]
            got = classification_metrics(gold, pred, [0, 1, 2])
            want = oracle(gold, pred, [0, 1, 2])
            for name in ("bacc", "kappa", "precision", "recall", "f1"):
                assert abs(got[name] - float(want[name])) <= 1e-12
        m = classification_metrics([0, 0, 1, 2], [0, 1, 1, 2], [0, 1, 2])
        assert abs(m["kappa"] - 7 / 11) <= 1e-12
        assert abs(m["bacc"] - 5 / 6) <= 1e-12


FREE = [f"term{i}" for i in range(12)]
VOCAB = {"diseases": FREE, "interventions": FREE, "phases": list(PHASES), "statuses": list(STATUSES),
         "study_types": list(STUDY_TYPES)}


def test_c2_compiler_correctness(criterion):
    with criterion(2, "compiler correctness", limit=5):
        rng = random.Random(2)
        for _ in range(100):
            docs = {f"doc{j}": {c: rng.sample(VOCAB[c], rng.randint(0, min(3, len(VOCAB[c])))) for c in CATEGORIES}
                    for j in range(200)}
            q = StructuredQuery()
            while q.is_empty():
                q = StructuredQuery(**{c: rng.sample(VOCAB[c], rng.randint(0, 2)) for c in CATEGORIES})
            got = evaluate_expression(compile_query(q), TermIndex.from_terms(docs))
            brute = {d for d, cats in docs.items()
                     if all(not getattr(q, c) or set(getattr(q, c)) & set(cats[c]) for c in CATEGORIES)}
            assert got == brute
        q = StructuredQuery(diseases=["d1", "d2"], interventions=["i1"])
        assert str(compile_query(q)) == "(d1 OR d2) AND (i1)"


def test_c3_curation_invariants(criterion):
    with criterion(3, "curation invariants", limit=10):
        corpus = fixtures.mini_corpus()
        big, planted = fixtures.plant_duplicates(corpus, exact=3, near=2, near_target=0.95)
        kept, decisions = dedup_corpus(big, threshold=0.9)
        assert len(big) - len(kept) == 5 and len(decisions) == 5
        assert sorted(i for d in decisions for i in d.dropped_ids) == sorted(planted)
        assignments = split_by_date(kept, DEFAULT_CUTOFF)
        assert split_violations(kept, assignments) == []
        manifest = SplitManifest.from_assignments(assignments, DEFAULT_CUTOFF)
        assert manifest.cutoff == DEFAULT_CUTOFF and SplitManifest.from_json(manifest.to_json()) == manifest
        again, more = dedup_corpus(kept, threshold=0.9)
        assert again == kept and more == []


def _adversarial_scripts():
    """50 deterministic misbehaving backends, as callables over requests."""
    rng = random.Random(4)
    valid = {"diseases": '["melanoma"]', "interventions": '["pembrolizumab"]', "phases": '["phase 3"]',
             "statuses": '["recruiting"]', "study_types": '["interventional"]'}
    garbage = ["", "   ", "null", "{}", '{"diseases": ["x"]}', "[1, 2, 3]", '[["nested"]]', '["unterminated',
               "```json\n[\n```", "\x00\x01\x02", "[" * 50, "]]]", '["phase 99"]', '["RECRUITING!!!", "pending"]',
               "Sure, the answer is melanoma.", '[null]', '["a", {"b": 1}]', "NaN", "[true]", '"melanoma"']
    scripts = []
    for k in range(50):
        kind = k % 5
        if kind == 0:  # prose wrappers around valid lists
            scripts.append(lambda req, r=random.Random(k): f"Answer below.\n{valid[req.tag.split(':')[1]]}\nThanks!"
                           if r.random() < 0.8 else "no idea")
        elif kind == 1:  # truncation
            scripts.append(lambda req, r=random.Random(k): valid[req.tag.split(':')[1]][:r.randint(0, 8)])
        elif kind == 2:  # pure garbage
            scripts.append(lambda req, r=random.Random(k): r.choice(garbage))
        elif kind == 3:  # mixed, with the occasional transport failure
            def mixed(req, r=random.Random(k)):
                x = r.random()
                if x < 0.1:
                    raise TransportError("connection reset")
                return r.choice(garbage) if x < 0.6 else valid[req.tag.split(":")[1]]
            scripts.append(mixed)
        else:  # random bytes and random JSON-ish fragments
            scripts.append(lambda req, r=random.Random(k): "".join(r.choice('[]"{},:ab \n') for _ in range(r.randint(0, 40))))
    rng.shuffle(scripts)
    return scripts


def test_c4_extraction_totality(criterion):
    with criterion(4, "constrained extraction totality"):
        scripts = _adversarial_scripts()
        assert len(scripts) == 50
        outcomes = {"query": 0, "typed_error": 0}
        for script in scripts:
            try:
                q = extract_structured_query("Recruiting phase 3 melanoma trials", ScriptedBackend(script))
            except (GatewayError, QueryError):
                outcomes["typed_error"] += 1
                continue
            assert isinstance(q, StructuredQuery)
            for c in CATEGORIES:
                terms = getattr(q, c)
                assert isinstance(terms, list) and all(isinstance(t, str) and t for t in terms)
                if c in ("phases", "statuses", "study_types"):
                    assert set(terms) <= set(VOCAB[c])
            StructuredQuery.from_dict(json.loads(q.to_json()))
            outcomes["query"] += 1
        assert sum(outcomes.values()) == 50


SENTINEL = "ZZSENTINEL42"


def _design_sets(n=20):
    corpus = fixtures.mini_corpus()
    built = {t: {r.provenance[0]: r for r in build_design_conversations(corpus, t, fixtures.mock_backend())[0]}
             for t in DESIGN_TASKS}
    shared = sorted(set.intersection(*(set(b) for b in built.values())))[:n]
    assert len(shared) == n
    return {t: [built[t][i] for i in shared] for t in DESIGN_TASKS}


def test_c5_teacher_forcing_purity(criterion):
    with criterion(5, "teacher-forcing purity"):
        data = _design_sets(20)
        assert sum(len(v) for v in data.values()) == 60
        model = fixtures.mock_backend(sentinel=SENTINEL)
        rec = ScriptedBackend(model.send, "sentinel")
        run_design_eval(data, rec, None, mode="reference")
        assert rec.requests
        assert not any(SENTINEL in m["content"] for r in rec.requests for m in r.messages)

        rec = ScriptedBackend(model.send, "sentinel")
        reports = run_design_eval(data, rec, None, mode="de_novo")
        for prev, task in zip(DESIGN_TASKS, DESIGN_TASKS[1:]):
            generated = {s["id"]: s["rounds"][-1]["prediction"] for s in reports[prev].per_sample if s["rounds"]}
            assert all(g.startswith(SENTINEL) for g in generated.values())
            stage = {r.provenance[0] for r in data[task]}
            checked = 0
            for req in rec.requests:
                system = req.messages[0]["content"] if req.messages[0]["role"] == "system" else ""
                ids = [i for i in stage if generated.get(i) and system.endswith(generated[i])]
                if ids:
                    checked += 1
            predicted_rounds = sum(len(s["rounds"]) for s in reports[task].per_sample)
            assert checked == predicted_rounds > 0


def test_c6_judge_arithmetic(criterion):
    with criterion(6, "judge-metric arithmetic"):
        rng = random.Random(6)
        for _ in range(100):
            bits = [rng.randint(0, 1) for _ in range(rng.randint(1, 30))]
            judge = ScriptedBackend(["yes" if b else "no" for b in bits])
            m = judge_relevance([(f"g{i}", f"p{i}") for i in range(len(bits))], judge, "judge_relevance_criteria")
            assert m.value == float(Fraction(sum(bits), len(bits))) == clinical_relevance(bits)
        labels = ["positive effect", "negative effect", "no significant difference", "inconclusive"]
        for _ in range(100):
            n = rng.randint(1, 20)
            gold = [rng.choice(labels) for _ in range(n)]
            gen = [rng.choice(labels) for _ in range(n)]
            stream = [x for pair in zip(gold, gen) for x in pair]
            m = conclusion_consistency([(f"g{i}", f"p{i}") for i in range(n)], ScriptedBackend(stream))
            assert m.value == float(Fraction(sum(a == b for a, b in zip(gold, gen)), n))


PHRASES = {0: "Excluded", 1: "Not relevant", 2: "Eligible"}


def test_c7_builder_contracts(criterion):
    with criterion(7, "builder contracts"):
        for r in build_query_expansion_set(fixtures.mini_corpus()):
            inp, out = json.loads(r.input), json.loads(r.output)
            assert len(inp) == 5 and out and not set(inp) & set(out)
        cases = fixtures.matching_cases()[:30]
        assert len(cases) == 30
        wrong = set(c.case_id for c in random.Random(7).sample(cases, 10))

        def answer(req):
            prompt = req.messages[-1]["content"]
            case = next(c for c in cases if c.note in prompt and c.criteria in prompt)
            label = (case.label + 1) % 3 if case.case_id in wrong else case.label
            if case.scheme == "SIGIR":
                text = {0: "would not refer", 1: "would consider referring", 2: "highly likely to refer"}[label]
            else:
                text = PHRASES[label]
            return f"Reviewing the note against each criterion. Verdict: {text}."

        recs, report = build_matching_set(cases, ScriptedBackend(answer))
        gold = {c.case_id: c.label for c in cases}
        assert {r.provenance[0] for r in recs} == set(gold) - wrong
        assert all(r.extra["label"] == gold[r.provenance[0]] for r in recs)
        assert report.counts["wrong_label"] == 10


def _files(out):
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*"))
            if p.is_file() and ("instructions" in p.parts or "reports" in p.parts)}


def _pipeline(out, backend="mock", judge="mock:judge"):
    common = ["--out", str(out), "--seed", "0"]
    for argv in (["ingest"], ["curate"], ["build", "--backend", backend],
                 ["eval", "--backend", backend, "--judge", judge]):
        assert run([*argv, *common]) == EXIT_OK


def test_c8_end_to_end_determinism(criterion, tmp_path, monkeypatch):
    with criterion(8, "end-to-end determinism", limit=120):
        _pipeline(tmp_path / "r1")
        _pipeline(tmp_path / "r2")
        one, two = _files(tmp_path / "r1"), _files(tmp_path / "r2")
        assert one == two
        assert sum(k.endswith("report.json") for k in one) == 8
        assert sum(k.endswith(".jsonl") for k in one) >= 8

        monkeypatch.setenv("TRIALKIT_API_KEY", "offline")
        with StubServer({"/chat/completions": chat_route(fixtures.mock_backend())}) as stub:
            spec, judge = f"openai:mock@{stub.url}", f"openai:judge@{stub.url}"
            _pipeline(tmp_path / "r3", spec, judge)
            before, reports = stub.request_count, _files(tmp_path / "r3")
            assert run(["eval", "--out", str(tmp_path / "r3"), "--backend", spec, "--judge", judge]) == EXIT_OK
            assert stub.request_count == before
        assert _files(tmp_path / "r3") == reports
