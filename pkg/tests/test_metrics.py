import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from trialkit.gateway import Gateway, MemoryCache, ScriptedBackend
from trialkit.matching import CaseError, PatientCase, check_single_scheme, parse_eligibility
from trialkit.metrics import (MetricError, binary_regroup, bleu_score, classification_metrics, clinical_relevance,
                              conclusion_consistency, goal_alignment_rate, in_range, jaccard_index, query_jaccard,
                              rouge_scores)
from trialkit.search import StructuredQuery


# -- independent oracle -----------------------------------------------------------

def oracle(gold, pred, classes):
    """Direct definitions with exact rationals, no matrices."""
    n = len(gold)
    recalls, precisions, f1s = [], [], []
    for c in classes:
        tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        g_c = sum(1 for g in gold if g == c)
        p_c = sum(1 for p in pred if p == c)
        r = Fraction(tp, g_c) if g_c else Fraction(0)
        pr = Fraction(tp, p_c) if p_c else Fraction(0)
        recalls.append((r, g_c > 0))
        precisions.append(pr)
        f1s.append(2 * pr * r / (pr + r) if pr + r else Fraction(0))
    present = [r for r, ok in recalls if ok]
    p_o = Fraction(sum(g == p for g, p in zip(gold, pred)), n)
    p_e = sum(Fraction(sum(g == c for g in gold) * sum(p == c for p in pred), n * n) for c in classes)
    kappa = (Fraction(1) if p_o == 1 else Fraction(0)) if p_e == 1 else (p_o - p_e) / (1 - p_e)
    k = len(classes)
    return {"bacc": sum(present) / len(present), "kappa": kappa,
            "precision": sum(precisions) / k, "recall": sum(r for r, _ in recalls) / k,
            "f1": sum(f1s) / k, "micro_f1": p_o}


def test_worked_example_against_oracle():
    gold, pred = [0, 0, 1, 2], [0, 1, 1, 2]
    want = oracle(gold, pred, [0, 1, 2])
    assert want["bacc"] == Fraction(5, 6)
    assert want["kappa"] == Fraction(7, 11)
    BACC, KAPPA = 0.8333333333333334, 0.6363636363636364  # frozen from the oracle above
    got = classification_metrics(gold, pred, [0, 1, 2])
    assert got["bacc"] == pytest.approx(BACC, abs=1e-12)
    assert got["kappa"] == pytest.approx(KAPPA, abs=1e-12)
    assert got["confusion"] == [[1, 1, 0], [0, 1, 0], [0, 0, 1]]


def test_perfect_agreement():
    m = classification_metrics([0, 1, 2, 2], [0, 1, 2, 2], [0, 1, 2])
    assert m["bacc"] == m["kappa"] == m["f1"] == 1.0


def test_classification_errors():
    with pytest.raises(MetricError):
        classification_metrics([0, 1], [0], [0, 1])
    with pytest.raises(MetricError):
        classification_metrics([0, 5], [0, 1], [0, 1, 2])


def test_oracle_equivalence_on_random_vectors():
    rng = random.Random(7)
    for _ in range(1000):
        n = rng.randint(1, 50)
        gold = [rng.randrange(3) for _ in range(n)]
        pred = [rng.randrange(3) for _ in range(n)]
        got = classification_metrics(gold, pred, [0, 1, 2])
        for name, value in oracle(gold, pred, [0, 1, 2]).items():
            assert abs(got[name] - float(value)) <= 1e-12, name


# -- sets -----------------------------------------------------------------------

def test_jaccard_examples():
    assert jaccard_index({"a", "b"}, {"a", "b"}) == 1.0
    assert jaccard_index({"a", "b"}, {"c"}) == 0.0
    assert jaccard_index({"a", "b"}, {"b", "c"}) == pytest.approx(1 / 3)
    assert jaccard_index([], []) == 1.0


def test_query_jaccard_examples():
    gold = StructuredQuery(["melanoma"], ["pembrolizumab"], ["phase 3"], ["recruiting"], ["interventional"])
    assert query_jaccard(gold, gold)["overall"] == 1.0
    off = StructuredQuery(["glioma"], ["pembrolizumab"], ["phase 3"], ["recruiting"], ["interventional"])
    assert query_jaccard(off, gold)["overall"] == pytest.approx(0.8)
    partial = StructuredQuery(["melanoma"], ["pembrolizumab"], ["phase 3"], ["recruiting"])
    assert query_jaccard(partial, StructuredQuery(["melanoma"], ["pembrolizumab"], ["phase 3"], ["recruiting"]))[
        "study_types"] == 1.0


words = st.lists(st.sampled_from(["a", "b", "c", "d", "e"]), max_size=6)


@given(words, words)
def test_jaccard_symmetric_and_in_range(a, b):
    assert jaccard_index(a, b) == jaccard_index(b, a)
    assert 0.0 <= jaccard_index(a, b) <= 1.0


# -- lexical --------------------------------------------------------------------

def test_rouge_examples():
    r = rouge_scores("the cat sat", "the cat")
    assert r["rouge1"] == pytest.approx(0.8)
    assert rouge_scores("a b c", "a b c") == {"rouge1": 1.0, "rouge2": 1.0, "rougeL": 1.0}
    assert rouge_scores("a b c", "x y z") == {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}
    assert rouge_scores("", "x") == {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}


def test_bleu_examples():
    ten = "one two three four five six seven eight nine ten"
    assert bleu_score(ten, ten) == pytest.approx(1.0)
    # oracle: no unigram match means p1 = 0 and the geometric mean is 0; +1 smoothing only lifts n >= 2
    DISJOINT = 0.0
    assert bleu_score(ten, "a b c d e f g h i j") == DISJOINT < 0.05
    # half-length prefix: every precision is 1, so the score is the brevity penalty alone
    assert bleu_score("one two three four five", ten) == pytest.approx(math.exp(1 - 2))
    assert bleu_score("", ten) == 0.0


def test_lexical_metrics_asymmetric():
    cand, ref = "the cat sat on the mat today", "the cat sat"
    assert bleu_score(cand, ref) != bleu_score(ref, cand)
    r_ab, r_ba = rouge_scores(cand, ref), rouge_scores(ref, cand)
    assert r_ab["rouge1"] == r_ba["rouge1"]  # F1 is symmetric in precision/recall
    assert bleu_score(ref, cand) < bleu_score(cand, ref)


texts = st.lists(st.sampled_from(["a", "b", "c", "d", "trial", "dose"]), max_size=15).map(" ".join)


@given(texts, texts)
def test_lexical_ranges(c, r):
    assert 0.0 <= bleu_score(c, r) <= 1.0 + 1e-12
    for v in rouge_scores(c, r).values():
        assert 0.0 <= v <= 1.0


@given(st.lists(st.integers(0, 2), min_size=1, max_size=30), st.data())
def test_classification_ranges(gold, data):
    pred = data.draw(st.lists(st.integers(0, 2), min_size=len(gold), max_size=len(gold)))
    m = classification_metrics(gold, pred, [0, 1, 2])
    for name in ("bacc", "kappa", "precision", "recall", "f1"):
        assert in_range(name, m[name])


def test_regroup_and_relevance():
    assert binary_regroup(["eligible", "excluded", "irrelevant"], "eligible") == [1, 0, 0]
    assert binary_regroup([2, 2], 2) == [1, 1]
    assert binary_regroup([], 2) == []
    assert clinical_relevance([1, 0, 1, 1]) == 0.75
    assert clinical_relevance([1, 1]) == 1.0 and clinical_relevance([0, 0]) == 0.0
    with pytest.raises(MetricError):
        clinical_relevance([])


# -- judge metrics --------------------------------------------------------------

PAIRS4 = [(f"gold {i}", f"gen {i}") for i in range(4)]


def test_goal_alignment_scripted():
    assert goal_alignment_rate(PAIRS4, ScriptedBackend(["yes", "Yes.", "no", "Answer: yes"])).value == 0.75
    assert goal_alignment_rate(PAIRS4, ScriptedBackend(["yes"] * 4)).value == 1.0
    m = goal_alignment_rate(PAIRS4[:2], ScriptedBackend(["yes", "hmm, hard to say"]))
    assert m.value == 0.5 and m.flags == ["unparsed:1"]


def test_conclusion_consistency_scripted():
    judge = ScriptedBackend(["positive effect", "positive effect", "negative effect", "positive effect"])
    assert conclusion_consistency(PAIRS4[:2], judge).value == 0.5
    same = ScriptedBackend(["inconclusive"] * 4)
    assert conclusion_consistency(PAIRS4[:2], same).value == 1.0
    with pytest.raises(MetricError):
        conclusion_consistency([], same)
    m = conclusion_consistency(PAIRS4[:1], ScriptedBackend(["positive effect", "no idea"]))
    assert m.value == 0.0 and m.flags == ["unparsed:0"]


def test_judge_metrics_reproducible_on_warm_cache():
    answers = iter(["yes", "no", "yes", "no"])
    gw = Gateway(ScriptedBackend(lambda req: next(answers)), MemoryCache())
    first = goal_alignment_rate(PAIRS4, gw)
    second = goal_alignment_rate(PAIRS4, gw)
    assert first == second and gw.stats.network_calls == 4


# -- matching labels ----------------------------------------------------------

def test_eligibility_parsing():
    assert parse_eligibility("The note shows X... therefore the patient is Eligible.", "TREC2021") == 2
    assert parse_eligibility("The patient is not eligible.", "TREC2021") == 0
    assert parse_eligibility("Excluded because of prior chemo.", "TREC2021") == 0
    assert parse_eligibility("No decision possible.", "TREC2021") is None
    assert parse_eligibility("I would consider referring this patient.", "SIGIR") == 1


def test_scheme_mixing_rejected():
    a = PatientCase("p1", "note", "NCT1", "crit", 2, "TREC2021")
    b = PatientCase("p2", "note", "NCT1", "crit", 0, "SIGIR")
    assert check_single_scheme([a]) == "TREC2021"
    with pytest.raises(CaseError):
        check_single_scheme([a, b])
    with pytest.raises(CaseError):
        PatientCase("p", "n", "t", "c", 3, "TREC2021")
