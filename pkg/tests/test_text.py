from hypothesis import given, strategies as st

from trialkit.text import jaccard, normalize_term, normalize_text, shingles, tokenize, unique


def test_normalize_text_nfc_and_whitespace():
    decomposed = "café  \n\t trial"
    assert normalize_text(decomposed) == "café trial"
    assert normalize_text(None) == ""


def test_normalize_term_strips_terminal_punctuation():
    assert normalize_term("  Melanoma. ") == "melanoma"
    assert normalize_term("Phase 3;:") == "phase 3"


@given(st.text())
def test_normalize_term_idempotent(t):
    assert normalize_term(normalize_term(t)) == normalize_term(t)


def test_unique_keeps_order_and_drops_empty():
    assert unique(["b", "a", "", "b", "c"]) == ["b", "a", "c"]


def test_tokenize_and_short_shingles():
    assert tokenize("The CAT-sat, 2x!") == ["the", "cat", "sat", "2x"]
    assert shingles("one two three") == {"one two three"}
    assert len(shingles("a b c d e f g")) == 3
    assert shingles("") == set()


def test_jaccard_empty_convention():
    assert jaccard(set(), set()) == 1.0
    assert jaccard({"a"}, set()) == 0.0
