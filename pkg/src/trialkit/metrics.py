"""Evaluation metrics: set overlap, lexical overlap, classification agreement and
judge-based semantic scores."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .gateway import DEFAULT_TEMPLATES, Backend, Gateway, as_gateway, ordered_map, user
from .search import CATEGORIES, StructuredQuery
from .text import tokenize

CONCLUSION_TAXONOMY = ("positive effect", "negative effect", "no significant difference", "inconclusive")

RANGES = {
    "jaccard": (0.0, 1.0), "f1": (0.0, 1.0), "bacc": (0.0, 1.0), "precision": (0.0, 1.0),
    "recall": (0.0, 1.0), "relevance": (0.0, 1.0), "kappa": (-1.0, 1.0), "bleu": (0.0, 1.0), "rouge": (0.0, 1.0),
}


@dataclass
class MetricValue:
    name: str
    value: float | None
    support: int
    per_sample: list | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {"name": self.name, "value": self.value, "support": self.support}
        if self.flags:
            d["flags"] = self.flags
        return d


@dataclass
class JudgeVerdict:
    kind: str  # relevance_bit | goal_alignment_bit | conclusion_label
    value: Any
    raw_text: str


class MetricError(ValueError):
    pass


# -- sets ---------------------------------------------------------------------

def jaccard_index(a: Iterable[str], b: Iterable[str]) -> float:
    """|a∩b| / |a∪b|, with two empty sets scoring 1.0 (correct abstention)."""
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def query_jaccard(pred: StructuredQuery, gold: StructuredQuery) -> dict[str, float]:
    """Per-category Jaccard plus ``overall``, the unweighted mean of the five."""
    scores = {c: jaccard_index(getattr(pred, c), getattr(gold, c)) for c in CATEGORIES}
    scores["overall"] = sum(scores[c] for c in CATEGORIES) / len(CATEGORIES)
    return scores


# -- lexical ------------------------------------------------------------------

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _f1(overlap: float, n_cand: int, n_ref: int) -> float:
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return 2 * p * r / (p + r)


def _lcs(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_scores(candidate: str, reference: str) -> dict[str, float]:
    """ROUGE-1/2/L F1 over :func:`trialkit.text.tokenize` tokens."""
    c, r = tokenize(candidate), tokenize(reference)
    if not c or not r:
        return {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}
    out = {}
    for n in (1, 2):
        cn, rn = _ngrams(c, n), _ngrams(r, n)
        out[f"rouge{n}"] = _f1(sum((cn & rn).values()), sum(cn.values()), sum(rn.values()))
    out["rougeL"] = _f1(_lcs(c, r), len(c), len(r))
    return out


def bleu_score(candidate: str, reference: str, max_n: int = 4) -> float:
    """Sentence BLEU-4: clipped n-gram precisions, +1 smoothing for n >= 2, brevity penalty."""
    c, r = tokenize(candidate), tokenize(reference)
    if not c or not r:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        cn, rn = _ngrams(c, n), _ngrams(r, n)
        matches, total = sum((cn & rn).values()), sum(cn.values())
        if n == 1:
            if matches == 0:
                return 0.0
            p = matches / total
        else:
            p = (matches + 1) / (total + 1)
        log_p += math.log(p) / max_n
    bp = 1.0 if len(c) > len(r) else math.exp(1 - len(r) / len(c))
    return bp * math.exp(log_p)


# -- classification ---------------------------------------------------------

def confusion_matrix(gold: Sequence[Hashable], pred: Sequence[Hashable], classes: Sequence[Hashable]) -> np.ndarray:
    """Rows are gold classes, columns predictions, both in ``classes`` order."""
    pos = {c: i for i, c in enumerate(classes)}
    m = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for g, p in zip(gold, pred):
        m[pos[g], pos[p]] += 1
    return m


def _safe_div(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(b > 0, a / np.where(b > 0, b, 1), 0.0)


def classification_metrics(gold: Sequence[Hashable], pred: Sequence[Hashable],
                           classes: Sequence[Hashable]) -> dict[str, Any]:
    """BACC, Cohen's kappa, macro and micro P/R/F1 and the confusion matrix.

    Conventions: BACC averages recall over classes that occur in ``gold``;
    per-class precision/recall/F1 with a zero denominator count as 0 in the
    macro average; kappa is 1.0 when chance agreement is total and the labels
    agree, else 0.0.
    """
    if len(gold) != len(pred):
        raise MetricError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted")
    if not gold:
        raise MetricError("no samples")
    classes = list(classes)
    unknown = (set(gold) | set(pred)) - set(classes)
    if unknown:
        raise MetricError(f"labels outside classes: {sorted(map(str, unknown))}")
    cm = confusion_matrix(gold, pred, classes).astype(float)
    n = cm.sum()
    tp = np.diag(cm)
    gold_tot, pred_tot = cm.sum(axis=1), cm.sum(axis=0)
    recall = _safe_div(tp, gold_tot)
    precision = _safe_div(tp, pred_tot)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    p_o = tp.sum() / n
    p_e = float((gold_tot * pred_tot).sum() / (n * n))
    kappa = (1.0 if p_o == 1 else 0.0) if p_e == 1 else (p_o - p_e) / (1 - p_e)
    present = gold_tot > 0
    micro = float(p_o)
    return {
        "classes": classes,
        "bacc": float(recall[present].mean()),
        "kappa": float(kappa),
        "precision": float(precision.mean()),
        "recall": float(recall.mean()),
        "f1": float(f1.mean()),
        "micro_f1": micro,
        "per_class": {str(c): {"precision": float(precision[i]), "recall": float(recall[i]), "f1": float(f1[i])}
                      for i, c in enumerate(classes)},
        "confusion": cm.astype(int).tolist(),
    }


def binary_regroup(labels: Iterable[Hashable], positive: Hashable) -> list[int]:
    return [1 if x == positive else 0 for x in labels]


def clinical_relevance(verdicts: Sequence[int]) -> float:
    """Fraction of outputs judged relevant: sum of 0/1 verdicts over their count."""
    if not verdicts:
        raise MetricError("clinical relevance over zero outputs")
    if any(v not in (0, 1) for v in verdicts):
        raise MetricError("relevance verdicts must be 0 or 1")
    return sum(verdicts) / len(verdicts)


# -- verdict parsing --------------------------------------------------------

_BIT = re.compile(r"\b(yes|no|1|0)\b", re.IGNORECASE)


def parse_bit(text: str) -> int | None:
    """Last yes/no/1/0 token in a judge answer, or None."""
    hits = _BIT.findall(text or "")
    if not hits:
        return None
    return 1 if hits[-1].lower() in ("yes", "1") else 0


def parse_label(text: str, phrases: Mapping[Hashable, Sequence[str]]) -> Hashable | None:
    """Canonical-label search: matches contained in a longer match are discarded,
    then the last remaining occurrence wins."""
    text = (text or "").lower()
    spans = []
    for label, options in phrases.items():
        for phrase in options:
            for m in re.finditer(r"(?<![a-z])" + re.escape(phrase.lower()) + r"(?![a-z])", text):
                spans.append((m.start(), m.end(), label))
    kept = [s for s in spans
            if not any(o[0] <= s[0] and s[1] <= o[1] and (o[1] - o[0]) > (s[1] - s[0]) for o in spans)]
    if not kept:
        return None
    return max(kept, key=lambda s: (s[0], s[1] - s[0]))[2]


# -- judge metrics ------------------------------------------------------------

def _judge_bits(prompts: Sequence[str], judge: Backend | Gateway, kind: str, workers: int) -> list[JudgeVerdict]:
    gw = as_gateway(judge)

    def ask(prompt):
        raw = gw.complete(user(prompt, tag=f"judge:{kind}"))
        return JudgeVerdict(kind, parse_bit(raw), raw)

    return ordered_map(ask, prompts, workers)


def goal_alignment_rate(pairs: Sequence[tuple[str, str]], judge: Backend | Gateway,
                        template: str = "judge_goal_single", workers: int = 1) -> MetricValue:
    """Mean same-goal bit over (gold, generated) pairs; unparseable verdicts count 0 and are flagged."""
    if not pairs:
        raise MetricError("no pairs to judge")
    prompts = [DEFAULT_TEMPLATES.render(template, gold=g, generated=p) for g, p in pairs]
    verdicts = _judge_bits(prompts, judge, "goal_alignment_bit", workers)
    bits = [v.value or 0 for v in verdicts]
    flags = [f"unparsed:{i}" for i, v in enumerate(verdicts) if v.value is None]
    return MetricValue("goal_alignment", sum(bits) / len(bits), len(bits), bits, flags)


def judge_relevance(pairs: Sequence[tuple[str, str]], judge: Backend | Gateway,
                    template: str, workers: int = 1) -> MetricValue:
    """Clinical relevance from one judge bit per (gold, generated) pair."""
    if not pairs:
        raise MetricError("no pairs to judge")
    prompts = [DEFAULT_TEMPLATES.render(template, gold=g, generated=p) for g, p in pairs]
    verdicts = _judge_bits(prompts, judge, "relevance_bit", workers)
    bits = [v.value or 0 for v in verdicts]
    flags = [f"unparsed:{i}" for i, v in enumerate(verdicts) if v.value is None]
    return MetricValue("clinical_relevance", clinical_relevance(bits), len(bits), bits, flags)


def classify_conclusion(summary: str, judge: Backend | Gateway,
                        taxonomy: Sequence[str] = CONCLUSION_TAXONOMY) -> JudgeVerdict:
    prompt = DEFAULT_TEMPLATES.render("judge_conclusion", summary=summary,
                                      taxonomy="; ".join(taxonomy))
    raw = as_gateway(judge).complete(user(prompt, tag="judge:conclusion_label"))
    return JudgeVerdict("conclusion_label", parse_label(raw, {t: [t] for t in taxonomy}), raw)


def conclusion_consistency(pairs: Sequence[tuple[str, str]], judge: Backend | Gateway,
                           taxonomy: Sequence[str] = CONCLUSION_TAXONOMY, workers: int = 1) -> MetricValue:
    """Gold and generated summaries are labelled independently; score is the label-match rate.

    An unparseable label on either side is a non-match and is flagged.
    """
    if not taxonomy:
        raise MetricError("empty conclusion taxonomy")
    if not pairs:
        raise MetricError("no pairs to judge")

    def label_pair(pair):
        gold, gen = pair
        return classify_conclusion(gold, judge, taxonomy), classify_conclusion(gen, judge, taxonomy)

    labelled = ordered_map(label_pair, pairs, workers)
    matches, flags, per_sample = [], [], []
    for i, (g, p) in enumerate(labelled):
        if g.value is None or p.value is None:
            flags.append(f"unparsed:{i}")
        hit = int(g.value is not None and g.value == p.value)
        matches.append(hit)
        per_sample.append({"gold_label": g.value, "generated_label": p.value, "match": hit})
    return MetricValue("conclusion_consistency", sum(matches) / len(matches), len(matches), per_sample, flags)


def in_range(name: str, value: float) -> bool:
    for key, (lo, hi) in RANGES.items():
        if key in name.lower():
            return lo <= value <= hi
    return True

