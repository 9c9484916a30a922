"""
Metric worked examples
======================

Small hand-checkable cases for every metric family.
"""

from trialkit.gateway import ScriptedBackend
from trialkit.metrics import binary_regroup, bleu_score, classification_metrics, goal_alignment_rate
from trialkit.metrics import jaccard_index, rouge_scores

print("jaccard {a,b} vs {b,c}:", jaccard_index({"a", "b"}, {"b", "c"}))
print("rouge 'the cat sat' vs 'the cat':", rouge_scores("the cat sat", "the cat"))

ref = "one two three four five six seven eight nine ten"
print("bleu identical:", bleu_score(ref, ref))
print("bleu half-length prefix (brevity penalty e^-1):", round(bleu_score("one two three four five", ref), 6))

m = classification_metrics([0, 0, 1, 2], [0, 1, 1, 2], [0, 1, 2])
print(f"bacc={m['bacc']:.6f} (5/6)  kappa={m['kappa']:.6f} (7/11)")
print("confusion rows (gold) x cols (pred):", m["confusion"])
print("eligible-vs-rest:", binary_regroup([2, 0, 1, 2], positive=2))

judge = ScriptedBackend(["yes", "yes", "no", "Yes, same goal."])
pairs = [(f"gold {i}", f"generated {i}") for i in range(4)]
print("goal alignment with a scripted judge:", goal_alignment_rate(pairs, judge).value)
