"""
Structured trial search
=======================

A request becomes a five-category query, the query becomes a boolean
expression, and the expression runs against an inverted index over the
mini-corpus. The language model here is the offline mock.
"""

from trialkit import fixtures
from trialkit.search import StructuredQuery, TermIndex, compile_query, evaluate_expression, expand_terms
from trialkit.search import extract_structured_query

index = TermIndex.build(fixtures.mini_corpus())
mock = fixtures.mock_backend()

q = StructuredQuery(diseases=["Asthma", "COPD"], statuses=["RECRUITING", "COMPLETED"])
expr = compile_query(q)
print("query:     ", q.to_json())
print("expression:", expr)
print("qualified: ", expr.to_string(qualified=True))
print("hits:      ", sorted(evaluate_expression(expr, index)))

# Extraction fills one key at a time and re-asks when an answer breaks the key's constraint.
seed = fixtures.query_seeds()[0]
pred = extract_structured_query(seed.input, mock)
print("\nrequest:  ", seed.input)
print("extracted:", pred.to_json(), "flags:", pred.flags)
print("gold:     ", seed.output)

# Expansion never echoes the seeds back.
doc = next(d for d in fixtures.mini_corpus() if len(d.mesh_terms) >= 6)
print("\nseed terms:", doc.mesh_terms[:5])
print("expanded:  ", expand_terms(doc.mesh_terms[:5], mock))
