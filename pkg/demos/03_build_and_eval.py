"""
Build the instruction sets and benchmark a model
================================================

The same stages the ``trialkit`` command runs (ingest, curate, build, eval),
driven from Python into a temporary directory with the mock backend as both
model and judge. The merged results table is printed at the end.
"""

import tempfile
from pathlib import Path

from trialkit.instruct import TASKS
from trialkit.pipeline import Config, build, curate, evaluate, ingest, make_gateway

out = Path(tempfile.mkdtemp(prefix="trialkit-demo-"))
cfg = Config.load(None, out=str(out), backend="mock", judge="mock:judge")
cfg.validate()

print("ingest:", ingest(cfg))
print("curate:", curate(cfg))

model = make_gateway(cfg.backend, cfg)
manifest = build(cfg, list(TASKS), model)
for task, per_split in manifest["counts"].items():
    print(f"  {task:24s} {per_split}")

reports, failures = evaluate(cfg, list(TASKS), model, make_gateway(cfg.judge, cfg, "judge"))
assert not failures, failures
print()
print((out / "reports" / "summary.md").read_text())

# A second run is served entirely from the disk cache.
calls = model.stats.network_calls
evaluate(cfg, list(TASKS), model, make_gateway(cfg.judge, cfg, "judge"))
print("backend calls on rerun:", model.stats.network_calls - calls)
print("outputs in", out)
