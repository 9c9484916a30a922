"""Benchmark task runners and report assembly."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .gateway import (DEFAULT_TEMPLATES, Backend, ChatRequest, Gateway, TransportError, as_gateway,
                      ordered_map, user)
from .instruct import DESIGN_TASKS, InstructionRecord
from .matching import SCHEMES, PatientCase, check_single_scheme, matching_prompt, parse_eligibility
from .metrics import (CONCLUSION_TAXONOMY, MetricValue, binary_regroup, bleu_score, classification_metrics,
                      clinical_relevance, conclusion_consistency, goal_alignment_rate, jaccard_index,
                      judge_relevance, query_jaccard, rouge_scores)
from .search import CATEGORIES, StructuredQuery, expand_terms, extract_structured_query
from .text import normalize_terms

logger = logging.getLogger(__name__)

TASK_TYPES = {
    "query_generation": "Trial search", "query_expansion": "Trial search",
    "single_summarization": "Trial summarization", "multi_summarization": "Trial summarization",
    "criteria_design": "Trial design", "study_arm_design": "Trial design", "outcome_measure_design": "Trial design",
    "patient_trial_matching": "Patient-trial matching",
}
HEADLINE = {
    "query_generation": ("jaccard_overall",),
    "query_expansion": ("jaccard",),
    "single_summarization": ("rougeL", "goal_alignment", "conclusion_consistency"),
    "multi_summarization": ("rougeL", "goal_alignment", "conclusion_consistency"),
    "criteria_design": ("bleu", "rougeL", "clinical_relevance"),
    "study_arm_design": ("bleu", "rougeL", "clinical_relevance"),
    "outcome_measure_design": ("bleu", "rougeL", "clinical_relevance"),
    "patient_trial_matching": ("f1", "bacc", "kappa"),
}
RELEVANCE_TEMPLATES = {
    "criteria_design": "judge_relevance_criteria",
    "study_arm_design": "judge_relevance_study_arm",
    "outcome_measure_design": "judge_relevance_outcome_measure",
}
FIRST_PREDICTED_ROUND = 4
UPSTREAM_HEADER = "Design from the previous step ({name}):\n"


@dataclass
class RunConfig:
    tasks: list[str]
    backend: dict
    judge: dict | None = None
    data_dir: str = ""
    seed: int = 0
    out_dir: str = "reports"
    extra: dict = field(default_factory=dict)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class EvalReport:
    task: str
    model_id: str
    metrics: list[MetricValue]
    per_sample: list[dict]
    config_digest: str = ""
    judge_model_id: str | None = None
    notes: dict = field(default_factory=dict)

    def metric(self, name: str) -> MetricValue:
        for m in self.metrics:
            if m.name == name:
                return m
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"task": self.task, "model_id": self.model_id, "judge_model_id": self.judge_model_id,
                "config_digest": self.config_digest, "notes": self.notes,
                "metrics": [m.to_dict() for m in self.metrics], "per_sample": self.per_sample}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def input_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _mean_metric(name: str, values: Sequence[float | None], flags: Sequence[str] = ()) -> MetricValue:
    vals = [v for v in values if v is not None]
    return MetricValue(name, sum(vals) / len(vals) if vals else None, len(vals), list(flags) if flags else [])


def _model_id(backend) -> str:
    return getattr(backend, "model_id", "unknown")


# -- search ---------------------------------------------------------------------

def run_search_eval(records: Sequence[InstructionRecord], backend: Backend | Gateway, *,
                    config_digest: str = "", workers: int = 1) -> EvalReport:
    """Query generation scored by per-category Jaccard; query expansion by Jaccard
    between the predicted and gold remainder term sets."""
    if not records:
        raise ValueError("empty dataset")
    task = records[0].task
    if task not in ("query_generation", "query_expansion"):
        raise ValueError(f"not a search task: {task}")
    gw = as_gateway(backend)

    def one(rec: InstructionRecord) -> dict:
        sample = {"id": rec.provenance[0], "input_digest": input_digest(rec.input), "flags": []}
        if task == "query_generation":
            gold = StructuredQuery.from_dict(json.loads(rec.output))
            try:
                pred = extract_structured_query(rec.input, gw)
                sample["flags"] += [f"fallback:{k}" for k in pred.flags]
                sample["prediction"] = pred.to_dict()
                sample["scores"] = query_jaccard(pred, gold)
            except TransportError as exc:
                sample["flags"].append(f"backend_failure: {exc}")
                sample["prediction"] = None
                sample["scores"] = {**{c: 0.0 for c in CATEGORIES}, "overall": 0.0}
            sample["gold"] = gold.to_dict()
        else:
            gold_terms = normalize_terms(json.loads(rec.output))
            try:
                pred_terms = expand_terms(json.loads(rec.input), gw)
                sample["scores"] = {"jaccard": jaccard_index(pred_terms, gold_terms)}
            except TransportError as exc:
                sample["flags"].append(f"backend_failure: {exc}")
                pred_terms = None
                sample["scores"] = {"jaccard": 0.0}
            sample["prediction"], sample["gold"] = pred_terms, gold_terms
        return sample

    per_sample = ordered_map(one, records, workers)
    report = EvalReport(task, gw.model_id, [], per_sample, config_digest)
    report.metrics = recompute_metrics(report)
    return report


# -- summarization ----------------------------------------------------------------

def _keyword_sets(text: str, judge: Gateway) -> dict[str, set[str]]:
    q = extract_structured_query(text, judge)
    out = {}
    for cat in ("diseases", "interventions"):
        terms = list(getattr(q, cat))
        expanded = expand_terms(terms, judge) if terms else []
        out[cat] = set(terms) | set(expanded)
    return out


def run_summarization_eval(records: Sequence[InstructionRecord], backend: Backend | Gateway,
                           judge: Backend | Gateway | None, *, taxonomy: Sequence[str] = CONCLUSION_TAXONOMY,
                           config_digest: str = "", workers: int = 1) -> EvalReport:
    """ROUGE plus judge-based goal alignment, conclusion consistency and keyword overlap.

    If the judge is missing or unreachable, the judge-based metrics are reported
    with value None and a ``judge_unavailable`` flag while ROUGE stays intact.
    """
    if not records:
        raise ValueError("empty dataset")
    task = records[0].task
    template = {"single_summarization": "summarize_single", "multi_summarization": "summarize_multi"}[task]
    slot = "document" if task == "single_summarization" else "papers"
    gw = as_gateway(backend)

    def generate(rec: InstructionRecord) -> dict:
        sample = {"id": rec.provenance[0], "input_digest": input_digest(rec.input), "gold": rec.output, "flags": []}
        try:
            text = gw.complete(user(DEFAULT_TEMPLATES.render(template, **{slot: rec.input}), tag="summarize"))
        except TransportError as exc:
            sample["flags"].append(f"backend_failure: {exc}")
            text = ""
        if not text.strip():
            sample["flags"].append("empty_generation")
        sample["prediction"] = text
        sample["scores"] = rouge_scores(text, rec.output)
        return sample

    per_sample = ordered_map(generate, records, workers)
    notes: dict[str, Any] = {"rouge": "F1", "taxonomy": list(taxonomy)}
    judge_ok = judge is not None
    if judge_ok:
        jg = as_gateway(judge)
        pairs = [(s["gold"], s["prediction"] or "(empty)") for s in per_sample]
        try:
            goal = goal_alignment_rate(pairs, jg, f"judge_goal_{task.split('_')[0]}", workers)
            concl = conclusion_consistency(pairs, jg, taxonomy, workers)
            kw = ordered_map(lambda p: (_keyword_sets(p[0], jg), _keyword_sets(p[1], jg)), pairs, workers)
        except TransportError as exc:
            logger.warning("judge unavailable for %s: %s", task, exc)
            judge_ok = False
            notes["judge_error"] = str(exc)
        else:
            for i, s in enumerate(per_sample):
                s["scores"]["goal_alignment"] = goal.per_sample[i]
                s["scores"]["conclusion_match"] = concl.per_sample[i]["match"]
                s["judge_labels"] = {"gold": concl.per_sample[i]["gold_label"],
                                     "generated": concl.per_sample[i]["generated_label"]}
                gold_kw, gen_kw = kw[i]
                for cat in ("diseases", "interventions"):
                    s["scores"][f"keyword_{cat}"] = jaccard_index(gen_kw[cat], gold_kw[cat])
            for f in goal.flags + concl.flags:
                per_sample[int(f.split(":")[1])]["flags"].append("judge_" + f)
    if not judge_ok:
        for s in per_sample:
            s["flags"].append("judge_unavailable")
    report = EvalReport(task, gw.model_id, [], per_sample, config_digest,
                        _model_id(judge) if judge is not None else None, notes)
    report.metrics = recompute_metrics(report)
    return report


# -- design -----------------------------------------------------------------------

def conversation_rounds(messages: Sequence[dict]) -> list[tuple[int, int]]:
    """(user index, assistant index) per round."""
    return [(i, i + 1) for i in range(0, len(messages) - 1, 2)
            if messages[i]["role"] == "user" and messages[i + 1]["role"] == "assistant"]


def _design_prompt(history: Sequence[dict], upstream: str | None, upstream_name: str) -> ChatRequest:
    msgs = []
    if upstream:
        msgs.append({"role": "system", "content": UPSTREAM_HEADER.format(name=upstream_name) + upstream})
    msgs.extend({"role": m["role"], "content": m["content"]} for m in history)
    return ChatRequest(msgs, tag="design_turn")


def _predict_conversation(rec: InstructionRecord, gw: Gateway, upstream: str | None,
                          upstream_name: str) -> dict:
    """Teacher-forced prediction of every assistant turn from the fourth round on."""
    msgs = rec.messages or []
    rounds = conversation_rounds(msgs)
    sample: dict = {"id": rec.provenance[0], "input_digest": input_digest(json.dumps(msgs, sort_keys=True)),
                    "rounds": [], "flags": []}
    if len(rounds) < FIRST_PREDICTED_ROUND:
        sample["flags"].append("skipped_short")
        return sample
    if upstream is None and rec.task != DESIGN_TASKS[0]:
        sample["flags"].append("no_upstream")
    for r, (ui, ai) in enumerate(rounds, 1):
        if r < FIRST_PREDICTED_ROUND:
            continue
        req = _design_prompt(msgs[:ui + 1], upstream, upstream_name)
        try:
            pred = gw.complete(req)
        except TransportError as exc:
            sample["flags"].append(f"backend_failure@{r}: {exc}")
            pred = ""
        gold = msgs[ai]["content"]
        rs = rouge_scores(pred, gold)
        sample["rounds"].append({"round": r, "prediction": pred, "gold": gold,
                                 "bleu": bleu_score(pred, gold), **rs})
    return sample


def run_design_eval(datasets: Mapping[str, Sequence[InstructionRecord]], backend: Backend | Gateway,
                    judge: Backend | Gateway | None, mode: str = "reference", *,
                    config_digest: str = "", workers: int = 1) -> dict[str, EvalReport]:
    """Evaluate the design subtasks, chained criteria -> study arms -> outcome measures.

    Within a conversation the history is always ground truth (teacher forcing)
    and predictions start at round four. Each later subtask also sees the
    previous subtask's design for the same trial as a system message: its
    reference final assistant turn in ``reference`` mode, or the model's own
    prediction of that turn in ``de_novo`` mode. Scores average over
    predicted rounds.
    """
    if mode not in ("reference", "de_novo"):
        raise ValueError(f"unknown mode {mode!r}")
    gw = as_gateway(backend)
    jg = as_gateway(judge) if judge is not None else None
    reports: dict[str, EvalReport] = {}
    upstream_gold: dict[str, str] = {}
    upstream_gen: dict[str, str] = {}
    prev_task = None
    for task in DESIGN_TASKS:
        records = list(datasets.get(task, []))
        if not records:
            prev_task = task
            upstream_gold, upstream_gen = {}, {}
            continue
        if any(r.task != task for r in records):
            raise ValueError(f"dataset for {task} contains other tasks")
        source = upstream_gen if mode == "de_novo" else upstream_gold
        name = prev_task.replace("_design", "").replace("_", " ") if prev_task else ""

        def run(rec: InstructionRecord, source=source, name=name):
            return _predict_conversation(rec, gw, source.get(rec.provenance[0]), name)

        per_sample = ordered_map(run, records, workers)
        notes: dict[str, Any] = {"mode": mode, "first_predicted_round": FIRST_PREDICTED_ROUND,
                                 "averaging": "per predicted round"}
        if jg is not None:
            flat = [(s, rd) for s in per_sample for rd in s["rounds"]]
            if flat:
                try:
                    rel = judge_relevance([(rd["gold"], rd["prediction"] or "(empty)") for _, rd in flat],
                                          jg, RELEVANCE_TEMPLATES[task], workers)
                except TransportError as exc:
                    notes["judge_error"] = str(exc)
                    for s in per_sample:
                        s["flags"].append("judge_unavailable")
                else:
                    for (s, rd), bit in zip(flat, rel.per_sample):
                        rd["relevance"] = bit
                    for f in rel.flags:
                        flat[int(f.split(":")[1])][0]["flags"].append("judge_" + f)
        else:
            for s in per_sample:
                s["flags"].append("judge_unavailable")
        report = EvalReport(task, gw.model_id, [], per_sample, config_digest,
                            _model_id(judge) if judge is not None else None, notes)
        report.metrics = recompute_metrics(report)
        report.notes["skipped_short"] = sum("skipped_short" in s["flags"] for s in per_sample)
        reports[task] = report
        upstream_gold = {r.provenance[0]: r.messages[-1]["content"] for r in records if r.messages}
        upstream_gen = {s["id"]: s["rounds"][-1]["prediction"] for s in per_sample if s["rounds"]}
        prev_task = task
    return reports


# -- matching ---------------------------------------------------------------------

def run_matching_eval(cases: Sequence[PatientCase], backend: Backend | Gateway, *,
                      config_digest: str = "", workers: int = 1) -> EvalReport:
    """Three-class and eligible-vs-rest metrics from free-text answers.

    Answers are mapped to classes by canonical-label search; answers without a
    label phrase (or backend failures) are assigned the middle class and flagged.
    """
    if not cases:
        raise ValueError("empty dataset")
    scheme = check_single_scheme(cases)
    gw = as_gateway(backend)

    def one(case: PatientCase) -> dict:
        prompt = matching_prompt(case)
        sample = {"id": case.case_id, "input_digest": input_digest(prompt), "gold": case.label, "flags": []}
        try:
            text = gw.complete(user(prompt, tag="matching"))
        except TransportError as exc:
            sample["flags"].append(f"backend_failure: {exc}")
            text = ""
        pred = parse_eligibility(text, scheme)
        if pred is None:
            pred = SCHEMES[scheme].unparsed
            sample["flags"].append("unparsed")
        sample["prediction"] = pred
        sample["raw"] = text
        return sample

    per_sample = ordered_map(one, cases, workers)
    report = EvalReport("patient_trial_matching", gw.model_id, [], per_sample, config_digest,
                        notes={"scheme": scheme, "classes": sorted(SCHEMES[scheme].labels),
                               "averaging": "macro (micro and eligible-class F1 also reported)",
                               "positive_class": SCHEMES[scheme].positive})
    report.metrics = recompute_metrics(report)
    return report


# -- recomputation / reports --------------------------------------------------------

def recompute_metrics(report: EvalReport) -> list[MetricValue]:
    """Headline metrics derived purely from ``per_sample`` records."""
    ps = report.per_sample
    task = report.task
    if task == "query_generation":
        return [_mean_metric(f"jaccard_{c}", [s["scores"][c] for s in ps]) for c in (*CATEGORIES, "overall")]
    if task == "query_expansion":
        return [_mean_metric("jaccard", [s["scores"]["jaccard"] for s in ps])]
    if task in ("single_summarization", "multi_summarization"):
        out = [_mean_metric(k, [s["scores"][k] for s in ps]) for k in ("rouge1", "rouge2", "rougeL")]
        judged = all("judge_unavailable" not in s["flags"] for s in ps)
        for key, name in (("goal_alignment", "goal_alignment"), ("conclusion_match", "conclusion_consistency"),
                          ("keyword_diseases", "keyword_diseases"),
                          ("keyword_interventions", "keyword_interventions")):
            if judged:
                out.append(_mean_metric(name, [s["scores"][key] for s in ps]))
            else:
                out.append(MetricValue(name, None, 0, flags=["judge_unavailable"]))
        return out
    if task in DESIGN_TASKS:
        rounds = [rd for s in ps for rd in s["rounds"]]
        out = [_mean_metric(k, [rd[k] for rd in rounds]) for k in ("bleu", "rouge1", "rouge2", "rougeL")]
        bits = [rd["relevance"] for rd in rounds if "relevance" in rd]
        if rounds and len(bits) == len(rounds):
            out.append(MetricValue("clinical_relevance", clinical_relevance(bits), len(bits)))
        else:
            out.append(MetricValue("clinical_relevance", None, 0, flags=["judge_unavailable"]))
        return out
    if task == "patient_trial_matching":
        scheme = SCHEMES[report.notes["scheme"]]
        gold = [s["gold"] for s in ps]
        pred = [s["prediction"] for s in ps]
        classes = sorted(scheme.labels)
        m3 = classification_metrics(gold, pred, classes)
        m2 = classification_metrics(binary_regroup(gold, scheme.positive),
                                    binary_regroup(pred, scheme.positive), [0, 1])
        n = len(ps)
        report.notes["confusion_3class"] = {"classes": classes, "rows": m3["confusion"]}
        report.notes["confusion_binary"] = {"classes": [0, 1], "rows": m2["confusion"]}
        pos = m2["per_class"]["1"]
        return [
            MetricValue("bacc", m3["bacc"], n), MetricValue("kappa", m3["kappa"], n),
            MetricValue("precision", m3["precision"], n), MetricValue("recall", m3["recall"], n),
            MetricValue("f1", m3["f1"], n), MetricValue("micro_f1", m3["micro_f1"], n),
            MetricValue("eligible_f1", m3["per_class"][str(scheme.positive)]["f1"], n),
            MetricValue("binary_bacc", m2["bacc"], n), MetricValue("binary_kappa", m2["kappa"], n),
            MetricValue("binary_precision", pos["precision"], n), MetricValue("binary_recall", pos["recall"], n),
            MetricValue("binary_f1", pos["f1"], n),
            MetricValue("unparsed_rate", sum("unparsed" in s["flags"] for s in ps) / n, n),
        ]
    raise ValueError(f"unknown task {task!r}")


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


def _fmt(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def markdown_table(reports: Sequence[EvalReport]) -> str:
    lines = ["| Task type | Task name | Model | Metric | N |", "|---|---|---|---|---|"]
    for r in reports:
        heads = [r.metric(name) for name in HEADLINE[r.task]]
        cell = "; ".join(f"{m.name}={_fmt(m.value)}" for m in heads)
        n = len(r.per_sample)
        lines.append(f"| {TASK_TYPES[r.task]} | {r.task} | {r.model_id} | {cell} | {n} |")
    return "\n".join(lines) + "\n"


def emit_report(reports: Sequence[EvalReport], out_dir: str | Path,
                formats: Iterable[str] = ("json", "markdown_table")) -> list[Path]:
    """Write ``<out>/<task>/<model_id>/report.{json,md}`` and a merged ``summary.md``."""
    if not reports:
        raise ValueError("no reports to emit")
    formats = set(formats)
    out_dir = Path(out_dir)
    paths = []
    for r in reports:
        d = out_dir / r.task / _safe(r.model_id)
        d.mkdir(parents=True, exist_ok=True)
        if "json" in formats:
            (d / "report.json").write_text(r.to_json(), encoding="utf-8")
            paths.append(d / "report.json")
        if "markdown_table" in formats:
            (d / "report.md").write_text(markdown_table([r]), encoding="utf-8")
            paths.append(d / "report.md")
    if "markdown_table" in formats:
        ordered = sorted(reports, key=lambda r: (list(TASK_TYPES).index(r.task), r.model_id))
        (out_dir / "summary.md").write_text(markdown_table(ordered), encoding="utf-8")
        paths.append(out_dir / "summary.md")
    return paths
