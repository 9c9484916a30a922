"""Configuration and the ingest -> curate -> build -> eval stages behind the CLI."""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import fixtures
from .corpus import (CTGOV, SOURCES, CorpusError, UnknownSource, parse_papers, parse_registry_record,
                     read_documents, read_registry_file, write_documents)
from .curation import (DEFAULT_CUTOFF, SplitManifest, dedup_corpus, dedup_report_lines, scrub_pii,
                       split_by_date, split_violations)
from .gateway import (DEFAULT_API_KEY_ENV, ConfigurationError, DiskCache, Gateway, OpenAIChatBackend,
                      RateLimiter)
from . import gateway as gateway_mod
from .harness import (EvalReport, RunConfig, emit_report, run_design_eval, run_matching_eval,
                      run_search_eval, run_summarization_eval)
from .instruct import (DESIGN_TASKS, TASKS, ReviewPair, build_design_conversations, build_matching_set,
                       build_multi_summarization_set, build_query_expansion_set, build_query_generation_set,
                       build_single_summarization_set, query_record, read_records, write_records)
from .matching import SCHEMES, read_cases
from .registry import CTGOV_API, ClinicalTrialsGovClient
from .search import LocalRegistry, StructuredQuery, TermIndex

logger = logging.getLogger(__name__)

BACKEND_TASKS = ("query_generation", *DESIGN_TASKS, "patient_trial_matching")


@dataclass
class Config:
    """Effective run configuration (JSON file plus flag overrides; flags win)."""

    inputs: list[dict] = field(default_factory=list)  # [{"path": ..., "source": ...}]
    papers: str = ""
    reviews: str = ""
    cases: str = ""
    query_seeds: str = ""
    cutoff: str = DEFAULT_CUTOFF.isoformat()
    dedup_threshold: float = 0.9
    source_priority: list[str] = field(default_factory=lambda: list(SOURCES))
    backend: str | None = None
    judge: str | None = None
    endpoint: str = ""
    api_key_env: str = DEFAULT_API_KEY_ENV
    template_dir: str | None = None
    matching_scheme: str = "TREC2021"
    registry_url: str = CTGOV_API
    query_rounds: int = 3
    seed: int = 0
    workers: int = 1
    out: str = "out"
    cache_dir: str | None = None
    max_retries: int = 4
    backoff: float = 0.5
    rate_limit: int | None = None

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides) -> Config:
        data: dict[str, Any] = {}
        if path:
            try:
                data = json.loads(Path(path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**data)
        cfg._fill_defaults()
        return cfg

    def _fill_defaults(self):
        if not self.inputs:
            self.inputs = [{"path": str(p), "source": s} for p, s in fixtures.registry_files().items()]
        for name, fname in (("papers", "papers.jsonl"), ("reviews", "reviews.jsonl"),
                            ("cases", "matching_cases.jsonl"), ("query_seeds", "query_seeds.jsonl")):
            if not getattr(self, name):
                setattr(self, name, str(fixtures.data_path(fname)))

    @property
    def cutoff_date(self) -> dt.date:
        return dt.date.fromisoformat(self.cutoff)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def validate(self) -> None:
        try:
            self.cutoff_date
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"cutoff {self.cutoff!r} is not an ISO date") from exc
        for item in self.inputs:
            if item.get("source") not in SOURCES:
                raise ConfigurationError(f"unknown registry source {item.get('source')!r}")
        for path in [i["path"] for i in self.inputs] + [self.papers, self.reviews, self.cases, self.query_seeds]:
            if not Path(path).exists():
                raise ConfigurationError(f"missing input file {path}")
        if self.template_dir and not Path(self.template_dir).is_dir():
            raise ConfigurationError(f"template dir {self.template_dir} does not exist")
        if not 0 < self.dedup_threshold <= 1:
            raise ConfigurationError("dedup_threshold must be in (0, 1]")
        if self.matching_scheme not in SCHEMES:
            raise ConfigurationError(f"unknown matching scheme {self.matching_scheme!r}")
        for spec in (self.backend, self.judge):
            if spec:
                parse_backend_spec(spec)
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")

    def digest_fields(self) -> dict:
        """Settings that determine outputs (paths, workers and cache location excluded)."""
        return {"cutoff": self.cutoff, "dedup_threshold": self.dedup_threshold,
                "source_priority": self.source_priority, "backend": self.backend, "judge": self.judge,
                "matching_scheme": self.matching_scheme, "query_rounds": self.query_rounds, "seed": self.seed}


# -- backends -----------------------------------------------------------------

def parse_backend_spec(spec: str) -> tuple[str, str, str]:
    """``mock[:model_id]`` or ``openai:<model_id>[@<endpoint>]`` -> (kind, model_id, endpoint)."""
    kind, _, rest = spec.partition(":")
    if kind == "mock":
        return "mock", rest or "mock", ""
    if kind == "openai":
        model, _, endpoint = rest.partition("@")
        if not model:
            raise ConfigurationError(f"backend spec {spec!r} lacks a model id")
        return "openai", model, endpoint
    raise ConfigurationError(f"unknown backend kind in {spec!r} (expected mock or openai)")


def make_gateway(spec: str | None, cfg: Config, role: str = "backend") -> Gateway | None:
    if not spec:
        return None
    kind, model_id, endpoint = parse_backend_spec(spec)
    if kind == "mock":
        backend = fixtures.mock_backend(model_id)
    else:
        endpoint = endpoint or cfg.endpoint
        if not endpoint:
            raise ConfigurationError(f"{role} {spec!r} needs an endpoint (spec '@url' or config 'endpoint')")
        backend = OpenAIChatBackend(endpoint, model_id, cfg.api_key_env)
    cache = DiskCache(cfg.cache_dir or cfg.out_dir / "cache")
    return Gateway(backend, cache, max_retries=cfg.max_retries, backoff=cfg.backoff, rate_limit=cfg.rate_limit,
                   max_in_flight=max(cfg.workers, 1))


def apply_templates(cfg: Config) -> None:
    if cfg.template_dir:
        gateway_mod.DEFAULT_TEMPLATES.use_directory(cfg.template_dir)


# -- stages -------------------------------------------------------------------

def ingest(cfg: Config, fetch_query: str | None = None) -> dict:
    """Parse every configured input (or a live pull) into ``<out>/corpus.jsonl``."""
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    docs = []
    if fetch_query:
        client = ClinicalTrialsGovClient(cfg.registry_url, rate_limiter=RateLimiter(cfg.rate_limit or 3))
        studies = client.fetch({"query.cond": fetch_query}, checkpoint=out / "fetch.checkpoint.json")
        docs = [parse_registry_record(s, CTGOV) for s in studies]
    else:
        for item in cfg.inputs:
            docs.extend(read_registry_file(item["path"], item["source"]))
    n = write_documents(docs, out / "corpus.jsonl")
    by_source: dict[str, int] = {}
    for d in docs:
        by_source[d.source] = by_source.get(d.source, 0) + 1
    return {"documents": n, "by_source": dict(sorted(by_source.items()))}


def curate(cfg: Config) -> dict:
    out = cfg.out_dir
    docs = [scrub_pii(d) for d in read_documents(out / "corpus.jsonl")]
    kept, decisions = dedup_corpus(docs, cfg.dedup_threshold, cfg.source_priority)
    assignments = split_by_date(kept, cfg.cutoff_date)
    bad = split_violations(kept, assignments)
    if bad:
        raise CorpusError(f"split leakage for {bad[:5]}")
    write_documents(kept, out / "curated.jsonl")
    (out / "dedup_report.jsonl").write_text(dedup_report_lines(decisions), encoding="utf-8")
    manifest = SplitManifest.from_assignments(assignments, cfg.cutoff_date)
    (out / "split_manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return {"input": len(docs), "kept": len(kept), "dropped": len(decisions),
            "splits": {k: len(getattr(manifest, k)) for k in ("train", "test", "excluded")}}


def _jsonl(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def build(cfg: Config, tasks: list[str], backend: Gateway | None) -> dict:
    out = cfg.out_dir
    curated = out / "curated.jsonl"
    if not curated.exists() or not (out / "split_manifest.json").exists():
        raise ConfigurationError("run curate before build (curated corpus or split manifest missing)")
    for task in tasks:
        if task in BACKEND_TASKS and backend is None:
            raise ConfigurationError(f"builder {task!r} needs a backend (--backend)")
    docs = read_documents(curated)
    cutoff, seed = cfg.cutoff_date, cfg.seed
    records = []
    reports: dict[str, dict] = {}
    for task in tasks:
        if task == "query_generation":
            seeds = [query_record(r["request"], StructuredQuery.from_dict(r["query"]), seed)
                     for r in _jsonl(cfg.query_seeds)]
            recs, rep = build_query_generation_set(seeds, backend, LocalRegistry(TermIndex.build(docs)),
                                                   rounds=cfg.query_rounds, seed=seed)
            reports[task] = rep.to_dict()
        elif task == "query_expansion":
            recs = build_query_expansion_set(docs, cutoff, seed)
        elif task == "single_summarization":
            recs = build_single_summarization_set(docs, cutoff, seed)
        elif task == "multi_summarization":
            papers = parse_papers(_jsonl(cfg.papers))
            recs = build_multi_summarization_set([ReviewPair(**r) for r in _jsonl(cfg.reviews)], papers, seed=seed)
        elif task in DESIGN_TASKS:
            recs, rep = build_design_conversations(docs, task, backend, cutoff, seed, cfg.workers)
            reports[task] = rep.to_dict()
        elif task == "patient_trial_matching":
            recs, rep = build_matching_set(read_cases(cfg.cases), backend, cfg.workers)
            reports[task] = rep.to_dict()
        else:
            raise ConfigurationError(f"unknown task {task!r}")
        records.extend(recs)
    inst = out / "instructions"
    counts = write_records(records, inst)
    manifest = {"tasks": tasks, "counts": counts, "builder_reports": reports}
    (inst / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def evaluate(cfg: Config, tasks: list[str], backend: Gateway, judge: Gateway | None,
             split: str = "test", design_mode: str = "reference") -> tuple[list[EvalReport], dict[str, str]]:
    """Run each task in isolation; returns the reports and ``{task: error}`` for tasks that failed."""
    inst = cfg.out_dir / "instructions"
    digest = RunConfig(tasks=list(tasks), backend={"spec": cfg.backend}, judge={"spec": cfg.judge},
                       seed=cfg.seed, extra=cfg.digest_fields()).digest()
    reports: list[EvalReport] = []
    failures: dict[str, str] = {}
    design = [t for t in tasks if t in DESIGN_TASKS]
    for task in tasks:
        if task in DESIGN_TASKS:
            continue
        try:
            if task == "patient_trial_matching":
                cases = [c for c in read_cases(cfg.cases)
                         if c.split == split and c.scheme == cfg.matching_scheme]
                if not cases:
                    raise ValueError(f"no {split} cases for scheme {cfg.matching_scheme}")
                reports.append(run_matching_eval(cases, backend, config_digest=digest, workers=cfg.workers))
                continue
            records = read_records(inst, task, split)
            if not records:
                raise ValueError(f"no {split} records for {task}; run build first")
            if task in ("query_generation", "query_expansion"):
                reports.append(run_search_eval(records, backend, config_digest=digest, workers=cfg.workers))
            else:
                reports.append(run_summarization_eval(records, backend, judge, config_digest=digest,
                                                      workers=cfg.workers))
        except Exception as exc:  # per-task isolation
            logger.error("task %s failed: %s", task, exc)
            failures[task] = f"{type(exc).__name__}: {exc}"
    if design:
        try:
            datasets = {t: read_records(inst, t, split) for t in design}
            missing = [t for t, recs in datasets.items() if not recs]
            for t in missing:
                failures[t] = f"ValueError: no {split} records for {t}; run build first"
            got = run_design_eval({t: r for t, r in datasets.items() if r}, backend, judge, design_mode,
                                  config_digest=digest, workers=cfg.workers)
            reports.extend(got[t] for t in design if t in got)
        except Exception as exc:
            logger.error("design tasks failed: %s", exc)
            for t in design:
                failures.setdefault(t, f"{type(exc).__name__}: {exc}")
    order = {t: i for i, t in enumerate(TASKS)}
    reports.sort(key=lambda r: order[r.task])
    if reports:
        emit_report(reports, cfg.out_dir / "reports")
    return reports, failures
