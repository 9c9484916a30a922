"""Command line entry point: ``trialkit {ingest,curate,build,eval}``.

Exit codes: 0 success, 1 task failure, 2 configuration error. The API
credential for ``openai:`` backends is read from the environment variable
named by the ``api_key_env`` config key (default ``TRIALKIT_API_KEY``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .corpus import SOURCES, CorpusError, UnknownSource
from .gateway import ConfigurationError, GatewayError
from .instruct import TASKS
from .pipeline import Config, apply_templates, build, curate, evaluate, ingest, make_gateway
from .registry import FetchInterrupted

logger = logging.getLogger("trialkit")

EXIT_OK, EXIT_TASK, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--cutoff", help="temporal split date, ISO format (default 2023-01-01)")
    common.add_argument("--workers", type=int, help="parallel samples per task")
    common.add_argument("--dry-run", action="store_true", help="validate configuration and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="trialkit", description="Clinical trial corpus, dataset and benchmark tools.")
    sub = p.add_subparsers(dest="command", required=True)

    ing = sub.add_parser("ingest", parents=[common], help="parse registry files into canonical JSONL")
    ing.add_argument("inputs", nargs="*", help="registry ingest files (default: bundled mini-corpus)")
    ing.add_argument("--source", help=f"registry of the given inputs, one of: {', '.join(SOURCES)}")
    ing.add_argument("--fetch", metavar="CONDITION", help="pull studies matching a condition from ClinicalTrials.gov")

    sub.add_parser("curate", parents=[common], help="PII scrub, de-duplication and temporal split")

    tasks = ["all", *TASKS]
    b = sub.add_parser("build", parents=[common], help="build instruction datasets")
    b.add_argument("--task", default="all", choices=tasks)
    b.add_argument("--backend", help="mock[:model] or openai:<model>[@<endpoint>]")

    e = sub.add_parser("eval", parents=[common], help="run benchmark tasks and write reports")
    e.add_argument("--task", default="all", choices=tasks)
    e.add_argument("--backend", help="model under test: mock[:model] or openai:<model>[@<endpoint>]")
    e.add_argument("--judge", help="judge model spec, same syntax as --backend")
    e.add_argument("--mode", default="reference", choices=("reference", "de_novo"), help="design chaining mode")
    e.add_argument("--split", default="test", choices=("train", "dev", "test"))
    return p


def _config(args) -> Config:
    overrides = {"out": args.out, "seed": args.seed, "cutoff": args.cutoff, "workers": args.workers,
                 "backend": getattr(args, "backend", None), "judge": getattr(args, "judge", None)}
    if args.command == "ingest" and args.inputs:
        if not args.source:
            raise ConfigurationError("--source is required with explicit input files")
        overrides["inputs"] = [{"path": path, "source": args.source} for path in args.inputs]
    elif args.command == "ingest" and args.source and not args.fetch:
        cfg = Config.load(args.config)
        picked = [i for i in cfg.inputs if i["source"] == args.source]
        if args.source not in SOURCES:
            raise ConfigurationError(f"unknown registry source {args.source!r}")
        if not picked:
            raise ConfigurationError(f"source {args.source!r} is not named in the config")
        overrides["inputs"] = picked
    cfg = Config.load(args.config, **overrides)
    cfg.validate()
    return cfg


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def run(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        tasks = list(TASKS) if getattr(args, "task", "all") == "all" else [args.task]
        if args.dry_run:
            _print({"command": args.command, "config": cfg.digest_fields(), "out": cfg.out,
                    **({"tasks": tasks} if args.command in ("build", "eval") else {})})
            return EXIT_OK
        apply_templates(cfg)
        if args.command == "ingest":
            _print(ingest(cfg, args.fetch))
        elif args.command == "curate":
            _print(curate(cfg))
        elif args.command == "build":
            _print(build(cfg, tasks, make_gateway(cfg.backend, cfg)))
        else:
            if not cfg.backend:
                raise ConfigurationError("eval needs --backend")
            reports, failures = evaluate(cfg, tasks, make_gateway(cfg.backend, cfg),
                                         make_gateway(cfg.judge, cfg, "judge"), args.split, args.mode)
            _print({"reports": [f"{r.task}/{r.model_id}" for r in reports], "failures": failures})
            if failures:
                return EXIT_TASK
    except (ConfigurationError, UnknownSource) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FetchInterrupted as exc:
        print(f"fetch interrupted: {exc}; resume with the same command (checkpoint {exc.checkpoint})",
              file=sys.stderr)
        return EXIT_TASK
    except (CorpusError, GatewayError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TASK
    return EXIT_OK


def main() -> None:
    sys.exit(run())
