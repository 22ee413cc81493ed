"""Command-line entry point: ``sqlsynth <strategy> --config run.yaml [overrides]``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from .config import STRATEGIES, ConfigError, load_config
from .ingest import CorpusError
from .llm import ProviderError
from .pipeline import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, SUMMARY_TXT, RunError, run_pipeline

# flag -> dotted config key
_OVERRIDES = {
    "seed": "seed",
    "output": "paths.output",
    "train": "paths.train",
    "tables": "paths.tables",
    "db_root": "paths.db_root",
    "queries": "paths.queries",
    "split": "paths.split",
    "templates": "paths.templates",
    "dataset": "paths.dataset",
    "gold": "paths.gold",
    "cache": "paths.cache",
    "ted": "thresholds.ted",
    "lam": "thresholds.lambda",
    "paraphrase_lambda": "thresholds.paraphrase_lambda",
    "keep": "thresholds.keep",
    "fraction": "thresholds.fraction",
    "top_k": "thresholds.top_k",
    "paraphrase_n": "options.paraphrase_n",
    "workers": "options.workers",
    "provider": "provider.kind",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqlsynth", description="Synthesize question/SQL training pairs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="strategy", required=True)
    for name in STRATEGIES:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="YAML or JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("-o", "--output", help="output directory")
        for flag in ("train", "tables", "db-root", "queries", "split", "templates", "dataset", "gold", "cache"):
            p.add_argument(f"--{flag}")
        p.add_argument("--ted", type=float, help="retrieval distance threshold")
        p.add_argument("--lambda", dest="lam", type=float, help="cycle-consistency threshold")
        p.add_argument("--paraphrase-lambda", type=float)
        p.add_argument("--keep", type=float, help="common-vocabulary threshold")
        p.add_argument("--fraction", type=float)
        p.add_argument("--top-k", type=int)
        p.add_argument("--paraphrase-n", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--provider", choices=("stub", "openai"))
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {"strategy": args.strategy}
    overrides.update({key: getattr(args, attr) for attr, key in _OVERRIDES.items()})
    try:
        config = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_pipeline(config)
    except (RunError, ProviderError, CorpusError, FileNotFoundError) as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print((config.paths.output / SUMMARY_TXT).read_text(encoding="utf-8"), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
