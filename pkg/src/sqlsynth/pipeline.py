"""Strategy orchestration: load inputs, run one strategy, write artifacts."""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .config import RunConfig
from .generate import FOR_VALIDATE, AugmentReport, CandidateQuestion, ReformerConfig, get_explanation, reformer_augment
from .ingest import (
    connect,
    database_path,
    load_category_split,
    load_examples,
    load_queries,
    load_schemas,
    quarantine,
)
from .llm import LLMClient, OpenAICompatibleProvider, ProviderAuthError, ProviderError, ResponseCache, StubProvider
from .metrics import evaluate
from .paraphrase import craft_and_fill_sql, describe_and_paraphrase, load_template_pack, paraphrase_with_schema
from .perturb import replace_constants
from .retrieval import DistanceCache, build_index
from .templating import build_common_vocabulary
from .validate import cycle_validate

log = logging.getLogger(__name__)

DATASET = "dataset.jsonl"
AUDIT = "audit.jsonl"
SUMMARY_JSON = "summary.json"
SUMMARY_TXT = "summary.txt"
TIMING = "timing.json"
QUARANTINE = "quarantine.jsonl"

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


class RunError(RuntimeError):
    """Run-level failure: missing inputs, provider authentication and the like."""


@dataclass(frozen=True)
class AugmentationRecord:
    question: str
    query: str
    db_id: str
    provenance: str
    run_id: str
    similarity: float | None = None
    source: dict = field(default_factory=dict)

    def to_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_line(cls, line: str) -> AugmentationRecord:
        return cls(**json.loads(line))


@dataclass
class RunResult:
    records: list[AugmentationRecord] = field(default_factory=list)
    audit: list[dict] = field(default_factory=list)
    counts: Counter = field(default_factory=Counter)
    extra: dict[str, str] = field(default_factory=dict)  # file name -> text


def _require(path: Path | None, name: str) -> Path:
    if path is None:
        raise RunError(f"paths.{name} is required for this strategy")
    if not Path(path).exists():
        raise RunError(f"paths.{name} does not exist: {path}")
    return Path(path)


def make_client(config: RunConfig) -> LLMClient:
    p = config.provider
    if p.kind == "stub":
        provider = StubProvider()
    else:
        provider = OpenAICompatibleProvider(
            p.base_url, p.chat_model, p.embed_model, dimension=p.dimension, api_key_env=p.api_key_env, timeout=p.timeout
        )
    cache = ResponseCache(config.paths.cache / "llm") if config.paths.cache else None
    return LLMClient(
        provider,
        cache,
        max_retries=p.max_retries,
        backoff=p.backoff,
        max_in_flight=p.max_in_flight,
        requests_per_second=p.requests_per_second,
    )


def _load_training(config: RunConfig, result: RunResult):
    catalog = load_schemas(_require(config.paths.tables, "tables"))
    examples = load_examples(_require(config.paths.train, "train"))
    kept, bad = quarantine(examples, catalog)
    result.counts["train_pairs"] = len(examples)
    result.counts["quarantined"] = len(bad)
    for q in bad:
        result.audit.append({"event": "quarantine", **q.to_record()})
    if bad:
        result.extra[QUARANTINE] = "".join(
            json.dumps(q.to_record(), sort_keys=True, ensure_ascii=False) + "\n" for q in bad
        )
    return catalog, kept


def _ordered_map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def run_reformer(config: RunConfig, client: LLMClient, run_id: str) -> RunResult:
    result = RunResult()
    catalog, train = _load_training(config, result)
    queries = load_queries(_require(config.paths.queries, "queries"))
    t, o = config.thresholds, config.options
    index = build_index(train, catalog)
    vocab = build_common_vocabulary(train, catalog, t.keep)
    distance_cache = DistanceCache(config.paths.cache) if config.paths.cache else None
    rconfig = ReformerConfig(
        ted_threshold=t.ted,
        normalizer=o.normalizer,
        max_templates=t.max_templates,
        lam=t.lambda_,
        top_k=t.top_k,
        fill_samples=o.fill_samples,
        workers=1,
    )

    def work(item):
        i, (query, db_id) = item
        report = AugmentReport()
        schema = catalog.get(db_id)
        if schema is None:
            report.counts["unknown_db"] += 1
            report.events.append({"query": query, "db_id": db_id, "event": "skip", "reason": "unknown db_id"})
            return i, [], report
        return i, reformer_augment([query], schema, index, vocab, client, rconfig, report=report,
                                   distance_cache=distance_cache), report

    for i, candidates, report in _ordered_map(work, list(enumerate(queries)), o.workers):
        result.counts.update(report.counts)
        result.audit.extend({"query_index": i, **e} for e in report.events)
        for c in candidates:
            src = c.template.source if c.template else None
            result.records.append(
                AugmentationRecord(
                    c.question, c.query, c.db_id, c.provenance, run_id, c.similarity,
                    {
                        "query_index": i,
                        "template": c.template.text if c.template else None,
                        "template_question": src.question if src else None,
                        "template_db_id": src.db_id if src else None,
                        "template_distance": c.template.source_distance if c.template else None,
                    },
                )
            )
    if distance_cache is not None:
        distance_cache.save()
    return result


def _validated(
    query: str, candidates: list[CandidateQuestion], client: LLMClient, lam: float, k: int, base: dict
) -> tuple[list[CandidateQuestion], list[dict]]:
    expl2 = get_explanation(query, FOR_VALIDATE, client)
    verdicts = cycle_validate(query, candidates, expl2, client, lam, k)
    events = [{**base, "event": "verdict", **v.to_record(), "validation_explanation": expl2.text} for v in verdicts]
    kept = sorted((v for v in verdicts if v.accepted), key=lambda v: v.rank)
    return [v.candidate for v in kept], events


def run_paraphrase(config: RunConfig, client: LLMClient, run_id: str) -> RunResult:
    result = RunResult()
    catalog, train = _load_training(config, result)
    t, o = config.thresholds, config.options

    def work(item):
        i, example = item
        base = {"example_index": i, "db_id": example.db_id, "query": example.query}
        try:
            candidates = paraphrase_with_schema(example, catalog, client, o.paraphrase_n)
            if not candidates:
                return i, [], [{**base, "event": "skip", "reason": "no paraphrases"}]
            kept, events = _validated(example.query, candidates, client, t.paraphrase_lambda, t.top_k, base)
            return i, kept, events
        except ProviderAuthError:
            raise
        except ProviderError as exc:
            return i, [], [{**base, "event": "provider_error", "reason": f"{type(exc).__name__}: {exc}"}]

    for i, kept, events in _ordered_map(work, list(enumerate(train)), o.workers):
        result.audit.extend(events)
        result.counts["examples"] += 1
        result.counts["candidates"] += sum(e["event"] == "verdict" for e in events)
        result.counts["accepted"] += len(kept)
        result.counts["provider_errors"] += sum(e["event"] == "provider_error" for e in events)
        for c in kept:
            result.records.append(
                AugmentationRecord(c.question, c.query, c.db_id, c.provenance, run_id, c.similarity,
                                   {"example_index": i})
            )
    return result


def run_craft(config: RunConfig, client: LLMClient, run_id: str) -> RunResult:
    result = RunResult()
    catalog = load_schemas(_require(config.paths.tables, "tables"))
    db_root = _require(config.paths.db_root, "db_root")
    templates = load_template_pack(config.paths.templates)
    t, o = config.thresholds, config.options
    for db_id in sorted(catalog):
        if not database_path(db_root, db_id).exists():
            result.audit.append({"event": "skip", "db_id": db_id, "reason": "no database file"})
            result.counts["missing_db"] += 1
            continue
        conn = connect(db_root, db_id)
        try:
            crafted = craft_and_fill_sql(
                catalog[db_id], templates, client, conn, timeout=o.timeout, drop_empty=o.drop_empty
            )
        finally:
            conn.close()
        for c in crafted:
            result.audit.append({"event": "crafted", **c.to_record()})
            result.counts["crafted_ok" if c.ok else "crafted_error"] += 1
            if not c.ok:
                continue
            base = {"db_id": db_id, "query": c.query, "template_id": c.template.template_id}
            try:
                candidates = describe_and_paraphrase(c, client, o.paraphrase_n)
                result.counts["candidates"] += len(candidates)
                if o.validate_crafted and candidates:
                    candidates, events = _validated(c.query, candidates, client, t.lambda_, t.top_k, base)
                    result.audit.extend(events)
            except ProviderAuthError:
                raise
            except ProviderError as exc:
                result.counts["provider_errors"] += 1
                result.audit.append({**base, "event": "provider_error", "reason": f"{type(exc).__name__}: {exc}"})
                continue
            result.counts["accepted"] += len(candidates)
            for cand in candidates:
                result.records.append(
                    AugmentationRecord(
                        cand.question, cand.query, cand.db_id, cand.provenance, run_id, cand.similarity,
                        {"template_id": c.template.template_id, "description": cand.explanation.text},
                    )
                )
    return result


def run_perturb(config: RunConfig, client: LLMClient | None, run_id: str) -> RunResult:
    result = RunResult()
    catalog = load_schemas(_require(config.paths.tables, "tables"))
    examples = load_examples(_require(config.paths.train, "train"))
    db_root = _require(config.paths.db_root, "db_root")
    categories = None
    if config.options.per_category:
        categories = load_category_split(_require(config.paths.split, "split"))
    out, report = replace_constants(
        examples, db_root, catalog, config.thresholds.fraction, config.seed,
        categories=categories, timeout=config.options.timeout,
    )
    altered = {e["index"] for e in report.entries if e["status"] == "altered"}
    for i, ex in enumerate(out):
        provenance = "perturb" if i in altered else "original"
        result.records.append(AugmentationRecord(ex.question, ex.query, ex.db_id, provenance, run_id, None,
                                                 {"example_index": i}))
    for entry in report.entries:
        result.audit.append({"event": "perturb", **entry})
        result.counts[entry["status"]] += 1
    result.counts["examples"] = report.total
    result.counts["selected"] = report.selected
    result.extra["perturbation_report.json"] = json.dumps(report.to_dict(), indent=1, sort_keys=True,
                                                          ensure_ascii=False) + "\n"
    return result


def run_evaluate(config: RunConfig, client: LLMClient | None, run_id: str) -> RunResult:
    result = RunResult()
    dataset_path = _require(config.paths.dataset, "dataset")
    gold = load_examples(_require(config.paths.gold, "gold"))
    gold_by_query: dict[tuple[str, str], str] = {}
    for ex in gold:
        gold_by_query.setdefault((ex.db_id, ex.query), ex.question)
    groups: dict[tuple[str, str], list[str]] = {}
    for line in dataset_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = AugmentationRecord.from_line(line)
            groups.setdefault((rec.db_id, rec.query), []).append(rec.question)
    sets = {}
    for (db_id, query), questions in groups.items():
        if (db_id, query) not in gold_by_query:
            result.audit.append({"event": "skip", "db_id": db_id, "query": query, "reason": "no gold question"})
            result.counts["no_gold"] += 1
            continue
        sets[f"{db_id}: {query}"] = (gold_by_query[(db_id, query)], questions)
    report = evaluate(sets, config.options.smoothing)
    result.counts["sets"] = len(sets)
    result.extra["quality.json"] = json.dumps(report.to_dict(), indent=1, ensure_ascii=False) + "\n"
    result.extra["quality.txt"] = report.to_table()
    return result


RUNNERS = {
    "reformer": run_reformer,
    "paraphrase": run_paraphrase,
    "craft": run_craft,
    "perturb": run_perturb,
    "evaluate": run_evaluate,
}
_NEEDS_CLIENT = {"reformer", "paraphrase", "craft"}


def _write_lines(path: Path, lines: Iterable[str]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
    tmp.replace(path)


def _summary(config: RunConfig, run_id: str, result: RunResult) -> dict:
    counts = dict(sorted(result.counts.items()))
    candidates = counts.get("candidates")
    rate = counts.get("accepted", 0) / candidates if candidates else None
    return {
        "run_id": run_id,
        "strategy": config.strategy,
        "seed": config.seed,
        "records": len(result.records),
        "acceptance_rate": rate,
        "counts": counts,
    }


def _summary_text(summary: dict) -> str:
    lines = [f"run {summary['run_id']}  strategy {summary['strategy']}  seed {summary['seed']}"]
    lines.append(f"records written: {summary['records']}")
    if summary["acceptance_rate"] is not None:
        lines.append(f"acceptance rate: {summary['acceptance_rate']:.3f}")
    for key, value in summary["counts"].items():
        lines.append(f"  {key:<20} {value}")
    return "\n".join(lines) + "\n"


def run_pipeline(config: RunConfig) -> RunResult:
    """Run the configured strategy and write its artifacts into ``paths.output``.

    Raises :class:`RunError` (or a provider/corpus error) on run-level
    failure; rejected items only show up in the audit file.
    """
    started = time.monotonic()
    run_id = config.run_id
    client = make_client(config) if config.strategy in _NEEDS_CLIENT else None
    result = RUNNERS[config.strategy](config, client, run_id)

    out = Path(config.paths.output)
    out.mkdir(parents=True, exist_ok=True)
    if config.strategy != "evaluate":
        _write_lines(out / DATASET, (r.to_line() for r in result.records))
    _write_lines(out / AUDIT, (json.dumps(e, sort_keys=True, ensure_ascii=False) for e in result.audit))
    for name, text in sorted(result.extra.items()):
        (out / name).write_text(text, encoding="utf-8")
    summary = _summary(config, run_id, result)
    (out / SUMMARY_JSON).write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (out / SUMMARY_TXT).write_text(_summary_text(summary), encoding="utf-8")
    timing = {
        "elapsed_seconds": round(time.monotonic() - started, 3),
        "provider_calls": client.calls if client is not None else 0,
    }
    (out / TIMING).write_text(json.dumps(timing, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return result

