"""Retrieve-and-edit question generation: explain, fill templates, validate."""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .algebra import SqlError, anonymize, parse_sql
from .ingest import DatabaseSchema, ExamplePair
from .llm import ChatRequest, LLMClient, ProviderAuthError, ProviderError, render_prompt
from .retrieval import DistanceCache, RetrievalIndex, get_related_queries
from .templating import MASK, CommonVocabulary, QuestionTemplate, mask_schema_tokens
from .text import first_sentence, tokenize
from .validate import DEFAULT_LAMBDA, DEFAULT_TOP_K, cycle_validate

log = logging.getLogger(__name__)

FOR_FILL = "for_fill"
FOR_VALIDATE = "for_validate"

REFORMER = "reformer"
PARAPHRASE_SCHEMA = "paraphrase_schema"
PARAPHRASE_CRAFTED = "paraphrase_crafted"
PROVENANCE_TAGS = (REFORMER, PARAPHRASE_SCHEMA, PARAPHRASE_CRAFTED)

# each role draws from its own sample stream so the two explanations are independent
_ROLE_TEMPLATE = {FOR_FILL: ("explain_for_fill", 0), FOR_VALIDATE: ("explain_for_validate", 1)}
_EMPTY_RETRY_OFFSET = 1000


class FillContractError(ValueError):
    """The filled question dropped a template anchor or kept a MASK."""


@dataclass(frozen=True)
class Explanation:
    text: str
    role: str
    query: str


@dataclass(frozen=True)
class CandidateQuestion:
    question: str
    query: str
    db_id: str
    provenance: str
    template: QuestionTemplate | None = None
    explanation: Explanation | None = None
    validation_explanation: Explanation | None = None
    similarity: float | None = None
    source_id: str | None = None

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ValueError("candidate question is empty")
        if MASK in tokenize(self.question):
            raise ValueError("candidate question still contains MASK")
        if self.provenance not in PROVENANCE_TAGS:
            raise ValueError(f"unknown provenance {self.provenance!r}")


def format_shot(shot: ExamplePair | None) -> str:
    if shot is None:
        return ""
    return f"Here is a question written for a similar query.\nSQL: {shot.query}\nQuestion: {shot.question}"


def _clean(text: str) -> str:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        return ""
    return lines[0].strip().strip('"').strip()


def get_explanation(
    query: str,
    role: str,
    client: LLMClient,
    shot: ExamplePair | None = None,
    *,
    temperature: float = 0.7,
) -> Explanation:
    """One-sentence explanation of ``query``; an empty reply is retried once."""
    if role not in _ROLE_TEMPLATE:
        raise ValueError(f"unknown explanation role {role!r}")
    template_id, sample = _ROLE_TEMPLATE[role]
    bindings = {"query": query}
    if template_id == "explain_for_fill":
        bindings["shot"] = format_shot(shot)
    bundle = render_prompt(template_id, bindings)
    for attempt in range(2):
        index = sample + attempt * _EMPTY_RETRY_OFFSET
        reply = client.chat(ChatRequest(bundle, temperature=temperature, sample_index=index))
        text = first_sentence(_clean(reply.text))
        if text:
            return Explanation(text, role, query)
    raise ProviderError(f"empty explanation for query: {query}")


def _is_subsequence(needles: Sequence[str], haystack: Sequence[str]) -> bool:
    it = iter(haystack)
    return all(any(n == h for h in it) for n in needles)


def fill_template(
    template: QuestionTemplate,
    explanation: Explanation,
    client: LLMClient,
    *,
    db_id: str = "",
    sample_index: int = 0,
    temperature: float = 0.7,
) -> CandidateQuestion:
    if explanation.role != FOR_FILL:
        raise ValueError(f"filling needs a {FOR_FILL} explanation, got {explanation.role}")
    if template.mask_count == 0:
        question = template.text
    else:
        bundle = render_prompt(
            "fill_template", {"question_template": template.text, "explanation": explanation.text}
        )
        reply = client.chat(ChatRequest(bundle, temperature=temperature, sample_index=sample_index))
        question = _clean(reply.text)
        tokens = tokenize(question)
        if not tokens:
            raise FillContractError("empty fill")
        if MASK in tokens:
            raise FillContractError(f"fill kept a MASK: {question!r}")
        anchors = [t.lower() for t in template.anchors]
        if not _is_subsequence(anchors, [t.lower() for t in tokens]):
            raise FillContractError(f"fill dropped template words: {template.text!r} -> {question!r}")
    return CandidateQuestion(
        question, explanation.query, db_id, REFORMER, template=template, explanation=explanation
    )


@dataclass
class ReformerConfig:
    ted_threshold: float = 0.1
    normalizer: str = "size_sum"
    max_templates: int = 10
    lam: float = DEFAULT_LAMBDA
    top_k: int = DEFAULT_TOP_K
    fill_samples: int = 1
    explain_temperature: float = 0.7
    fill_temperature: float = 0.7
    workers: int = 4
    prefilter: bool = True


@dataclass
class AugmentReport:
    """Audit events and counters for one augmentation run."""

    events: list[dict] = field(default_factory=list)
    counts: Counter = field(default_factory=Counter)

    def merge(self, other: AugmentReport) -> None:
        self.events.extend(other.events)
        self.counts.update(other.counts)


def _augment_one(
    query: str,
    schema: DatabaseSchema,
    index: RetrievalIndex,
    vocab: CommonVocabulary,
    client: LLMClient,
    config: ReformerConfig,
    cache: DistanceCache | None,
) -> tuple[list[CandidateQuestion], AugmentReport]:
    report = AugmentReport()
    report.counts["queries"] += 1
    base = {"query": query, "db_id": schema.db_id}
    try:
        tree = parse_sql(query, schema)
    except SqlError as exc:
        report.counts["parse_errors"] += 1
        report.events.append({**base, "event": "parse_error", "reason": str(exc)})
        return [], report

    hits = get_related_queries(
        anonymize(tree),
        index,
        config.ted_threshold,
        limit=config.max_templates,
        normalizer=config.normalizer,
        prefilter=config.prefilter,
        cache=cache,
    )
    if not hits:
        report.counts["skipped_no_hit"] += 1
        report.events.append({**base, "event": "skip", "reason": "no retrieval hit"})
        return [], report

    templates: list[QuestionTemplate] = []
    seen_tokens = set()
    for hit in hits:
        template = mask_schema_tokens(hit.pair.question, vocab, source=hit.pair, source_distance=hit.distance)
        if template.tokens in seen_tokens:
            continue
        seen_tokens.add(template.tokens)
        templates.append(template)
    report.counts["templates"] += len(templates)

    try:
        expl1 = get_explanation(query, FOR_FILL, client, shot=hits[0].pair, temperature=config.explain_temperature)
        candidates: list[CandidateQuestion] = []
        seen_questions = set()
        for t_rank, template in enumerate(templates):
            for sample in range(config.fill_samples):
                try:
                    candidate = fill_template(
                        template,
                        expl1,
                        client,
                        db_id=schema.db_id,
                        sample_index=sample,
                        temperature=config.fill_temperature,
                    )
                except FillContractError as exc:
                    report.counts["fill_errors"] += 1
                    report.events.append(
                        {**base, "event": "fill_error", "template": template.text, "template_rank": t_rank,
                         "reason": str(exc)}
                    )
                    continue
                if candidate.question in seen_questions:
                    report.counts["duplicates"] += 1
                    continue
                seen_questions.add(candidate.question)
                candidates.append(candidate)
        report.counts["candidates"] += len(candidates)
        if not candidates:
            report.events.append({**base, "event": "skip", "reason": "no usable fill"})
            return [], report
        expl2 = get_explanation(query, FOR_VALIDATE, client, temperature=config.explain_temperature)
        verdicts = cycle_validate(query, candidates, expl2, client, config.lam, config.top_k)
    except ProviderAuthError:
        raise
    except ProviderError as exc:
        report.counts["provider_errors"] += 1
        report.events.append({**base, "event": "provider_error", "reason": f"{type(exc).__name__}: {exc}"})
        return [], report

    for verdict in verdicts:
        c = verdict.candidate
        report.events.append(
            {
                **base,
                "event": "verdict",
                "question": c.question,
                "template": c.template.text if c.template else None,
                "template_source": c.template.source.to_record() if c.template and c.template.source else None,
                "template_distance": c.template.source_distance if c.template else None,
                "explanation": c.explanation.text if c.explanation else None,
                "validation_explanation": expl2.text,
                "similarity": verdict.similarity,
                "accepted": verdict.accepted,
                "rank": verdict.rank,
                "error": verdict.error,
            }
        )
    kept = sorted((v for v in verdicts if v.accepted), key=lambda v: v.rank)
    report.counts["accepted"] += len(kept)
    return [v.candidate for v in kept], report


def reformer_augment(
    new_queries: Sequence[str],
    schema: DatabaseSchema,
    index: RetrievalIndex,
    vocab: CommonVocabulary,
    client: LLMClient,
    config: ReformerConfig | None = None,
    *,
    report: AugmentReport | None = None,
    distance_cache: DistanceCache | None = None,
) -> list[CandidateQuestion]:
    """Generate validated questions for SQL queries over ``schema``.

    Queries run in parallel; output follows input order, then rank. Queries
    without a structurally similar training pair are skipped and recorded.
    """
    config = config or ReformerConfig()

    def work(query: str):
        return _augment_one(query, schema, index, vocab, client, config, distance_cache)

    if config.workers > 1 and len(new_queries) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(work, new_queries))
    else:
        results = [work(q) for q in new_queries]

    out: list[CandidateQuestion] = []
    for candidates, sub in results:
        out.extend(candidates)
        if report is not None:
            report.merge(sub)
    return out
