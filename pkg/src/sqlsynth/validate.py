"""Question-query-question consistency filtering by embedding similarity."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from .llm import EmbeddingVector, LLMClient, ProviderAuthError, ProviderError

if TYPE_CHECKING:
    from .generate import CandidateQuestion, Explanation

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.85
DEFAULT_TOP_K = 5


def cosine_similarity(a: EmbeddingVector | Sequence[float], b: EmbeddingVector | Sequence[float]) -> float:
    va = a.values if isinstance(a, EmbeddingVector) else a
    vb = b.values if isinstance(b, EmbeddingVector) else b
    if len(va) != len(vb):
        raise ValueError(f"dimension mismatch: {len(va)} vs {len(vb)}")
    norm_a = math.sqrt(math.fsum(x * x for x in va))
    norm_b = math.sqrt(math.fsum(y * y for y in vb))
    if norm_a == 0 or norm_b == 0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    dot = math.fsum(x * y for x, y in zip(va, vb))
    return max(-1.0, min(1.0, dot / (norm_a * norm_b)))


@dataclass(frozen=True)
class ValidationVerdict:
    candidate: CandidateQuestion
    similarity: float | None
    accepted: bool
    rank: int | None = None
    error: str | None = None

    def to_record(self) -> dict:
        c = self.candidate
        return {
            "question": c.question,
            "query": c.query,
            "db_id": c.db_id,
            "provenance": c.provenance,
            "similarity": self.similarity,
            "accepted": self.accepted,
            "rank": self.rank,
            "error": self.error,
        }


def cycle_validate(
    query: str,
    candidates: Sequence[CandidateQuestion],
    expl2: Explanation,
    client: LLMClient,
    lam: float = DEFAULT_LAMBDA,
    k: int = DEFAULT_TOP_K,
) -> list[ValidationVerdict]:
    """Score each candidate against an independent explanation of ``query``.

    Candidates with similarity >= ``lam`` are accepted, then only the ``k``
    most similar survive (ties go to the earlier candidate). One verdict is
    returned per candidate, in input order.
    """
    from .generate import FOR_VALIDATE

    if expl2.role != FOR_VALIDATE:
        raise ValueError(f"validation needs a {FOR_VALIDATE} explanation, got {expl2.role}")
    if not 0 < lam <= 1:
        raise ValueError(f"lambda must be in (0, 1], got {lam}")
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")

    reference = client.embed(expl2.text)
    scored: list[tuple[float | None, str | None]] = []
    for candidate in candidates:
        try:
            scored.append((cosine_similarity(reference, client.embed(candidate.question)), None))
        except ProviderAuthError:
            raise
        except (ProviderError, ValueError) as exc:
            log.warning("validation failed for %r: %s", candidate.question, exc)
            scored.append((None, f"{type(exc).__name__}: {exc}"))

    passing = [i for i, (sim, _) in enumerate(scored) if sim is not None and sim >= lam]
    passing.sort(key=lambda i: (-scored[i][0], i))
    ranks = {i: r for r, i in enumerate(passing[:k], start=1)}

    verdicts = []
    for i, candidate in enumerate(candidates):
        sim, error = scored[i]
        rank = ranks.get(i)
        verdicts.append(
            ValidationVerdict(
                replace(candidate, similarity=sim, validation_explanation=expl2),
                sim,
                rank is not None,
                rank,
                error,
            )
        )
    return verdicts


def accepted(verdicts: Iterable[ValidationVerdict]) -> list[CandidateQuestion]:
    """Accepted candidates ordered by rank."""
    kept = [v for v in verdicts if v.accepted]
    kept.sort(key=lambda v: v.rank)
    return [v.candidate for v in kept]


def write_audit(verdicts: Iterable[ValidationVerdict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for verdict in verdicts:
            fh.write(json.dumps(verdict.to_record(), sort_keys=True, ensure_ascii=False) + "\n")
