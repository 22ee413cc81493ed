"""Sentence BLEU, SelfBLEU and a quality/diversity report over question sets."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .text import tokenize

MAX_ORDER = 4
SMOOTHING_METHODS = ("add_one_zero", "add_one_all", "none")


def bleu_tokens(text: str) -> list[str]:
    return [t.lower() for t in tokenize(text)]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_length(cand_len: int, ref_lens: Sequence[int]) -> int:
    return min(ref_lens, key=lambda r: (abs(r - cand_len), r))


def bleu(candidate: str, references: Sequence[str], smoothing: str = "add_one_zero") -> float:
    """Sentence-level BLEU-4 on a 0-100 scale.

    ``add_one_zero`` adds one to numerator and denominator of an n-gram
    precision (n >= 2) only when it has no matches; ``add_one_all`` does so
    for every n >= 2; ``none`` leaves zero precisions at zero.
    """
    if smoothing not in SMOOTHING_METHODS:
        raise ValueError(f"unknown smoothing {smoothing!r}; choose from {SMOOTHING_METHODS}")
    cand = bleu_tokens(candidate)
    refs = [bleu_tokens(r) for r in references]
    if not cand:
        raise ValueError("candidate is empty")
    if not refs or any(not r for r in refs):
        raise ValueError("references must be a non-empty list of non-empty texts")

    log_sum = 0.0
    for n in range(1, MAX_ORDER + 1):
        counts = _ngrams(cand, n)
        total = sum(counts.values())
        max_ref: Counter = Counter()
        for ref in refs:
            max_ref |= _ngrams(ref, n)
        matches = sum(min(c, max_ref[g]) for g, c in counts.items())
        if n >= 2 and (smoothing == "add_one_all" or (smoothing == "add_one_zero" and matches == 0)):
            matches, total = matches + 1, total + 1
        if matches == 0 or total == 0:
            return 0.0
        log_sum += math.log(matches / total) / MAX_ORDER

    ref_len = _closest_ref_length(len(cand), [len(r) for r in refs])
    bp = 1.0 if len(cand) > ref_len else math.exp(1 - ref_len / len(cand))
    return min(100.0, 100.0 * bp * math.exp(log_sum))


def self_bleu(members: Sequence[str], smoothing: str = "add_one_zero") -> float:
    """Mean BLEU of each member against the others; lower means more diverse."""
    if len(members) < 2:
        raise ValueError("self_bleu needs at least two members")
    scores = [
        bleu(m, [o for j, o in enumerate(members) if j != i], smoothing)
        for i, m in enumerate(members)
    ]
    return math.fsum(scores) / len(scores)


@dataclass
class QualityReport:
    per_query: list[dict] = field(default_factory=list)
    mean_bleu: float | None = None
    mean_self_bleu: float | None = None
    smoothing: str = "add_one_zero"

    @property
    def diversity(self) -> float | None:
        return None if self.mean_self_bleu is None else 100.0 - self.mean_self_bleu

    def to_dict(self) -> dict:
        return {
            "smoothing": self.smoothing,
            "queries": len(self.per_query),
            "mean_bleu": self.mean_bleu,
            "mean_self_bleu": self.mean_self_bleu,
            "diversity": self.diversity,
            "per_query": self.per_query,
        }

    def to_table(self) -> str:
        def fmt(x):
            return "-" if x is None else f"{x:.1f}"

        rows = [("query", "size", "best BLEU", "SelfBLEU")]
        for row in self.per_query:
            rows.append((row["query"], str(row["size"]), fmt(row["best_bleu"]), fmt(row["self_bleu"])))
        width = min(60, max(len(r[0]) for r in rows))
        lines = [
            f"{r[0][:width]:<{width}}  {r[1]:>4}  {r[2]:>9}  {r[3]:>8}" for r in rows
        ]
        lines.append("")
        lines.append(f"mean BLEU       {fmt(self.mean_bleu)}")
        lines.append(f"mean SelfBLEU   {fmt(self.mean_self_bleu)}")
        lines.append(f"100-SelfBLEU    {fmt(self.diversity)}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def evaluate(
    sets: Mapping[str, tuple[str, Sequence[str]]], smoothing: str = "add_one_zero"
) -> QualityReport:
    """Score candidate sets keyed by query; each value is (gold question, candidates).

    Quality is the best BLEU of any candidate against the gold question.
    SelfBLEU is averaged over sets with at least two candidates.
    """
    report = QualityReport(smoothing=smoothing)
    bests, selfs = [], []
    for query in sorted(sets):
        gold, candidates = sets[query]
        candidates = [c for c in candidates if c.strip()]
        best = max((bleu(c, [gold], smoothing) for c in candidates), default=None)
        sb = self_bleu(candidates, smoothing) if len(candidates) >= 2 else None
        if best is not None:
            bests.append(best)
        if sb is not None:
            selfs.append(sb)
        report.per_query.append({"query": query, "size": len(candidates), "best_bleu": best, "self_bleu": sb})
    report.mean_bleu = math.fsum(bests) / len(bests) if bests else None
    report.mean_self_bleu = math.fsum(selfs) / len(selfs) if selfs else None
    return report
