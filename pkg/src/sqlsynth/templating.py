"""Cross-schema common vocabulary and question templates with schema words masked."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .ingest import DatabaseSchema, ExamplePair
from .text import is_number, is_punctuation, tokenize

MASK = "MASK"


@dataclass(frozen=True)
class CommonVocabulary:
    fractions: Mapping[str, float]
    schema_count: int
    threshold: float = 0.5
    mask_numbers: bool = True

    def fraction(self, word: str) -> float:
        return self.fractions.get(word.lower(), 0.0)

    def keeps(self, token: str) -> bool:
        if is_punctuation(token):
            return True
        if self.mask_numbers and is_number(token):
            return False
        return self.fraction(token) > self.threshold

    def with_threshold(self, threshold: float) -> CommonVocabulary:
        return CommonVocabulary(self.fractions, self.schema_count, threshold, self.mask_numbers)

    def to_dict(self) -> dict:
        return {
            "schema_count": self.schema_count,
            "threshold": self.threshold,
            "mask_numbers": self.mask_numbers,
            "fractions": dict(sorted(self.fractions.items())),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> CommonVocabulary:
        raw = json.loads(Path(path).read_text())
        return cls(raw["fractions"], raw["schema_count"], raw["threshold"], raw.get("mask_numbers", True))


def build_common_vocabulary(
    examples: Sequence[ExamplePair],
    catalog: Mapping[str, DatabaseSchema] | None = None,
    threshold: float = 0.5,
    *,
    mask_numbers: bool = True,
) -> CommonVocabulary:
    """Fraction of databases whose questions use each (lowercased) word."""
    if not examples:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if catalog is not None:
        missing = sorted({e.db_id for e in examples} - set(catalog))
        if missing:
            raise ValueError(f"db_ids missing from catalog: {', '.join(missing)}")
    words_by_db: dict[str, set[str]] = {}
    for example in examples:
        words = words_by_db.setdefault(example.db_id, set())
        words.update(t.lower() for t in tokenize(example.question) if not is_punctuation(t))
    counts: dict[str, int] = {}
    for words in words_by_db.values():
        for word in words:
            counts[word] = counts.get(word, 0) + 1
    total = len(words_by_db)
    return CommonVocabulary({w: c / total for w, c in counts.items()}, total, threshold, mask_numbers)


@dataclass(frozen=True)
class QuestionTemplate:
    tokens: tuple[str, ...]
    source: ExamplePair | None = None
    source_distance: float | None = None
    mask_count: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        if not self.tokens:
            raise ValueError("a template needs at least one token")
        for a, b in zip(self.tokens, self.tokens[1:]):
            if a == MASK and b == MASK:
                raise ValueError("adjacent MASK tokens in template")
        object.__setattr__(self, "mask_count", sum(t == MASK for t in self.tokens))

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    @property
    def anchors(self) -> list[str]:
        return [t for t in self.tokens if t != MASK]

    def __str__(self) -> str:
        return self.text


def mask_schema_tokens(
    question: str,
    vocab: CommonVocabulary,
    *,
    source: ExamplePair | None = None,
    source_distance: float | None = None,
) -> QuestionTemplate:
    if not question.strip():
        raise ValueError("question is empty")
    out: list[str] = []
    for token in tokenize(question):
        if vocab.keeps(token):
            out.append(token)
        elif not out or out[-1] != MASK:
            out.append(MASK)
    return QuestionTemplate(tuple(out), source, source_distance)
