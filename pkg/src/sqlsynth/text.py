"""Word tokenization shared by template masking and BLEU scoring."""

from __future__ import annotations

import re
import string

PUNCTUATION = frozenset(string.punctuation + "“”‘’«»…")

_NUMBER = re.compile(r"^[+-]?(\d+([.,]\d+)*|\.\d+)(%|st|nd|rd|th)?$")


def tokenize(text: str) -> list[str]:
    """Split on whitespace, peeling leading/trailing punctuation into separate tokens.

    Casing is preserved; callers lowercase when comparing.
    """
    tokens: list[str] = []
    for chunk in text.split():
        head: list[str] = []
        tail: list[str] = []
        start, end = 0, len(chunk)
        while start < end and chunk[start] in PUNCTUATION:
            head.append(chunk[start])
            start += 1
        while end > start and chunk[end - 1] in PUNCTUATION:
            tail.append(chunk[end - 1])
            end -= 1
        tokens.extend(head)
        if start < end:
            tokens.append(chunk[start:end])
        tokens.extend(reversed(tail))
    return tokens


def is_punctuation(token: str) -> bool:
    return bool(token) and all(ch in PUNCTUATION for ch in token)


def is_number(token: str) -> bool:
    return bool(_NUMBER.match(token))


def first_sentence(text: str) -> str:
    """Cut text at the first sentence terminal that is followed by more text."""
    text = " ".join(text.strip().split())
    match = re.search(r"[.!?](?=\s+\S)", text)
    if match:
        return text[: match.end()]
    return text
