"""Prompt catalog: versioned text assets with ``{placeholder}`` slots."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

PROMPTS_DIR = Path(__file__).parent / "prompts"

TEMPLATE_IDS = (
    "explain_for_fill",
    "explain_for_validate",
    "fill_template",
    "paraphrase_with_schema",
    "extract_tables",
    "fill_sql_template",
    "describe_query",
    "paraphrase_description",
)

PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    version: str
    text: str

    @property
    def placeholders(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(PLACEHOLDER.findall(self.text)))

    @property
    def digest(self) -> str:
        return hashlib.sha256(f"{self.template_id}\n{self.version}\n{self.text}".encode()).hexdigest()


@lru_cache(maxsize=None)
def load_template(template_id: str) -> PromptTemplate:
    if template_id not in TEMPLATE_IDS:
        raise PromptError(f"unknown template id {template_id!r}")
    raw = (PROMPTS_DIR / f"{template_id}.txt").read_text(encoding="utf-8")
    header, _, body = raw.partition("\n---\n")
    meta = dict(line.split(":", 1) for line in header.splitlines() if ":" in line)
    return PromptTemplate(template_id, meta.get("version", "0").strip(), body.rstrip("\n"))


@dataclass(frozen=True)
class PromptBundle:
    template_id: str
    template_version: str
    template_digest: str
    bindings: Mapping[str, str]
    text: str

    def __hash__(self) -> int:
        return hash((self.template_digest, self.text))


def render_prompt(template_id: str, bindings: Mapping[str, object]) -> PromptBundle:
    """Substitute bindings verbatim into a catalog template.

    Binding values are inserted in one pass, so braces inside them are never
    re-interpreted as placeholders.
    """
    template = load_template(template_id)
    missing = [p for p in template.placeholders if p not in bindings]
    if missing:
        raise PromptError(f"{template_id}: missing binding(s) {', '.join(missing)}")
    values = {k: str(bindings[k]) for k in template.placeholders}
    text = PLACEHOLDER.sub(lambda m: values[m.group(1)], template.text)
    return PromptBundle(
        template_id, template.version, template.digest, MappingProxyType(dict(values)), text
    )
