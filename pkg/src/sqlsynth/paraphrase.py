"""Paraphrase-based synthesis: schema-aware paraphrasing and crafted SQL templates."""

from __future__ import annotations

import logging
import re
import sqlite3
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import yaml

from .algebra import SqlError, parse_sql
from .generate import PARAPHRASE_CRAFTED, PARAPHRASE_SCHEMA, CandidateQuestion, Explanation
from .ingest import DatabaseSchema, ExamplePair, execute
from .llm import ChatRequest, LLMClient, ProviderAuthError, ProviderError, render_prompt
from .schema_text import render_schema
from .text import first_sentence

log = logging.getLogger(__name__)

HOLE_KINDS = ("table", "column", "agg", "value", "number", "op")
TIERS = ("basic", "complex")
DESCRIPTION = "description"
_HOLE = re.compile(r"\{([a-z]+_\d+)\}")
_HOLE_HELP = {
    "table": "a table",
    "column": "a column",
    "agg": "an aggregate function, one of COUNT, SUM, AVG, MIN, MAX",
    "value": "a value",
    "number": "a small positive integer",
    "op": "a comparison operator, one of =, !=, <, >, <=, >=",
}


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class Hole:
    name: str
    kind: str
    owner: str | None = None

    def describe(self) -> str:
        text = _HOLE_HELP[self.kind]
        return f"{self.name}: {text} of {self.owner}" if self.owner else f"{self.name}: {text}"


@dataclass(frozen=True)
class SqlTemplate:
    template_id: str
    tier: str
    shape: str
    holes: tuple[Hole, ...]

    def __post_init__(self) -> None:
        if self.tier not in TIERS:
            raise TemplateError(f"{self.template_id}: unknown tier {self.tier!r}")
        in_shape = set(_HOLE.findall(self.shape))
        declared = {h.name for h in self.holes}
        if in_shape != declared:
            raise TemplateError(
                f"{self.template_id}: holes in shape {sorted(in_shape)} differ from declared {sorted(declared)}"
            )
        for hole in self.holes:
            if hole.kind not in HOLE_KINDS:
                raise TemplateError(f"{self.template_id}: hole {hole.name} has unknown kind {hole.kind!r}")
            if hole.owner is not None and hole.owner not in declared:
                raise TemplateError(f"{self.template_id}: hole {hole.name} refers to unknown {hole.owner!r}")

    @property
    def prompt_shape(self) -> str:
        # braces would read as unbound prompt placeholders
        return _HOLE.sub(lambda m: f"[{m.group(1)}]", self.shape)

    @property
    def holes_text(self) -> str:
        return "\n".join(h.describe() for h in self.holes)


def _parse_hole(name: str, spec: str) -> Hole:
    kind, _, owner = spec.partition(" of ")
    kind = kind.strip()
    if not name.startswith(kind + "_"):
        raise TemplateError(f"hole {name!r} declared as {kind!r}")
    return Hole(name, kind, owner.strip() or None)


def load_template_pack(path: str | Path | None = None) -> list[SqlTemplate]:
    """Read a template pack; the bundled pack is used when ``path`` is None."""
    if path is None:
        text = resources.files("sqlsynth").joinpath("data/sql_templates.yaml").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    raw = yaml.safe_load(text)
    templates = []
    for entry in raw["templates"]:
        holes = tuple(_parse_hole(name, spec) for name, spec in entry["holes"].items())
        templates.append(SqlTemplate(entry["id"], entry["tier"], entry["shape"], holes))
    ids = [t.template_id for t in templates]
    if len(ids) != len(set(ids)):
        raise TemplateError("duplicate template ids in pack")
    return templates


@dataclass(frozen=True)
class CraftedQuery:
    query: str
    template: SqlTemplate
    db_id: str
    status: str  # "ok" | "error"
    error: str | None = None
    row_count: int | None = None
    description: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_record(self) -> dict:
        return {
            "query": self.query,
            "template_id": self.template.template_id,
            "tier": self.template.tier,
            "db_id": self.db_id,
            "status": self.status,
            "error": self.error,
            "row_count": self.row_count,
            "description": self.description,
        }


_FENCE = re.compile(r"```(?:sql)?\s*(.*?)```", re.S | re.I)


def clean_sql(text: str) -> str:
    match = _FENCE.search(text)
    if match:
        text = match.group(1)
    text = re.sub(r"^\s*SQL:\s*", "", text.strip(), flags=re.I)
    return " ".join(text.split()).rstrip(";").strip()


def craft_and_fill_sql(
    schema: DatabaseSchema,
    templates: Sequence[SqlTemplate],
    client: LLMClient,
    db: sqlite3.Connection,
    *,
    timeout: float = 5.0,
    drop_empty: bool = False,
    temperature: float = 0.7,
) -> list[CraftedQuery]:
    """Fill each template against the schema and execute the result.

    Every template yields one record. Records whose SQL fails to parse,
    fails to execute, or times out carry status "error"; use :func:`retained`
    to keep only the usable ones.
    """
    schema_text = render_schema(schema)
    out = []
    for template in templates:
        bundle = render_prompt(
            "fill_sql_template",
            {"schema": schema_text, "holes": template.holes_text, "sql_template": template.prompt_shape},
        )
        sql = ""
        try:
            sql = clean_sql(client.chat(ChatRequest(bundle, temperature=temperature)).text)
            if not sql:
                raise ValueError("empty fill")
            parse_sql(sql, schema)
            rows = execute(db, sql, timeout)
        except ProviderAuthError:
            raise
        except (ProviderError, SqlError, sqlite3.Error, ValueError) as exc:
            out.append(CraftedQuery(sql, template, schema.db_id, "error", f"{type(exc).__name__}: {exc}"))
            continue
        if drop_empty and rows == 0:
            out.append(CraftedQuery(sql, template, schema.db_id, "error", "empty result", 0))
            continue
        out.append(CraftedQuery(sql, template, schema.db_id, "ok", None, rows))
    return out


def retained(crafted: Sequence[CraftedQuery]) -> list[CraftedQuery]:
    return [c for c in crafted if c.ok]


def _lines(text: str, n: int) -> list[str]:
    out = []
    for line in text.splitlines():
        line = re.sub(r"^\s*(?:\d+[.)]|[-*•])\s*", "", line).strip().strip('"').strip()
        if line and line not in out:
            out.append(line)
    return out[:n]


def extract_related_tables(
    question: str, schema: DatabaseSchema, client: LLMClient, *, temperature: float = 0.0
) -> list[str]:
    """Tables the provider deems relevant; unknown names are dropped, none falls back to all."""
    bundle = render_prompt("extract_tables", {"tables": ", ".join(schema.table_names), "question": question})
    reply = client.chat(ChatRequest(bundle, temperature=temperature)).text
    picked: list[str] = []
    for name in re.split(r"[,\n]", reply):
        name = name.strip().strip("`'\"").strip()
        if not name:
            continue
        table = schema.table(name)
        if table is None:
            log.info("%s: dropping table %r not in schema", schema.db_id, name)
        elif table.name not in picked:
            picked.append(table.name)
    if not picked:
        log.info("%s: no valid tables extracted for %r, using all tables", schema.db_id, question)
        return list(schema.table_names)
    return picked


def paraphrase_with_schema(
    example: ExamplePair,
    catalog: Mapping[str, DatabaseSchema],
    client: LLMClient,
    n: int,
    *,
    temperature: float = 0.7,
) -> list[CandidateQuestion]:
    schema = catalog[example.db_id]
    tables = extract_related_tables(example.question, schema, client)
    columns = [f"{t}.{c}" for t in tables for c in schema.table(t).column_names]
    if n <= 0:
        return []
    bundle = render_prompt(
        "paraphrase_with_schema",
        {"question": example.question, "tables": ", ".join(tables), "columns": ", ".join(columns), "n": n},
    )
    reply = client.chat(ChatRequest(bundle, temperature=temperature)).text
    return [
        CandidateQuestion(line, example.query, example.db_id, PARAPHRASE_SCHEMA)
        for line in _lines(reply, n)
    ]


def describe_and_paraphrase(
    crafted: CraftedQuery, client: LLMClient, n: int, *, temperature: float = 0.7
) -> list[CandidateQuestion]:
    if not crafted.ok:
        raise ValueError("only successfully executed crafted queries can be described")
    if n <= 0:
        return []
    bundle = render_prompt("describe_query", {"query": crafted.query})
    description = first_sentence(client.chat(ChatRequest(bundle, temperature=temperature)).text.strip())
    if not description:
        raise ProviderError(f"empty description for {crafted.query}")
    described = replace(crafted, description=description)
    bundle = render_prompt("paraphrase_description", {"description": description, "n": n})
    reply = client.chat(ChatRequest(bundle, temperature=temperature)).text
    return [
        CandidateQuestion(
            line,
            described.query,
            described.db_id,
            PARAPHRASE_CRAFTED,
            explanation=Explanation(description, DESCRIPTION, described.query),
            source_id=described.template.template_id,
        )
        for line in _lines(reply, n)
    ]
