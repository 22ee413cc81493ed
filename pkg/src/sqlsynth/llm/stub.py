"""Deterministic offline provider.

Every output is a pure function of the prompt bindings, so whole pipeline
runs are reproducible without network access. Output quality is not the
point; exercising every contract downstream of the provider is.
"""

from __future__ import annotations

import hashlib
import math
import re
from typing import Callable, Mapping

from ..algebra import AlgebraNode, SqlError, literal_parts, parse_sql
from ..algebra.tree import SET_OPS
from ..text import is_punctuation, tokenize
from .providers import ChatRequest, ProviderError

STUB_DIMENSION = 256

_AGG_WORDS = {"count": "number of", "sum": "total", "avg": "average", "min": "minimum", "max": "maximum"}
_CMP_WORDS = {
    "Eq": "is",
    "Neq": "is not",
    "Gt": "is greater than",
    "Lt": "is less than",
    "Ge": "is at least",
    "Le": "is at most",
    "Like": "matches",
    "NotLike": "does not match",
}
_SET_WORDS = {"Union": "together with", "Union:all": "together with", "Except": "except", "Intersect": "that also"}


def trigram_embedding(text: str, dimension: int = STUB_DIMENSION) -> list[float]:
    """Hash character trigrams of the lowercased, space-padded text into an L2-normalized vector."""
    padded = " " + " ".join(text.lower().split()) + " "
    vec = [0.0] * dimension
    for i in range(len(padded) - 2):
        digest = hashlib.blake2b(padded[i : i + 3].encode("utf-8"), digest_size=8).digest()
        vec[int.from_bytes(digest, "big") % dimension] += 1.0
    norm = math.sqrt(sum(v * v for v in vec))
    return [v / norm for v in vec] if norm else vec


def _words(identifier: str) -> str:
    return identifier.replace("_", " ").lower()


def _column_words(node: AlgebraNode) -> str:
    ident = node.label.split(":", 1)[1]
    if ident == "*":
        return "all columns"
    return _words(ident.rsplit(".", 1)[-1])


def _value(node: AlgebraNode) -> str:
    kind, value = literal_parts(node)
    return value if kind == "num" else value.strip("%")


def _tables(rel: AlgebraNode) -> list[str]:
    if rel.label.startswith("Table:"):
        return [_words(rel.label.split(":", 1)[1])]
    if rel.label.startswith("Join"):
        return _tables(rel.children[0]) + _tables(rel.children[1])
    return ["derived"]


def _phrase(node: AlgebraNode) -> str:
    label = node.label
    if label.startswith("Column:"):
        return _column_words(node)
    if label.startswith("Literal:"):
        return _value(node)
    if label.startswith("Agg:"):
        fn = label.split(":", 1)[1]
        arg = node.children[0]
        distinct = arg.label == "Distinct"
        if distinct:
            arg = arg.children[0]
        if fn == "count" and arg.label == "Column:*":
            return "number of rows"
        return f"{_AGG_WORDS[fn]} {'distinct ' if distinct else ''}{_phrase(arg)}"
    if label.startswith("Arith:"):
        word = {"+": "plus", "-": "minus", "*": "times", "/": "divided by"}[label[-1]]
        return f"{_phrase(node.children[0])} {word} {_phrase(node.children[1])}"
    if label in _CMP_WORDS:
        return f"{_phrase(node.children[0])} {_CMP_WORDS[label]} {_phrase(node.children[1])}"
    if label in ("Between", "NotBetween"):
        a, lo, hi = (_phrase(c) for c in node.children)
        return f"{a} is {'not ' if label == 'NotBetween' else ''}between {lo} and {hi}"
    if label in ("NestedIn", "NestedNotIn"):
        neg = "not " if label == "NestedNotIn" else ""
        rest = node.children[1:]
        if len(rest) == 1 and rest[0].is_relational:
            return f"{_phrase(node.children[0])} is {neg}among the {_core(rest[0])}"
        return f"{_phrase(node.children[0])} is {neg}one of {', '.join(_phrase(c) for c in rest)}"
    if label in ("IsNull", "IsNotNull"):
        return f"{_phrase(node.children[0])} is {'present' if label == 'IsNotNull' else 'missing'}"
    if label in ("And", "Or"):
        return f"{_phrase(node.children[0])} {label.lower()} {_phrase(node.children[1])}"
    if label == "Not":
        return f"not {_phrase(node.children[0])}"
    if node.is_relational:
        return f"the {_core(node)}"
    return label.lower()


def _core(node: AlgebraNode) -> str:
    """Describe a query without the leading verb."""
    if node.label in SET_OPS:
        return f"{_core(node.children[0])} {_SET_WORDS[node.label]} the {_core(node.children[1])}"
    limit = order = None
    if node.label == "Limit":
        limit = literal_parts(node.children[1])[1]
        node = node.children[0]
    if node.label == "OrderBy":
        order = node.children[:-1]
        node = node.children[-1]
    items, rel = node.children[:-1], node.children[-1]
    having = where = group = None
    if rel.label == "Filter" and len(rel.children) == 2 and rel.children[1].label == "GroupBy":
        having, rel = rel.children
    if rel.label == "GroupBy":
        group, rel = rel.children[:-1], rel.children[-1]
    if rel.label == "Filter" and len(rel.children) == 2:
        where, rel = rel.children
    tables = _tables(rel)
    noun = "table" if len(tables) == 1 else "tables"
    parts = [f"{' and '.join(_phrase(i) for i in items)} of the {' and '.join(tables)} {noun}"]
    if where is not None:
        parts.append(f"where {_phrase(where)}")
    if group is not None:
        parts.append(f"for each {' and '.join(_phrase(k) for k in group)}")
    if having is not None:
        parts.append(f"having {_phrase(having)}")
    if order is not None:
        keys = [f"{_phrase(k.children[0])} {'descending' if k.label == 'Desc' else 'ascending'}" for k in order]
        parts.append(f"ordered by {' and '.join(keys)}")
    if limit is not None:
        parts.append(f"limited to {limit} {'row' if limit == '1' else 'rows'}")
    return " ".join(parts)


def explain_sql(query: str) -> str:
    """Rule-based one-sentence rendering of a query."""
    try:
        root = parse_sql(query).root
    except SqlError:
        return "return the result of the query"
    return f"return the {_core(root)}"


def fill_question(template: str, explanation: str) -> str:
    """Replace each MASK with the next share of explanation words the template lacks."""
    tokens = template.split()
    present = {t.lower() for t in tokens if t != "MASK"}
    fresh = [w for w in tokenize(explanation) if not is_punctuation(w) and w.lower() not in present]
    masks = sum(t == "MASK" for t in tokens)
    if not masks:
        return template
    base, extra = divmod(len(fresh), masks)
    out, pos, seen = [], 0, 0
    for token in tokens:
        if token != "MASK":
            out.append(token)
            continue
        take = base + (1 if seen < extra else 0)
        seen += 1
        chunk = fresh[pos : pos + take]
        pos += take
        out.append(" ".join(chunk) if chunk else "MASK")
    return " ".join(out)


_PARAPHRASE_FRAMES = (
    "{q}",
    "Could you tell me {l}",
    "I would like to know {l}",
    "Please find {l}",
    "Tell me {l}",
    "Can you show {l}",
)

_QUESTION_FRAMES = (
    "What is the {d}?",
    "Show me the {d}.",
    "Can you list the {d}?",
    "Find the {d}.",
    "Tell me the {d}.",
    "Which values give the {d}?",
)


def paraphrases(question: str, n: int) -> list[str]:
    question = question.strip()
    lowered = question[:1].lower() + question[1:]
    out = []
    for i in range(n):
        frame = _PARAPHRASE_FRAMES[i % len(_PARAPHRASE_FRAMES)]
        text = frame.format(q=question, l=lowered)
        if i >= len(_PARAPHRASE_FRAMES):
            text += f" (variant {i // len(_PARAPHRASE_FRAMES) + 1})"
        out.append(text)
    return out


def questions_from_description(description: str, n: int) -> list[str]:
    core = description.strip().rstrip(".")
    core = re.sub(r"^(return|returns|this query returns)\s+(the\s+)?", "", core, flags=re.I)
    out = []
    for i in range(n):
        text = _QUESTION_FRAMES[i % len(_QUESTION_FRAMES)].format(d=core)
        if i >= len(_QUESTION_FRAMES):
            text = text[:-1] + f" (variant {i // len(_QUESTION_FRAMES) + 1})" + text[-1]
        out.append(text)
    return out


def extract_tables(question: str, tables: str) -> str:
    words = {w.lower() for w in tokenize(question)}
    stems = words | {w[:-1] for w in words if w.endswith("s")}
    picked = []
    for name in (t.strip() for t in tables.split(",")):
        parts = name.lower().replace("_", " ").split()
        if name and any(p in stems or p + "s" in words or p.rstrip("s") in stems for p in parts):
            picked.append(name)
    return ", ".join(picked)


_NUMERIC_TYPES = ("num", "int", "real", "float", "double", "decimal")


def fill_sql(schema_text: str, holes_text: str, template: str) -> str:
    """Bind holes to the first schema-valid choices, in declaration order."""
    from ..schema_text import parse_schema_text

    schema = parse_schema_text(schema_text)
    tables = schema.tables
    if not tables:
        raise ProviderError("stub: schema text lists no tables")
    specs = []
    for line in holes_text.splitlines():
        name, _, desc = line.partition(": ")
        owner = desc.rsplit(" of ", 1)[1] if " of " in desc else None
        specs.append((name.strip(), owner))
    bound: dict[str, str] = {}
    table_of: dict[str, object] = {}
    type_of: dict[str, str] = {}
    used: dict[str, int] = {}
    table_count = 0
    for name, owner in specs:
        kind = name.rsplit("_", 1)[0]
        if kind == "table":
            table = tables[table_count % len(tables)]
            table_count += 1
            table_of[name] = table
            bound[name] = table.name
        elif kind == "column":
            table = table_of.get(owner) or tables[0]
            k = used.get(table.name, 0)
            used[table.name] = k + 1
            col, col_type = table.columns[k % len(table.columns)]
            bound[name] = col
            type_of[name] = col_type
        elif kind == "value":
            col_type = type_of.get(owner, "text").lower()
            bound[name] = "1" if any(t in col_type for t in _NUMERIC_TYPES) else "'a'"
        elif kind == "number":
            bound[name] = "1"
        elif kind == "agg":
            bound[name] = "COUNT"
        elif kind == "op":
            bound[name] = "="
        else:
            raise ProviderError(f"stub: unknown hole kind in {name!r}")
    return re.sub(r"\[([a-z]+_\d+)\]", lambda m: bound.get(m.group(1), m.group(0)), template)


Handler = Callable[[Mapping[str, str]], str]


class StubProvider:
    name = "stub"
    chat_model = "stub-chat-1"
    embed_model = "stub-trigram-256"
    dimension = STUB_DIMENSION

    def __init__(self, overrides: Mapping[str, Handler] | None = None):
        self.overrides = dict(overrides or {})

    def _handle(self, template_id: str, b: Mapping[str, str]) -> str:
        if template_id in ("explain_for_fill", "explain_for_validate", "describe_query"):
            return explain_sql(b["query"]) + "."
        if template_id == "fill_template":
            return fill_question(b["question_template"], b["explanation"])
        if template_id == "extract_tables":
            return extract_tables(b["question"], b["tables"])
        if template_id == "paraphrase_with_schema":
            return "\n".join(paraphrases(b["question"], int(b["n"])))
        if template_id == "fill_sql_template":
            return fill_sql(b["schema"], b["holes"], b["sql_template"])
        if template_id == "paraphrase_description":
            return "\n".join(questions_from_description(b["description"], int(b["n"])))
        raise ProviderError(f"stub has no rule for template {template_id!r}")

    def complete(self, request: ChatRequest) -> tuple[str, str]:
        bundle = request.prompt
        handler = self.overrides.get(bundle.template_id)
        if handler is not None:
            return handler(bundle.bindings), "stop"
        return self._handle(bundle.template_id, bundle.bindings), "stop"

    def embed(self, text: str) -> list[float]:
        return trigram_embedding(text, self.dimension)
