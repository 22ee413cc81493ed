"""Plain-text rendering of schemas for prompts, and the inverse used by the stub."""

from __future__ import annotations

from typing import Iterable

from .ingest import ColumnRef, DatabaseSchema, Table


def render_schema(schema: DatabaseSchema, tables: Iterable[str] | None = None) -> str:
    wanted = None if tables is None else {t.lower() for t in tables}
    lines = []
    for table in schema.tables:
        if wanted is not None and table.name.lower() not in wanted:
            continue
        cols = ", ".join(f"{name} ({col_type})" for name, col_type in table.columns)
        lines.append(f"{table.name}: {cols}")
    for a, b in schema.foreign_keys:
        if wanted is None or (a.table.lower() in wanted and b.table.lower() in wanted):
            lines.append(f"foreign key: {a} = {b}")
    return "\n".join(lines)


def parse_schema_text(text: str, db_id: str = "prompt") -> DatabaseSchema:
    tables = []
    foreign = []
    for line in text.splitlines():
        head, _, rest = line.partition(": ")
        if not rest:
            continue
        if head == "foreign key":
            left, _, right = rest.partition(" = ")
            a_table, a_col = left.split(".", 1)
            b_table, b_col = right.split(".", 1)
            foreign.append((ColumnRef(a_table, a_col), ColumnRef(b_table, b_col)))
            continue
        columns = []
        for part in rest.split(", "):
            name, _, col_type = part.partition(" (")
            columns.append((name, col_type.rstrip(")") or "text"))
        tables.append(Table(head, tuple(columns)))
    return DatabaseSchema(db_id, tuple(tables), (), tuple(foreign))
