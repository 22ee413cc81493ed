"""SQL text <-> relational-algebra trees, anonymization and constant sites."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

from .emit import EmitError, emit_sql, quote_string
from .parser import SqlError, SqlSyntaxError, UnresolvedColumnError, UnsupportedSqlError, parse_sql
from .tree import (
    ALPHABET_VERSION,
    AlgebraNode,
    AlgebraTree,
    anonymize,
    literal_parts,
    make_literal,
    node_at,
    replace_at,
)

if TYPE_CHECKING:
    from ..ingest import ColumnRef, DatabaseSchema

__all__ = [
    "ALPHABET_VERSION",
    "AlgebraNode",
    "AlgebraTree",
    "ConstantSite",
    "EmitError",
    "SqlError",
    "SqlSyntaxError",
    "UnresolvedColumnError",
    "UnsupportedSqlError",
    "anonymize",
    "constant_sites",
    "emit_sql",
    "literal_parts",
    "make_literal",
    "node_at",
    "parse_sql",
    "quote_string",
    "replace_at",
]

_COMPARED = frozenset(
    ["Eq", "Neq", "Lt", "Gt", "Le", "Ge", "Like", "NotLike", "Between", "NotBetween", "NestedIn", "NestedNotIn"]
)


@dataclass(frozen=True)
class ConstantSite:
    path: tuple[int, ...]
    column: ColumnRef
    value: str
    kind: str  # "num" | "str"


def constant_sites(tree: AlgebraTree, schema: DatabaseSchema) -> list[ConstantSite]:
    """Literals compared directly against a schema column, in pre-order."""
    from ..ingest import ColumnRef

    def column_of(node: AlgebraNode) -> ColumnRef | None:
        if not node.label.startswith("Column:") or node.label == "Column:*":
            return None
        ident = node.label.split(":", 1)[1]
        if "." not in ident:
            return None
        table_name, column = ident.rsplit(".", 1)
        table = schema.table(table_name)
        if table is None or table.column(column) is None:
            return None  # derived-table or alias reference
        return ColumnRef(table.name, table.column(column))

    sites: list[ConstantSite] = []

    def visit(node: AlgebraNode, path: tuple[int, ...]) -> None:
        if node.label in _COMPARED:
            columns = [column_of(c) for c in node.children]
            anchor = next((c for c in columns if c is not None), None)
            if anchor is not None:
                for i, child in enumerate(node.children):
                    if child.label.startswith("Literal:"):
                        kind, value = literal_parts(child)
                        sites.append(ConstantSite(path + (i,), anchor, value, kind))
        for i, child in enumerate(node.children):
            visit(child, path + (i,))

    visit(tree.root, ())
    return sites
