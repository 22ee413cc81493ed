"""Relational-algebra trees for SQL queries.

Labels are plain strings. Leaves carry their identity in the label before
anonymization (``Table:pets``, ``Column:pets.weight``, ``Literal:num:10``)
and a bare placeholder after (``TABLE``, ``COLUMN``, ``LITERAL:num``).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterator

# bump whenever labels or tree shapes change; cached distances depend on it
ALPHABET_VERSION = "1"

SET_OPS = ("Union", "Union:all", "Except", "Intersect")
RELATIONAL = frozenset(
    ["Project", "Project:distinct", "Filter", "Join", "Join:left", "GroupBy", "OrderBy", "Limit", *SET_OPS]
)
COMPARISONS = {
    "=": "Eq",
    "!=": "Neq",
    "<>": "Neq",
    "<": "Lt",
    ">": "Gt",
    "<=": "Le",
    ">=": "Ge",
}
PREDICATES = frozenset(
    ["Eq", "Neq", "Lt", "Gt", "Le", "Ge", "Like", "NotLike", "Between", "NotBetween",
     "IsNull", "IsNotNull", "NestedIn", "NestedNotIn"]
)
BOOLEAN = frozenset(["And", "Or", "Not"])
AGGREGATES = ("count", "sum", "avg", "min", "max")
ARITHMETIC = ("+", "-", "*", "/")

TABLE = "TABLE"
COLUMN = "COLUMN"
STAR = "Column:*"


@dataclass(frozen=True)
class AlgebraNode:
    label: str
    children: tuple[AlgebraNode, ...] = ()
    # table / derived-table / select-item alias as written
    alias: str | None = None
    # for Column leaves, the qualifier written before the dot
    qualifier: str | None = None

    @property
    def kind(self) -> str:
        """Label prefix before the first colon (``Table``, ``Agg``, ``Project``...)."""
        return self.label.split(":", 1)[0]

    @property
    def is_table(self) -> bool:
        return self.label == TABLE or self.label.startswith("Table:")

    @property
    def is_column(self) -> bool:
        return self.label == COLUMN or self.label.startswith("Column:")

    @property
    def is_literal(self) -> bool:
        return self.label.startswith(("Literal:", "LITERAL:"))

    @property
    def is_relational(self) -> bool:
        return self.label in RELATIONAL

    @cached_property
    def size(self) -> int:
        return 1 + sum(c.size for c in self.children)

    def walk(self) -> Iterator[AlgebraNode]:
        yield self
        for child in self.children:
            yield from child.walk()

    def sexpr(self) -> str:
        if not self.children:
            return self.label
        return "(" + " ".join([self.label, *(c.sexpr() for c in self.children)]) + ")"

    def __str__(self) -> str:
        return self.sexpr()


def literal_parts(node: AlgebraNode) -> tuple[str, str | None]:
    """Return (kind, value) of a Literal leaf; value is None once anonymized."""
    parts = node.label.split(":", 2)
    return parts[1], (parts[2] if len(parts) > 2 else None)


def make_literal(kind: str, value: str) -> AlgebraNode:
    return AlgebraNode(f"Literal:{kind}:{value}")


@dataclass(frozen=True)
class AlgebraTree:
    root: AlgebraNode

    @property
    def node_count(self) -> int:
        return self.root.size

    @cached_property
    def is_anonymized(self) -> bool:
        return all(
            not (n.label.startswith(("Table:", "Column:", "Literal:")) or n.alias or n.qualifier)
            for n in self.root.walk()
        )

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(self.root.sexpr().encode("utf-8")).hexdigest()

    def labels(self) -> list[str]:
        return [n.label for n in self.root.walk()]

    def __str__(self) -> str:
        return self.root.sexpr()


def _anonymize_node(node: AlgebraNode) -> AlgebraNode:
    if node.label.startswith("Table:"):
        return AlgebraNode(TABLE)
    if node.label.startswith("Column:"):
        return AlgebraNode(COLUMN)
    if node.label.startswith("Literal:"):
        return AlgebraNode("LITERAL:" + literal_parts(node)[0])
    return AlgebraNode(node.label, tuple(_anonymize_node(c) for c in node.children))


def anonymize(tree: AlgebraTree) -> AlgebraTree:
    """Replace every schema identifier and literal value with a placeholder label."""
    return AlgebraTree(_anonymize_node(tree.root))


def node_at(root: AlgebraNode, path: tuple[int, ...]) -> AlgebraNode:
    node = root
    for i in path:
        node = node.children[i]
    return node


def replace_at(root: AlgebraNode, path: tuple[int, ...], new: AlgebraNode) -> AlgebraNode:
    if not path:
        return new
    head, rest = path[0], path[1:]
    children = list(root.children)
    children[head] = replace_at(children[head], rest, new)
    return replace(root, children=tuple(children))
