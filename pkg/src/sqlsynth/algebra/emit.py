"""Render algebra trees back to SQL text."""

from __future__ import annotations

from .parser import SqlError
from .tree import AlgebraNode, AlgebraTree, SET_OPS, literal_parts

_COMPARISON_SQL = {"Eq": "=", "Neq": "!=", "Lt": "<", "Gt": ">", "Le": "<=", "Ge": ">="}
_SET_SQL = {"Union": "UNION", "Union:all": "UNION ALL", "Except": "EXCEPT", "Intersect": "INTERSECT"}

# binding strength, loosest first
_PREC_OR, _PREC_AND, _PREC_NOT, _PREC_CMP, _PREC_ADD, _PREC_MUL, _PREC_ATOM = range(1, 8)


class EmitError(SqlError):
    pass


def quote_string(value: str) -> str:
    return "'" + value.replace("'", "''") + "'"


def _name(node: AlgebraNode) -> str:
    return node.label.split(":", 1)[1]


def _column(node: AlgebraNode) -> str:
    ident = _name(node)
    column = ident.rsplit(".", 1)[-1] if ident != "*" else "*"
    if node.qualifier:
        return f"{node.qualifier}.{column}"
    return column


def _precedence(node: AlgebraNode) -> int:
    label = node.label
    if label == "Or":
        return _PREC_OR
    if label == "And":
        return _PREC_AND
    if label == "Not":
        return _PREC_NOT
    if label in _COMPARISON_SQL or label in (
        "Like", "NotLike", "Between", "NotBetween", "IsNull", "IsNotNull", "NestedIn", "NestedNotIn"
    ):
        return _PREC_CMP
    if label in ("Arith:+", "Arith:-"):
        return _PREC_ADD
    if label in ("Arith:*", "Arith:/"):
        return _PREC_MUL
    return _PREC_ATOM


def _operand(node: AlgebraNode, minimum: int) -> str:
    text = _expr(node)
    if node.is_relational:
        return text  # already parenthesized
    if _precedence(node) < minimum:
        return f"({text})"
    return text


def _expr(node: AlgebraNode) -> str:
    label = node.label
    kids = node.children
    if node.is_relational:
        return f"({emit_node(node)})"
    if label.startswith("Column:"):
        return _column(node)
    if label.startswith("Literal:"):
        kind, value = literal_parts(node)
        return value if kind == "num" else quote_string(value)
    if label.startswith("Agg:"):
        (arg,) = kids
        if arg.label == "Distinct":
            return f"{_name(node).upper()}(DISTINCT {_expr(arg.children[0])})"
        return f"{_name(node).upper()}({_expr(arg)})"
    if label.startswith("Arith:"):
        op = _name(node)
        prec = _precedence(node)
        return f"{_operand(kids[0], prec)} {op} {_operand(kids[1], prec + 1)}"
    if label in _COMPARISON_SQL:
        return f"{_operand(kids[0], _PREC_ADD)} {_COMPARISON_SQL[label]} {_operand(kids[1], _PREC_ADD)}"
    if label in ("Like", "NotLike"):
        word = "LIKE" if label == "Like" else "NOT LIKE"
        return f"{_operand(kids[0], _PREC_ADD)} {word} {_operand(kids[1], _PREC_ADD)}"
    if label in ("Between", "NotBetween"):
        word = "BETWEEN" if label == "Between" else "NOT BETWEEN"
        a, lo, hi = (_operand(k, _PREC_ADD) for k in kids)
        return f"{a} {word} {lo} AND {hi}"
    if label in ("IsNull", "IsNotNull"):
        return f"{_operand(kids[0], _PREC_ADD)} IS {'NOT ' if label == 'IsNotNull' else ''}NULL"
    if label in ("NestedIn", "NestedNotIn"):
        word = "IN" if label == "NestedIn" else "NOT IN"
        lhs = _operand(kids[0], _PREC_ADD)
        if len(kids) == 2 and kids[1].is_relational:
            return f"{lhs} {word} {_expr(kids[1])}"
        return f"{lhs} {word} ({', '.join(_expr(k) for k in kids[1:])})"
    if label == "And":
        return f"{_operand(kids[0], _PREC_AND)} AND {_operand(kids[1], _PREC_AND + 1)}"
    if label == "Or":
        return f"{_operand(kids[0], _PREC_OR)} OR {_operand(kids[1], _PREC_OR + 1)}"
    if label == "Not":
        return f"NOT {_operand(kids[0], _PREC_NOT)}"
    raise EmitError(f"cannot emit expression node {label!r}")


def _select_item(node: AlgebraNode) -> str:
    text = "*" if node.label == "Column:*" and not node.qualifier else _expr(node)
    if node.alias:
        text += f" AS {node.alias}"
    return text


def _from(node: AlgebraNode) -> str:
    if node.label.startswith("Table:"):
        text = _name(node)
        return f"{text} AS {node.alias}" if node.alias else text
    if node.label in ("Join", "Join:left"):
        word = "LEFT JOIN" if node.label == "Join:left" else "JOIN"
        text = f"{_from(node.children[0])} {word} {_from(node.children[1])}"
        if len(node.children) == 3:
            text += f" ON {_expr(node.children[2].children[0])}"
        return text
    if node.is_relational:
        text = f"({emit_node(node)})"
        return f"{text} AS {node.alias}" if node.alias else text
    raise EmitError(f"cannot emit FROM item {node.label!r}")


def _is_where(node: AlgebraNode) -> bool:
    return node.label == "Filter" and len(node.children) == 2


def emit_node(node: AlgebraNode) -> str:
    if node.label in SET_OPS:
        return f"{emit_node(node.children[0])} {_SET_SQL[node.label]} {emit_node(node.children[1])}"
    limit = order = None
    if node.label == "Limit":
        limit = literal_parts(node.children[1])[1]
        node = node.children[0]
    if node.label == "OrderBy":
        order = node.children[:-1]
        node = node.children[-1]
    if node.label not in ("Project", "Project:distinct"):
        raise EmitError(f"expected a projection, found {node.label!r}")
    items, rel = node.children[:-1], node.children[-1]
    having = where = group = None
    if _is_where(rel) and rel.children[1].label == "GroupBy":
        having, rel = rel.children
    if rel.label == "GroupBy":
        group, rel = rel.children[:-1], rel.children[-1]
    if _is_where(rel):
        where, rel = rel.children

    parts = ["SELECT"]
    if node.label == "Project:distinct":
        parts.append("DISTINCT")
    parts.append(", ".join(_select_item(i) for i in items))
    parts.append("FROM " + _from(rel))
    if where is not None:
        parts.append("WHERE " + _expr(where))
    if group is not None:
        parts.append("GROUP BY " + ", ".join(_expr(k) for k in group))
    if having is not None:
        parts.append("HAVING " + _expr(having))
    if order is not None:
        keys = [f"{_expr(k.children[0])} {k.label.upper()}" for k in order]
        parts.append("ORDER BY " + ", ".join(keys))
    if limit is not None:
        parts.append(f"LIMIT {limit}")
    return " ".join(parts)


def emit_sql(tree: AlgebraTree) -> str:
    """Render a tree with resolved leaves as SQL. Anonymized trees are rejected."""
    if any(n.label in ("TABLE", "COLUMN") or n.label.startswith("LITERAL:") for n in tree.root.walk()):
        raise EmitError("cannot emit SQL from an anonymized tree")
    return emit_node(tree.root)
