"""Recursive-descent parser from Spider-style SELECT statements to algebra trees."""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .tree import AGGREGATES, COMPARISONS, SET_OPS, AlgebraNode, AlgebraTree

if TYPE_CHECKING:
    from ..ingest import DatabaseSchema


class SqlError(ValueError):
    """Base class for everything the parser rejects."""


class SqlSyntaxError(SqlError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnresolvedColumnError(SqlError):
    def __init__(self, name: str, candidates: list[str]):
        hint = f"; candidates: {', '.join(candidates)}" if candidates else ""
        super().__init__(f"cannot resolve column {name!r}{hint}")
        self.name = name
        self.candidates = candidates


class UnsupportedSqlError(SqlError):
    pass


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+\.\d*|\.\d+|\d+)
  | (?P<str>'(?:[^']|'')*'|"(?:[^"]|"")*")
  | (?P<qident>`[^`]*`|\[[^\]]*\])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|!=|<>|==|[=<>+\-*/,.();%|])
    """,
    re.VERBOSE,
)

KEYWORDS = frozenset(
    """select from where group by having order asc desc limit union all except intersect
    distinct as join inner left outer cross on and or not in like between is null
    case when then else end exists over partition with cast offset glob natural using""".split()
)
UNSUPPORTED = frozenset(["case", "exists", "over", "with", "cast", "glob", "natural", "using", "offset"])


@dataclass
class Token:
    kind: str  # kw, ident, num, str, op, eof
    value: str
    pos: int


def tokenize_sql(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise SqlSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        value = m.group()
        if kind == "ident" and value.lower() in KEYWORDS:
            tokens.append(Token("kw", value.lower(), pos))
        elif kind == "ident":
            tokens.append(Token("ident", value, pos))
        elif kind == "qident":
            tokens.append(Token("ident", value[1:-1], pos))
        elif kind == "str":
            quote = value[0]
            tokens.append(Token("str", value[1:-1].replace(quote * 2, quote), pos))
        elif kind in ("num", "op"):
            tokens.append(Token(kind, "=" if value == "==" else value, pos))
        pos = m.end()
    tokens.append(Token("eof", "", len(text)))
    return tokens


@dataclass
class Source:
    """One FROM item visible to column references."""

    name: str  # alias if given, else table name
    table: str | None  # declared table name; None for derived tables
    columns: list[str] | None  # None when unknown (no schema)


@dataclass
class Scope:
    sources: list[Source] = field(default_factory=list)
    select_aliases: dict[str, AlgebraNode] = field(default_factory=dict)
    parent: Scope | None = None


class Parser:
    def __init__(self, text: str, schema: DatabaseSchema | None):
        self.text = text
        self.schema = schema
        self.tokens = tokenize_sql(text)
        self.i = 0

    # -- token helpers -------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def at_kw(self, *words: str) -> bool:
        return self.tok.kind == "kw" and self.tok.value in words

    def at_op(self, *ops: str) -> bool:
        return self.tok.kind == "op" and self.tok.value in ops

    def advance(self) -> Token:
        tok = self.tok
        self.i += 1
        return tok

    def expect_kw(self, word: str) -> Token:
        if not self.at_kw(word):
            self.fail(f"expected {word.upper()}")
        return self.advance()

    def expect_op(self, op: str) -> Token:
        if not self.at_op(op):
            self.fail(f"expected {op!r}")
        return self.advance()

    def fail(self, message: str):
        tok = self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.value)
        if tok.kind == "kw" and tok.value in UNSUPPORTED:
            raise UnsupportedSqlError(f"unsupported construct {tok.value.upper()} at position {tok.pos}")
        raise SqlSyntaxError(f"{message}, found {found}", tok.pos)

    def ident(self) -> str:
        if self.tok.kind != "ident":
            self.fail("expected identifier")
        return self.advance().value

    # -- statements ----------------------------------------------------
    def parse(self) -> AlgebraNode:
        if not self.at_kw("select"):
            if self.tok.kind == "kw" and self.tok.value in UNSUPPORTED:
                self.fail("")
            if self.tok.kind in ("ident", "kw"):
                raise UnsupportedSqlError(f"only SELECT statements are supported, found {self.tok.value!r}")
        node = self.query(None)
        while self.at_op(";"):
            self.advance()
        if self.tok.kind != "eof":
            self.fail("unexpected trailing input")
        return node

    def query(self, parent: Scope | None) -> AlgebraNode:
        left = self.select(parent)
        if self.at_kw("union", "except", "intersect"):
            word = self.advance().value
            label = word.capitalize()
            if word == "union" and self.at_kw("all"):
                self.advance()
                label = "Union:all"
            assert label in SET_OPS
            right = self.query(parent)
            return AlgebraNode(label, (left, right))
        return left

    def _find_from(self) -> int:
        depth = 0
        j = self.i
        while True:
            tok = self.tokens[j]
            if tok.kind == "eof":
                raise SqlSyntaxError("missing FROM clause", tok.pos)
            if tok.kind == "op" and tok.value == "(":
                depth += 1
            elif tok.kind == "op" and tok.value == ")":
                depth -= 1
            elif depth == 0 and tok.kind == "kw" and tok.value == "from":
                return j
            j += 1

    def select(self, parent: Scope | None) -> AlgebraNode:
        self.expect_kw("select")
        distinct = False
        if self.at_kw("distinct"):
            self.advance()
            distinct = True
        elif self.at_kw("all"):
            self.advance()
        scope = Scope(parent=parent)
        # FROM is parsed first so the select list can be resolved against it
        select_start = self.i
        self.i = self._find_from()
        self.advance()
        rel = self.from_clause(scope)
        after_from = self.i
        self.i = select_start
        items = self.select_list(scope)
        if not self.at_kw("from"):
            self.fail("expected ',' or FROM")
        self.i = after_from

        if self.at_kw("where"):
            self.advance()
            rel = AlgebraNode("Filter", (self.expr(scope), rel))
        if self.at_kw("group"):
            self.advance()
            self.expect_kw("by")
            keys = [self.expr(scope)]
            while self.at_op(","):
                self.advance()
                keys.append(self.expr(scope))
            rel = AlgebraNode("GroupBy", (*keys, rel))
        if self.at_kw("having"):
            if rel.label != "GroupBy":
                raise UnsupportedSqlError(f"HAVING without GROUP BY at position {self.tok.pos}")
            self.advance()
            rel = AlgebraNode("Filter", (self.expr(scope, prefer_alias=True), rel))
        rel = AlgebraNode("Project:distinct" if distinct else "Project", (*items, rel))
        if self.at_kw("order"):
            self.advance()
            self.expect_kw("by")
            keys = [self.order_key(scope)]
            while self.at_op(","):
                self.advance()
                keys.append(self.order_key(scope))
            rel = AlgebraNode("OrderBy", (*keys, rel))
        if self.at_kw("limit"):
            self.advance()
            if self.tok.kind != "num":
                self.fail("expected number after LIMIT")
            value = self.advance().value
            if self.at_op(","):
                raise UnsupportedSqlError(f"LIMIT with offset at position {self.tok.pos}")
            rel = AlgebraNode("Limit", (rel, AlgebraNode(f"Literal:num:{value}")))
        return rel

    def order_key(self, scope: Scope) -> AlgebraNode:
        expr = self.expr(scope, prefer_alias=True)
        direction = "Asc"
        if self.at_kw("asc", "desc"):
            direction = self.advance().value.capitalize()
        return AlgebraNode(direction, (expr,))

    def select_list(self, scope: Scope) -> list[AlgebraNode]:
        items = [self.select_item(scope)]
        while self.at_op(","):
            self.advance()
            items.append(self.select_item(scope))
        return items

    def select_item(self, scope: Scope) -> AlgebraNode:
        if self.at_op("*"):
            self.advance()
            return AlgebraNode("Column:*")
        node = self.expr(scope)
        alias = None
        if self.at_kw("as"):
            self.advance()
            alias = self.ident()
        elif self.tok.kind == "ident":
            alias = self.ident()
        if alias:
            node = AlgebraNode(node.label, node.children, alias, node.qualifier)
            scope.select_aliases[alias.lower()] = node
        return node

    # -- FROM ------------------------------------------------------------
    def from_clause(self, scope: Scope) -> AlgebraNode:
        rel = self.from_item(scope)
        while True:
            label = "Join"
            if self.at_op(","):
                self.advance()
            elif self.at_kw("join"):
                self.advance()
            elif self.at_kw("inner", "cross") and self.peek().kind == "kw" and self.peek().value == "join":
                self.advance()
                self.advance()
            elif self.at_kw("left"):
                self.advance()
                if self.at_kw("outer"):
                    self.advance()
                self.expect_kw("join")
                label = "Join:left"
            else:
                return rel
            right = self.from_item(scope)
            children = [rel, right]
            if self.at_kw("on"):
                self.advance()
                children.append(AlgebraNode("Filter", (self.expr(scope),)))
            rel = AlgebraNode(label, tuple(children))

    def _alias(self) -> str | None:
        if self.at_kw("as"):
            self.advance()
            return self.ident()
        if self.tok.kind == "ident":
            return self.ident()
        return None

    def from_item(self, scope: Scope) -> AlgebraNode:
        if self.at_op("("):
            self.advance()
            if not self.at_kw("select"):
                self.fail("expected subquery")
            sub = self.query(None)
            self.expect_op(")")
            alias = self._alias()
            columns = [_output_name(item) for item in _project_items(sub)]
            scope.sources.append(Source(alias or "", None, columns))
            return AlgebraNode(sub.label, sub.children, alias, None)
        pos = self.tok.pos
        name = self.ident()
        if self.at_op("("):
            raise UnsupportedSqlError(f"table-valued function {name!r} at position {pos}")
        alias = self._alias()
        columns = None
        if self.schema is not None:
            table = self.schema.table(name)
            if table is None:
                candidates = difflib.get_close_matches(name, self.schema.table_names, n=3)
                hint = f"; candidates: {', '.join(candidates)}" if candidates else ""
                raise SqlError(f"unknown table {name!r} at position {pos}{hint}")
            name = table.name
            columns = table.column_names
        scope.sources.append(Source(alias or name, name, columns))
        return AlgebraNode(f"Table:{name}", (), alias)

    # -- expressions -----------------------------------------------------
    def expr(self, scope: Scope, prefer_alias: bool = False) -> AlgebraNode:
        saved = getattr(self, "_prefer_alias", False)
        self._prefer_alias = prefer_alias
        try:
            return self.or_expr(scope)
        finally:
            self._prefer_alias = saved

    def or_expr(self, scope: Scope) -> AlgebraNode:
        node = self.and_expr(scope)
        while self.at_kw("or"):
            self.advance()
            node = AlgebraNode("Or", (node, self.and_expr(scope)))
        return node

    def and_expr(self, scope: Scope) -> AlgebraNode:
        node = self.not_expr(scope)
        while self.at_kw("and"):
            self.advance()
            node = AlgebraNode("And", (node, self.not_expr(scope)))
        return node

    def not_expr(self, scope: Scope) -> AlgebraNode:
        if self.at_kw("not"):
            self.advance()
            return AlgebraNode("Not", (self.not_expr(scope),))
        return self.predicate(scope)

    def predicate(self, scope: Scope) -> AlgebraNode:
        left = self.additive(scope)
        if self.tok.kind == "op" and self.tok.value in COMPARISONS:
            label = COMPARISONS[self.advance().value]
            return AlgebraNode(label, (left, self.additive(scope)))
        negated = False
        if self.at_kw("not") and self.peek().kind == "kw" and self.peek().value in ("in", "like", "between"):
            self.advance()
            negated = True
        if self.at_kw("in"):
            self.advance()
            self.expect_op("(")
            if self.at_kw("select"):
                rhs: tuple[AlgebraNode, ...] = (self.query(scope),)
            else:
                values = [self.additive(scope)]
                while self.at_op(","):
                    self.advance()
                    values.append(self.additive(scope))
                rhs = tuple(values)
            self.expect_op(")")
            return AlgebraNode("NestedNotIn" if negated else "NestedIn", (left, *rhs))
        if self.at_kw("like"):
            self.advance()
            return AlgebraNode("NotLike" if negated else "Like", (left, self.additive(scope)))
        if self.at_kw("between"):
            self.advance()
            low = self.additive(scope)
            self.expect_kw("and")
            high = self.additive(scope)
            return AlgebraNode("NotBetween" if negated else "Between", (left, low, high))
        if negated:
            self.fail("expected IN, LIKE or BETWEEN after NOT")
        if self.at_kw("is"):
            self.advance()
            label = "IsNull"
            if self.at_kw("not"):
                self.advance()
                label = "IsNotNull"
            self.expect_kw("null")
            return AlgebraNode(label, (left,))
        return left

    def additive(self, scope: Scope) -> AlgebraNode:
        node = self.multiplicative(scope)
        while self.at_op("+", "-"):
            op = self.advance().value
            node = AlgebraNode(f"Arith:{op}", (node, self.multiplicative(scope)))
        return node

    def multiplicative(self, scope: Scope) -> AlgebraNode:
        node = self.primary(scope)
        while self.at_op("*", "/"):
            op = self.advance().value
            node = AlgebraNode(f"Arith:{op}", (node, self.primary(scope)))
        return node

    def primary(self, scope: Scope) -> AlgebraNode:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return AlgebraNode(f"Literal:num:{tok.value}")
        if tok.kind == "op" and tok.value == "-" and self.peek().kind == "num":
            self.advance()
            return AlgebraNode(f"Literal:num:-{self.advance().value}")
        if tok.kind == "str":
            self.advance()
            return AlgebraNode(f"Literal:str:{tok.value}")
        if tok.kind == "op" and tok.value == "(":
            self.advance()
            if self.at_kw("select"):
                node = self.query(scope)
            else:
                node = self.or_expr(scope)
            self.expect_op(")")
            return node
        if tok.kind == "ident" and self.peek().kind == "op" and self.peek().value == "(":
            name = tok.value.lower()
            if name not in AGGREGATES:
                raise UnsupportedSqlError(f"unsupported function {tok.value!r} at position {tok.pos}")
            self.advance()
            self.advance()
            distinct = False
            if self.at_kw("distinct"):
                self.advance()
                distinct = True
            if self.at_op("*"):
                self.advance()
                arg = AlgebraNode("Column:*")
            else:
                arg = self.or_expr(scope)
            self.expect_op(")")
            if self.at_kw("over"):
                self.fail("")
            if distinct:
                arg = AlgebraNode("Distinct", (arg,))
            return AlgebraNode(f"Agg:{name}", (arg,))
        if tok.kind == "ident":
            return self.column_ref(scope)
        if tok.kind == "kw" and tok.value == "null":
            raise UnsupportedSqlError(f"NULL literal at position {tok.pos}")
        self.fail("expected expression")

    def column_ref(self, scope: Scope) -> AlgebraNode:
        pos = self.tok.pos
        first = self.ident()
        if self.at_op("."):
            self.advance()
            if self.at_op("*"):
                self.advance()
                return AlgebraNode("Column:*", qualifier=first)
            name = self.ident()
            return AlgebraNode(self._resolve_qualified(scope, first, name, pos), qualifier=first)
        return AlgebraNode(self._resolve_bare(scope, first, pos))

    def _resolve_qualified(self, scope: Scope, qualifier: str, name: str, pos: int) -> str:
        s: Scope | None = scope
        while s is not None:
            for source in s.sources:
                if source.name.lower() == qualifier.lower() or (
                    source.table and source.table.lower() == qualifier.lower()
                ):
                    return self._column_label(source, name, pos)
            s = s.parent
        if self.schema is None:
            return f"Column:{qualifier}.{name}"
        raise UnresolvedColumnError(f"{qualifier}.{name}", _candidates(scope, name))

    def _resolve_bare(self, scope: Scope, name: str, pos: int) -> str:
        lowered = name.lower()
        s: Scope | None = scope
        while s is not None:
            if getattr(self, "_prefer_alias", False) and lowered in s.select_aliases:
                return f"Column:{name}"
            for source in s.sources:
                if source.columns is not None and any(c.lower() == lowered for c in source.columns):
                    return self._column_label(source, name, pos)
            if lowered in s.select_aliases:
                return f"Column:{name}"
            s = s.parent
        if self.schema is None:
            tables = [src.table for src in scope.sources if src.table]
            return f"Column:{tables[0]}.{name}" if len(tables) == 1 else f"Column:{name}"
        raise UnresolvedColumnError(name, _candidates(scope, name))

    def _column_label(self, source: Source, name: str, pos: int) -> str:
        if source.columns is None:
            return f"Column:{source.table or source.name}.{name}"
        for col in source.columns:
            if col.lower() == name.lower():
                owner = source.table if source.table else source.name
                return f"Column:{owner}.{col}"
        raise UnresolvedColumnError(f"{source.name}.{name}", difflib.get_close_matches(name, source.columns, n=3))


def _candidates(scope: Scope, name: str) -> list[str]:
    pool = []
    s: Scope | None = scope
    while s is not None:
        for source in s.sources:
            pool.extend(f"{source.name}.{c}" for c in source.columns or [])
        s = s.parent
    by_column = {p.split(".", 1)[1]: p for p in pool}
    return [by_column[m] for m in difflib.get_close_matches(name, list(by_column), n=3)]


def _project_items(node: AlgebraNode) -> tuple[AlgebraNode, ...]:
    while node.label in ("Limit", "OrderBy") or node.label in SET_OPS:
        node = node.children[0] if node.label in SET_OPS or node.label == "Limit" else node.children[-1]
    return node.children[:-1]


def _output_name(item: AlgebraNode) -> str:
    if item.alias:
        return item.alias
    if item.label.startswith("Column:"):
        return item.label.rsplit(".", 1)[-1].split(":", 1)[-1]
    return item.sexpr()


def parse_sql(query: str, schema: DatabaseSchema | None = None) -> AlgebraTree:
    """Parse a SELECT statement into an algebra tree with resolved leaves.

    With ``schema=None`` tables and columns are taken as written, which is
    enough for rendering explanations but not for anything that needs
    column identity.
    """
    return AlgebraTree(Parser(query, schema).parse())
