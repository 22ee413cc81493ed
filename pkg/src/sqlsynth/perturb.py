"""Seeded replacement of SQL constants with other values from the same column."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import sqlite3
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .algebra import (
    SqlError,
    anonymize,
    constant_sites,
    emit_sql,
    make_literal,
    parse_sql,
    replace_at,
)
from .ingest import ColumnRef, DatabaseSchema, ExamplePair, connect, database_path, execute

log = logging.getLogger(__name__)


def derive_seed(seed: int, stage: str, index: int | None = None) -> int:
    """Independent RNG stream per (seed, stage, item) so parallel work stays reproducible."""
    token = f"{seed}:{stage}" if index is None else f"{seed}:{stage}:{index}"
    return int.from_bytes(hashlib.sha256(token.encode()).digest()[:8], "big")


def selection_size(fraction: float, total: int) -> int:
    # guard against 0.7 * 10 landing a hair under 7
    return min(total, math.floor(fraction * total + 1e-9))


@dataclass
class PerturbationReport:
    total: int
    selected: int
    altered: int = 0
    fraction: float = 0.7
    seed: int = 0
    entries: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        assert self.altered <= self.selected <= self.total

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "selected": self.selected,
            "altered": self.altered,
            "fraction": self.fraction,
            "seed": self.seed,
            "entries": self.entries,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True, ensure_ascii=False) + "\n")


def _quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def _distinct_values(conn: sqlite3.Connection, column: ColumnRef) -> list:
    sql = f"SELECT DISTINCT {_quote_ident(column.column)} FROM {_quote_ident(column.table)}"
    return [row[0] for row in conn.execute(sql).fetchall()]


def _alternatives(values: Sequence, kind: str, current: str) -> list:
    out = []
    if kind == "num":
        try:
            now = float(current)
        except ValueError:
            now = None
        for v in values:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                continue
            if now is None or float(v) != now:
                out.append(v)
        out.sort(key=float)
    else:
        out = sorted(v for v in values if isinstance(v, str) and v != current and v.strip())
    return out


def _literal_text(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, int):
        return str(value)
    text = repr(value)
    if "e" in text or "E" in text:
        # the SQL lexer takes plain decimals only
        text = format(value, ".20f").rstrip("0")
        text = text + "0" if text.endswith(".") else text
    return text


def replace_constants(
    examples: Sequence[ExamplePair],
    db_root: str | Path,
    catalog: Mapping[str, DatabaseSchema],
    fraction: float = 0.7,
    seed: int = 0,
    *,
    categories: Mapping[str, str] | None = None,
    timeout: float = 5.0,
) -> tuple[list[ExamplePair], PerturbationReport]:
    """Swap the constants of a seeded sample of queries for other column values.

    ``floor(fraction * N)`` queries are drawn uniformly (per category when
    ``categories`` maps db_id to a label). Each literal compared against a
    schema column is replaced by a different value of the same kind drawn
    from that column. A rewritten query is kept only if it parses, keeps the
    same anonymized structure, and executes; question text is left untouched.
    """
    if not 0 <= fraction <= 1:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    total = len(examples)
    if categories is None:
        groups = {"": list(range(total))}
    else:
        groups = {}
        for i, ex in enumerate(examples):
            groups.setdefault(categories.get(ex.db_id, "train"), []).append(i)
    selected: list[int] = []
    for label in sorted(groups):
        members = groups[label]
        rng = random.Random(derive_seed(seed, f"perturb.select.{label}"))
        selected.extend(rng.sample(members, selection_size(fraction, len(members))))
    selected.sort()

    report = PerturbationReport(total, len(selected), 0, fraction, seed)
    out = list(examples)
    conns: dict[str, sqlite3.Connection] = {}
    values_cache: dict[tuple[str, ColumnRef], list] = {}
    try:
        for i in selected:
            ex = examples[i]
            entry = {"index": i, "db_id": ex.db_id, "query": ex.query, "changes": []}
            report.entries.append(entry)
            schema = catalog.get(ex.db_id)
            if schema is None or not database_path(db_root, ex.db_id).exists():
                entry["status"] = "missing_db"
                continue
            try:
                tree = parse_sql(ex.query, schema)
            except SqlError as exc:
                entry["status"] = "parse_error"
                entry["reason"] = str(exc)
                continue
            sites = constant_sites(tree, schema)
            if not sites:
                entry["status"] = "no_constants"
                continue
            if ex.db_id not in conns:
                conns[ex.db_id] = connect(db_root, ex.db_id)
            conn = conns[ex.db_id]
            rng = random.Random(derive_seed(seed, "perturb.value", i))
            root = tree.root
            for site in sites:
                key = (ex.db_id, site.column)
                if key not in values_cache:
                    try:
                        values_cache[key] = _distinct_values(conn, site.column)
                    except sqlite3.Error as exc:
                        log.warning("cannot read %s in %s: %s", site.column, ex.db_id, exc)
                        values_cache[key] = []
                choices = _alternatives(values_cache[key], site.kind, site.value)
                if not choices:
                    continue
                new_value = _literal_text(rng.choice(choices))
                root = replace_at(root, site.path, make_literal(site.kind, new_value))
                entry["changes"].append(
                    {"path": list(site.path), "column": str(site.column), "old": site.value, "new": new_value}
                )
            if not entry["changes"]:
                entry["status"] = "no_alternatives"
                continue
            new_tree = type(tree)(root)
            try:
                new_sql = emit_sql(new_tree)
                reparsed = parse_sql(new_sql, schema)
                if anonymize(reparsed) != anonymize(tree):
                    raise SqlError("structure changed after rewrite")
                execute(conn, new_sql, timeout)
            except (SqlError, sqlite3.Error) as exc:
                entry["status"] = "invalid_result"
                entry["reason"] = f"{type(exc).__name__}: {exc}"
                entry["changes"] = []
                continue
            entry["status"] = "altered"
            entry["new_query"] = new_sql
            entry["question_stale"] = True
            out[i] = ExamplePair(ex.question, new_sql, ex.db_id)
            report.altered += 1
    finally:
        for conn in conns.values():
            conn.close()
    return out, report
