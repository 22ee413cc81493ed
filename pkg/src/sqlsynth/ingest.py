"""Loading of Spider-format corpora, schema catalogs, databases and category splits."""

from __future__ import annotations

import json
import logging
import sqlite3
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml

log = logging.getLogger(__name__)

TRAIN = "train"


class CorpusError(ValueError):
    """Raised for malformed corpus, catalog or split files."""


@dataclass(frozen=True)
class ExamplePair:
    question: str
    query: str
    db_id: str

    def to_record(self) -> dict[str, str]:
        return {"question": self.question, "query": self.query, "db_id": self.db_id}


@dataclass(frozen=True)
class ColumnRef:
    table: str
    column: str

    def __str__(self) -> str:
        return f"{self.table}.{self.column}"


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[tuple[str, str], ...]

    @property
    def column_names(self) -> list[str]:
        return [name for name, _ in self.columns]

    def column(self, name: str) -> str | None:
        """Return the column's declared spelling, matching case-insensitively."""
        lowered = name.lower()
        for col, _ in self.columns:
            if col.lower() == lowered:
                return col
        return None

    def column_type(self, name: str) -> str | None:
        lowered = name.lower()
        for col, col_type in self.columns:
            if col.lower() == lowered:
                return col_type
        return None


@dataclass(frozen=True)
class DatabaseSchema:
    db_id: str
    tables: tuple[Table, ...]
    primary_keys: tuple[ColumnRef, ...] = ()
    foreign_keys: tuple[tuple[ColumnRef, ColumnRef], ...] = ()
    _by_name: dict[str, Table] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for table in self.tables:
            key = table.name.lower()
            if key in self._by_name:
                raise CorpusError(f"{self.db_id}: duplicate table name {table.name!r}")
            self._by_name[key] = table
        for ref in list(self.primary_keys) + [r for pair in self.foreign_keys for r in pair]:
            table = self._by_name.get(ref.table.lower())
            if table is None or table.column(ref.column) is None:
                raise CorpusError(f"{self.db_id}: key references unknown column {ref}")

    @property
    def table_names(self) -> list[str]:
        return [t.name for t in self.tables]

    def table(self, name: str) -> Table | None:
        return self._by_name.get(name.lower())


SchemaCatalog = dict[str, DatabaseSchema]


def _load_json(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(encoding="utf-8") as fh:
        return json.load(fh)


def load_examples(path: str | Path) -> list[ExamplePair]:
    """Read a Spider train/dev file. Extra fields such as ``query_toks`` are ignored."""
    records = _load_json(path)
    if not isinstance(records, list):
        raise CorpusError(f"{path}: expected a JSON array of records")
    examples = []
    for i, record in enumerate(records):
        if not isinstance(record, dict):
            raise CorpusError(f"{path}: record {i} is not an object")
        for key in ("question", "query", "db_id"):
            value = record.get(key)
            if not isinstance(value, str):
                raise CorpusError(f"{path}: record {i} has missing or non-string field {key!r}")
        if not record["question"].strip():
            raise CorpusError(f"{path}: record {i} has empty field 'question'")
        examples.append(ExamplePair(record["question"], record["query"], record["db_id"]))
    return examples


def load_queries(path: str | Path) -> list[tuple[str, str]]:
    """Read (query, db_id) pairs for augmentation; a ``question`` field, if present, is ignored."""
    records = _load_json(path)
    if not isinstance(records, list):
        raise CorpusError(f"{path}: expected a JSON array of records")
    out = []
    for i, record in enumerate(records):
        if not isinstance(record, dict):
            raise CorpusError(f"{path}: record {i} is not an object")
        for key in ("query", "db_id"):
            if not isinstance(record.get(key), str) or not record[key].strip():
                raise CorpusError(f"{path}: record {i} has missing or empty field {key!r}")
        out.append((record["query"], record["db_id"]))
    return out


def dump_examples(examples: Iterable[ExamplePair], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump([e.to_record() for e in examples], fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def _primary_key_indices(raw) -> list[int]:
    # newer Spider releases nest composite keys as lists
    out: list[int] = []
    for item in raw:
        if isinstance(item, list):
            out.extend(item)
        else:
            out.append(item)
    return out


def parse_schema_entry(entry: Mapping) -> DatabaseSchema:
    db_id = entry["db_id"]
    table_names = entry["table_names_original"]
    column_names = entry["column_names_original"]
    column_types = entry["column_types"]
    if len(column_names) != len(column_types):
        raise CorpusError(f"{db_id}: column_names_original and column_types differ in length")

    columns: list[list[tuple[str, str]]] = [[] for _ in table_names]
    refs: list[ColumnRef | None] = []
    for (table_index, name), col_type in zip(column_names, column_types):
        if table_index == -1:
            refs.append(None)  # the "*" pseudo column
            continue
        if not 0 <= table_index < len(table_names):
            raise CorpusError(f"{db_id}: column {name!r} has dangling table index {table_index}")
        columns[table_index].append((name, col_type))
        refs.append(ColumnRef(table_names[table_index], name))

    def resolve(index: int) -> ColumnRef:
        if not isinstance(index, int) or not 0 <= index < len(refs) or refs[index] is None:
            raise CorpusError(f"{db_id}: dangling column index {index}")
        return refs[index]

    primary = tuple(resolve(i) for i in _primary_key_indices(entry.get("primary_keys", [])))
    foreign = tuple((resolve(a), resolve(b)) for a, b in entry.get("foreign_keys", []))
    tables = tuple(Table(name, tuple(cols)) for name, cols in zip(table_names, columns))
    return DatabaseSchema(db_id, tables, primary, foreign)


def load_schemas(path: str | Path) -> SchemaCatalog:
    entries = _load_json(path)
    if not isinstance(entries, list):
        raise CorpusError(f"{path}: expected a JSON array of schema entries")
    catalog: SchemaCatalog = {}
    for entry in entries:
        schema = parse_schema_entry(entry)
        if schema.db_id in catalog:
            raise CorpusError(f"{path}: duplicate db_id {schema.db_id!r}")
        catalog[schema.db_id] = schema
    return catalog


def database_path(db_root: str | Path, db_id: str) -> Path:
    return Path(db_root) / db_id / f"{db_id}.sqlite"


def connect(db_root: str | Path, db_id: str) -> sqlite3.Connection:
    """Open a read-only connection to a per-database SQLite file."""
    path = database_path(db_root, db_id)
    if not path.exists():
        raise FileNotFoundError(f"no database file for {db_id!r} at {path}")
    conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True, check_same_thread=False)
    conn.text_factory = lambda b: b.decode("utf-8", errors="replace")
    return conn


def execute(conn: sqlite3.Connection, sql: str, timeout: float = 5.0) -> int:
    """Run ``sql`` and return the number of rows; raises sqlite3.Error, including on timeout."""
    deadline = time.monotonic() + timeout
    conn.set_progress_handler(lambda: int(time.monotonic() > deadline), 1000)
    try:
        return len(conn.execute(sql).fetchall())
    except sqlite3.OperationalError as exc:
        if "interrupted" in str(exc) and time.monotonic() > deadline:
            raise sqlite3.OperationalError(f"timeout after {timeout:g}s") from exc
        raise
    finally:
        conn.set_progress_handler(None, 0)


def load_category_split(path: str | Path) -> dict[str, str]:
    """Read a db_id -> category mapping from YAML or JSON.

    The inverse layout (category -> list of db_ids) is accepted too.
    """
    with Path(path).open(encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise CorpusError(f"{path}: category split must be a mapping")
    split: dict[str, str] = {}
    for key, value in raw.items():
        pairs = [(db, key) for db in value] if isinstance(value, list) else [(key, value)]
        for db_id, label in pairs:
            db_id, label = str(db_id), str(label)
            if split.get(db_id, label) != label:
                raise CorpusError(f"{path}: {db_id!r} mapped to both {split[db_id]!r} and {label!r}")
            split[db_id] = label
    return split


def split_by_category(
    examples: Sequence[ExamplePair], split: Mapping[str, str]
) -> dict[str, list[ExamplePair]]:
    buckets: dict[str, list[ExamplePair]] = {label: [] for label in dict.fromkeys(split.values())}
    buckets.setdefault(TRAIN, [])
    for example in examples:
        buckets[split.get(example.db_id, TRAIN)].append(example)
    return buckets


@dataclass(frozen=True)
class Quarantined:
    index: int
    example: ExamplePair
    reason: str

    def to_record(self) -> dict:
        return {"index": self.index, **self.example.to_record(), "reason": self.reason}


def quarantine(
    examples: Sequence[ExamplePair], catalog: Mapping[str, DatabaseSchema]
) -> tuple[list[ExamplePair], list[Quarantined]]:
    """Separate pairs whose db_id is unknown or whose SQL does not parse."""
    from .algebra import SqlError, parse_sql

    kept, bad = [], []
    for i, example in enumerate(examples):
        schema = catalog.get(example.db_id)
        if schema is None:
            bad.append(Quarantined(i, example, f"unknown db_id {example.db_id!r}"))
            continue
        try:
            parse_sql(example.query, schema)
        except SqlError as exc:
            bad.append(Quarantined(i, example, f"{type(exc).__name__}: {exc}"))
            continue
        kept.append(example)
    if bad:
        log.info("quarantined %d of %d pairs", len(bad), len(examples))
    return kept, bad
