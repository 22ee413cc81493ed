"""Structural retrieval of training pairs by tree edit distance."""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .algebra import ALPHABET_VERSION, AlgebraNode, AlgebraTree, SqlError, anonymize, parse_sql
from .ingest import DatabaseSchema, ExamplePair

log = logging.getLogger(__name__)

NORMALIZERS = ("size_sum", "max_size")


def _postorder(root: AlgebraNode) -> tuple[list[str], list[int]]:
    """Post-order labels and leftmost-leaf indices."""
    labels: list[str] = []
    leftmost: list[int] = []
    stack: list[tuple[AlgebraNode, int]] = [(root, 0)]
    firsts: list[int | None] = [None]
    while stack:
        node, child_i = stack[-1]
        if child_i < len(node.children):
            stack[-1] = (node, child_i + 1)
            stack.append((node.children[child_i], 0))
            firsts.append(None)
            continue
        stack.pop()
        first = firsts.pop()
        index = len(labels)
        labels.append(node.label)
        leftmost.append(index if first is None else first)
        if firsts and firsts[-1] is None:
            firsts[-1] = leftmost[index]
    return labels, leftmost


def _keyroots(leftmost: list[int]) -> list[int]:
    seen: set[int] = set()
    roots = []
    for i in range(len(leftmost) - 1, -1, -1):
        if leftmost[i] not in seen:
            seen.add(leftmost[i])
            roots.append(i)
    return sorted(roots)


def _root(tree: AlgebraTree | AlgebraNode) -> AlgebraNode:
    return tree.root if isinstance(tree, AlgebraTree) else tree


def tree_edit_distance(t1: AlgebraTree | AlgebraNode, t2: AlgebraTree | AlgebraNode) -> int:
    """Unit-cost ordered tree edit distance (Zhang and Shasha's keyroot algorithm).

    Labels are compared verbatim, so pass anonymized trees to compare structure.
    """
    labels1, l1 = _postorder(_root(t1))
    labels2, l2 = _postorder(_root(t2))
    n1, n2 = len(labels1), len(labels2)
    treedist = [[0] * n2 for _ in range(n1)]

    for i in _keyroots(l1):
        for j in _keyroots(l2):
            li, lj = l1[i], l2[j]
            rows, cols = i - li + 2, j - lj + 2
            fd = [[0] * cols for _ in range(rows)]
            for x in range(1, rows):
                fd[x][0] = x
            for y in range(1, cols):
                fd[0][y] = y
            for x in range(1, rows):
                xi = x + li - 1
                same_tree_x = l1[xi] == li
                for y in range(1, cols):
                    yj = y + lj - 1
                    delete = fd[x - 1][y] + 1
                    insert = fd[x][y - 1] + 1
                    if same_tree_x and l2[yj] == lj:
                        relabel = fd[x - 1][y - 1] + (labels1[xi] != labels2[yj])
                        best = min(delete, insert, relabel)
                        treedist[xi][yj] = best
                    else:
                        match = fd[l1[xi] - li][l2[yj] - lj] + treedist[xi][yj]
                        best = min(delete, insert, match)
                    fd[x][y] = best
    return treedist[n1 - 1][n2 - 1]


def _size(tree: AlgebraTree | AlgebraNode) -> int:
    return _root(tree).size


def normalize(ted: int, size1: int, size2: int, normalizer: str = "size_sum") -> float:
    if normalizer == "size_sum":
        return ted / (size1 + size2)
    if normalizer == "max_size":
        return min(1.0, ted / max(size1, size2))
    raise ValueError(f"unknown normalizer {normalizer!r}; expected one of {NORMALIZERS}")


def normalized_distance(
    t1: AlgebraTree | AlgebraNode, t2: AlgebraTree | AlgebraNode, normalizer: str = "size_sum"
) -> float:
    """Tree edit distance scaled into [0, 1]; by default divided by the summed sizes."""
    return normalize(tree_edit_distance(t1, t2), _size(t1), _size(t2), normalizer)


def size_lower_bound(size1: int, size2: int, normalizer: str = "size_sum") -> float:
    """Normalized distance can never be below this (TED >= size difference)."""
    return normalize(abs(size1 - size2), size1, size2, normalizer)


class DistanceCache:
    """Content-addressed store of pairwise TEDs, keyed by anonymized-tree digests.

    Entries live in one JSON file per alphabet version, so a change to the
    tree vocabulary invalidates everything at once.
    """

    def __init__(self, root: str | Path):
        self.path = Path(root) / f"ted-v{ALPHABET_VERSION}.json"
        self._lock = threading.Lock()
        self._dirty = False
        self._data: dict[str, int] = {}
        if self.path.exists():
            self._data = json.loads(self.path.read_text())

    @staticmethod
    def key(a: AlgebraTree, b: AlgebraTree) -> str:
        lo, hi = sorted((a.digest, b.digest))
        return f"{lo}:{hi}"

    def distance(self, a: AlgebraTree, b: AlgebraTree) -> int:
        key = self.key(a, b)
        with self._lock:
            hit = self._data.get(key)
        if hit is not None:
            return hit
        value = tree_edit_distance(a, b)
        with self._lock:
            self._data[key] = value
            self._dirty = True
        return value

    def __len__(self) -> int:
        return len(self._data)

    def save(self) -> None:
        with self._lock:
            if not self._dirty:
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            tmp = self.path.with_suffix(f".{os.getpid()}.tmp")
            tmp.write_text(json.dumps(self._data, sort_keys=True))
            os.replace(tmp, self.path)
            self._dirty = False


@dataclass(frozen=True)
class IndexEntry:
    pair: ExamplePair
    tree: AlgebraTree
    size: int


@dataclass(frozen=True)
class RetrievalIndex:
    entries: tuple[IndexEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_trees(cls, items: Iterable[tuple[ExamplePair, AlgebraTree]]) -> RetrievalIndex:
        entries = []
        for pair, tree in items:
            anon = anonymize(tree)
            entries.append(IndexEntry(pair, anon, anon.node_count))
        return cls(tuple(entries))


def build_index(examples: Sequence[ExamplePair], catalog: Mapping[str, DatabaseSchema]) -> RetrievalIndex:
    """Parse and anonymize every training pair. Pairs that fail to parse are left out."""
    items = []
    for pair in examples:
        schema = catalog.get(pair.db_id)
        if schema is None:
            log.warning("index: unknown db_id %r, pair skipped", pair.db_id)
            continue
        try:
            items.append((pair, parse_sql(pair.query, schema)))
        except SqlError as exc:
            log.warning("index: unparseable query skipped (%s): %s", exc, pair.query)
    return RetrievalIndex.from_trees(items)


@dataclass(frozen=True)
class RetrievalHit:
    pair: ExamplePair
    distance: float
    index: int


def get_related_queries(
    query: AlgebraTree,
    index: RetrievalIndex,
    threshold: float = 0.1,
    *,
    limit: int | None = None,
    normalizer: str = "size_sum",
    prefilter: bool = True,
    cache: DistanceCache | None = None,
) -> list[RetrievalHit]:
    """Index entries strictly closer than ``threshold``, nearest first.

    Ties keep index order. ``limit`` caps the number of hits after sorting.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    if not query.is_anonymized:
        query = anonymize(query)
    size = query.node_count
    hits = []
    for i, entry in enumerate(index.entries):
        if prefilter and size_lower_bound(size, entry.size, normalizer) >= threshold:
            continue
        ted = cache.distance(query, entry.tree) if cache is not None else tree_edit_distance(query, entry.tree)
        distance = normalize(ted, size, entry.size, normalizer)
        if distance < threshold:
            hits.append(RetrievalHit(entry.pair, distance, i))
    hits.sort(key=lambda h: (h.distance, h.index))
    return hits[:limit] if limit is not None else hits
