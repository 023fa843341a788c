"""Typed knowledge graphs, attention masks derived from them, and exact reasoning oracles."""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import DuplicateEdge, IndexOutOfRange, ParseError

# Sentinels in EdgeTypeMap.type_of.
NONE = -1
SELF = -2

DirectionPolicy = Literal["directed", "symmetric"]
Triple = tuple[int, int, int]


@dataclass(frozen=True)
class KnowledgeGraph:
    num_entities: int
    num_relations: int
    edges: tuple[Triple, ...] = ()

    @property
    def n(self) -> int:
        return self.num_entities

    @property
    def m(self) -> int:
        return len(self.edges)

    @cached_property
    def _typed_successors(self) -> dict[tuple[int, int], tuple[int, ...]]:
        succ: dict[tuple[int, int], list[int]] = defaultdict(list)
        for h, r, t in self.edges:
            succ[(h, r)].append(t)
        return {k: tuple(v) for k, v in succ.items()}

    @cached_property
    def _successors(self) -> tuple[frozenset[int], ...]:
        succ: list[set[int]] = [set() for _ in range(self.num_entities)]
        for h, _, t in self.edges:
            succ[h].add(t)
        return tuple(frozenset(s) for s in succ)

    @cached_property
    def _neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Undirected neighbor lists, sorted ascending."""
        nbrs: list[set[int]] = [set() for _ in range(self.num_entities)]
        for h, _, t in self.edges:
            nbrs[h].add(t)
            nbrs[t].add(h)
        return tuple(tuple(sorted(s)) for s in nbrs)

    def typed_successors(self, head: int, relation: int) -> tuple[int, ...]:
        return self._typed_successors.get((head, relation), ())

    def successors(self, head: int) -> frozenset[int]:
        return self._successors[head]

    def neighbors(self, node: int) -> tuple[int, ...]:
        return self._neighbors[node]

    def to_dict(self) -> dict:
        return {
            "num_entities": self.num_entities,
            "num_relations": self.num_relations,
            "triples": [list(e) for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnowledgeGraph":
        return build_graph(d["triples"], d["num_entities"], d["num_relations"])


def build_graph(triples: Iterable[Sequence[int]], num_entities: int, num_relations: int) -> KnowledgeGraph:
    """Validate triples and wrap them in an immutable graph.

    Raises IndexOutOfRange for any head/tail/relation outside the declared
    bounds and DuplicateEdge for a repeated triple.
    """
    if num_entities < 0 or num_relations < 0:
        raise IndexOutOfRange("entity and relation counts must be non-negative")
    seen: set[Triple] = set()
    edges: list[Triple] = []
    for triple in triples:
        h, r, t = (int(x) for x in triple)
        if not (0 <= h < num_entities and 0 <= t < num_entities):
            raise IndexOutOfRange(f"entity index out of range in triple {(h, r, t)} (n={num_entities})")
        if not 0 <= r < num_relations:
            raise IndexOutOfRange(f"relation index out of range in triple {(h, r, t)} (|R|={num_relations})")
        if (h, r, t) in seen:
            raise DuplicateEdge(f"duplicate triple {(h, r, t)}")
        seen.add((h, r, t))
        edges.append((h, r, t))
    return KnowledgeGraph(num_entities, num_relations, tuple(edges))


@dataclass(frozen=True, eq=False)
class AttentionMask:
    n: int
    allowed: np.ndarray = field(repr=False)

    def pairs(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in zip(*np.nonzero(self.allowed))}


@dataclass(frozen=True, eq=False)
class EdgeTypeMap:
    n: int
    num_relations: int
    type_of: np.ndarray = field(repr=False)


def derive_mask(g: KnowledgeGraph, direction_policy: DirectionPolicy = "symmetric") -> tuple[AttentionMask, EdgeTypeMap]:
    """Adjacency mask A (self always allowed) and the relation index E for each allowed pair.

    ``directed`` lets i attend to j only for an edge i -> j; ``symmetric`` also
    admits j -> i. Where several relations join a pair the lowest index wins.
    """
    if direction_policy not in ("directed", "symmetric"):
        raise ValueError(f"unknown direction policy {direction_policy!r}")
    n = g.num_entities
    type_of = np.full((n, n), NONE, dtype=np.int64)
    for h, r, t in g.edges:
        pairs = [(h, t)] if direction_policy == "directed" else [(h, t), (t, h)]
        for i, j in pairs:
            if type_of[i, j] == NONE or r < type_of[i, j]:
                type_of[i, j] = r
    np.fill_diagonal(type_of, SELF)
    allowed = type_of != NONE
    allowed.flags.writeable = False
    type_of.flags.writeable = False
    return AttentionMask(n, allowed), EdgeTypeMap(n, g.num_relations, type_of)


def relation_incidence(g: KnowledgeGraph, direction_policy: DirectionPolicy = "symmetric",
                       num_relations: int | None = None) -> np.ndarray:
    """Multi-hot relation slots per attention pair, shape (n, n, 2|R| + 1).

    For query i and key j: slot r marks an edge j -r-> i (information flowing
    along the edge into i), slot |R| + r marks i -r-> j, and the last slot
    marks i == j. Unlike :func:`derive_mask` nothing is dropped when several
    relations join a pair. The directed policy keeps only the i -> j slots, so
    ``incidence.any(-1)`` equals ``derive_mask(g, policy)[0].allowed``.
    ``num_relations`` widens |R| to a larger relation vocabulary.
    """
    n = g.num_entities
    R = g.num_relations if num_relations is None else num_relations
    if R < g.num_relations:
        raise IndexOutOfRange(f"graph uses {g.num_relations} relations, only {R} slots requested")
    inc = np.zeros((n, n, 2 * R + 1), dtype=np.float64)
    if g.edges:
        e = np.asarray(g.edges, dtype=np.int64)
        h, r, t = e[:, 0], e[:, 1], e[:, 2]
        inc[h, t, R + r] = 1.0
        if direction_policy == "symmetric":
            inc[t, h, r] = 1.0
    idx = np.arange(n)
    inc[idx, idx, 2 * R] = 1.0
    return inc


def _check_entity(g: KnowledgeGraph, *nodes: int) -> None:
    for v in nodes:
        if not 0 <= v < g.num_entities:
            raise IndexOutOfRange(f"entity {v} out of range (n={g.num_entities})")


def khop_answers(g: KnowledgeGraph, source: int, path: Sequence[int]) -> set[int]:
    """Entities reached from ``source`` by following ``path`` relation by relation."""
    _check_entity(g, source)
    if len(path) == 0:
        raise IndexOutOfRange("relation path must be non-empty")
    for r in path:
        if not 0 <= r < g.num_relations:
            raise IndexOutOfRange(f"relation {r} out of range (|R|={g.num_relations})")
    frontier = {source}
    for r in path:
        frontier = {v for u in frontier for v in g.typed_successors(u, r)}
        if not frontier:
            break
    return frontier


def exact_k_reachable(g: KnowledgeGraph, s: int, t: int, k: int) -> bool:
    """True iff some walk of exactly ``k`` edges (any relations) leads from s to t."""
    _check_entity(g, s, t)
    if k < 0:
        raise IndexOutOfRange("hop count must be non-negative")
    frontier = {s}
    for _ in range(k):
        frontier = set().union(*(g.successors(u) for u in frontier)) if frontier else set()
    return t in frontier


def layered_graph(g: KnowledgeGraph, k: int) -> KnowledgeGraph:
    """k+1 stacked copies of V; copy i links to copy i+1 along every untyped edge.

    Vertex (v, i) is numbered ``v + i * n``; the result has one relation type.
    """
    if k < 1:
        raise ValueError("layered graph needs k >= 1")
    n = g.num_entities
    untyped = sorted({(h, t) for h, _, t in g.edges})
    edges = [(u + i * n, 0, v + (i + 1) * n) for i in range(k) for u, v in untyped]
    return KnowledgeGraph(n * (k + 1), 1, tuple(edges))


def _directed_reachable(g: KnowledgeGraph, start: int, goal: int) -> bool:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        if u == goal:
            return True
        for v in g.successors(u):
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return False


def layered_connectivity(g: KnowledgeGraph, s: int, t: int, k: int) -> bool:
    """Reachability of (t, k) from (s, 0) in the layered graph."""
    _check_entity(g, s, t)
    if k < 0:
        raise IndexOutOfRange("hop count must be non-negative")
    if k == 0:
        return s == t
    return _directed_reachable(layered_graph(g, k), s, t + k * g.num_entities)


@dataclass(frozen=True)
class SearchSpaceReport:
    n: int
    m: int
    standard_log2_patterns: int
    rasa_log2_patterns: int
    rasa_with_self_log2_patterns: int

    def to_dict(self) -> dict[str, int]:
        return {
            "n": self.n,
            "m": self.m,
            "standard_log2_patterns": self.standard_log2_patterns,
            "rasa_log2_patterns": self.rasa_log2_patterns,
            "rasa_with_self_log2_patterns": self.rasa_with_self_log2_patterns,
        }


def search_space_counts(n: int, m: int) -> SearchSpaceReport:
    """log2 of the number of binary attention masks: all n*n pairs vs. only the m edges."""
    return SearchSpaceReport(n, m, n * n, m, m + n)


def search_space(g: KnowledgeGraph) -> SearchSpaceReport:
    return search_space_counts(g.num_entities, g.m)


@dataclass(frozen=True)
class NamedGraph:
    """A graph loaded from a text file together with its name <-> id tables."""

    graph: KnowledgeGraph
    entities: tuple[str, ...]
    relations: tuple[str, ...]
    duplicate_lines: int = 0

    @cached_property
    def entity_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.entities)}


def load_triples(path: str | Path, delimiter: str = "\t", allow_duplicates: bool = False) -> NamedGraph:
    """Read ``head<delim>relation<delim>tail`` lines, numbering names by first appearance.

    Blank lines are skipped. With ``allow_duplicates`` repeated triples are
    silently dropped instead of raising DuplicateEdge.
    """
    entities: dict[str, int] = {}
    relations: dict[str, int] = {}
    triples: list[Triple] = []
    seen: set[Triple] = set()
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split(delimiter)
            if len(parts) != 3 or not all(p.strip() for p in parts):
                raise ParseError(f"expected 3 {delimiter!r}-separated fields", lineno, line)
            head, rel, tail = (p.strip() for p in parts)
            h = entities.setdefault(head, len(entities))
            r = relations.setdefault(rel, len(relations))
            t = entities.setdefault(tail, len(entities))
            if (h, r, t) in seen:
                if allow_duplicates:
                    duplicates += 1
                    continue
                raise DuplicateEdge(f"line {lineno}: duplicate triple {line!r}")
            seen.add((h, r, t))
            triples.append((h, r, t))
    graph = KnowledgeGraph(len(entities), len(relations), tuple(triples))
    return NamedGraph(graph, tuple(entities), tuple(relations), duplicates)


def write_id_map(path: str | Path, names: Sequence[str]) -> None:
    """Sidecar ``name<TAB>id`` file, one line per name in id order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, name in enumerate(names):
            fh.write(f"{name}\t{i}\n")
