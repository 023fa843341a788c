"""Readers for the MetaQA knowledge base and question files."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from ..errors import ParseError, UnknownEntity
from ..graph import KnowledgeGraph, NamedGraph, load_triples

_BRACKET = re.compile(r"\[([^\[\]]+)\]")


def load_metaqa_kb(path: str | Path, delimiter: str = "|", add_inverse: bool = False) -> NamedGraph:
    """Load ``subject|relation|object`` lines. Repeated lines are counted, not kept twice.

    With ``add_inverse`` every relation r gets a partner ``r_inverse`` and each
    edge (h, r, t) a mirror (t, r_inverse, h).
    """
    kb = load_triples(path, delimiter=delimiter, allow_duplicates=True)
    if not add_inverse:
        return kb
    g = kb.graph
    R = g.num_relations
    edges = g.edges + tuple((t, r + R, h) for h, r, t in g.edges)
    relations = kb.relations + tuple(f"{r}_inverse" for r in kb.relations)
    return NamedGraph(KnowledgeGraph(g.num_entities, 2 * R, edges), kb.entities, relations, kb.duplicate_lines)


@dataclass(frozen=True)
class MetaQAQuestion:
    text: str
    head: str
    answers: tuple[str, ...]
    hop: int
    unresolved: tuple[str, ...] = ()


def load_metaqa_questions(path: str | Path, hop: int, kb: NamedGraph | None = None) -> list[MetaQAQuestion]:
    """Parse ``question with [head]<TAB>ans1|ans2`` lines.

    If ``kb`` is given the head entity must exist in it (UnknownEntity
    otherwise); answers missing from the KB are listed in ``unresolved``.
    """
    if hop not in (1, 2, 3):
        raise ValueError("hop must be 1, 2 or 3")
    index = kb.entity_index if kb is not None else None
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected question<TAB>answers", lineno, line)
            text, answer_field = parts
            found = _BRACKET.findall(text)
            if len(found) != 1:
                raise ParseError("expected exactly one [bracketed] head entity", lineno, line)
            head = found[0].strip()
            answers = tuple(a.strip() for a in answer_field.split("|") if a.strip())
            if not answers:
                raise ParseError("empty answer list", lineno, line)
            unresolved: tuple[str, ...] = ()
            if index is not None:
                if head not in index:
                    raise UnknownEntity(f"line {lineno}: head entity {head!r} not in knowledge base")
                unresolved = tuple(a for a in answers if a not in index)
            out.append(MetaQAQuestion(text, head, answers, hop, unresolved))
    return out
