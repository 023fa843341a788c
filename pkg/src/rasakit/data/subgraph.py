"""Breadth-first subgraph extraction around a center entity."""

from __future__ import annotations

from ..errors import IndexOutOfRange
from ..graph import KnowledgeGraph


def sample_subgraph(g: KnowledgeGraph, center: int, radius: int, max_nodes: int = 750) -> tuple[KnowledgeGraph, tuple[int, ...]]:
    """Undirected BFS ball of ``radius`` hops, cut at ``max_nodes`` in BFS order.

    Within a BFS level lower original ids are kept first. The result holds the
    induced edges only; ``index_map[new_id]`` is the original id, and the
    center is always new id 0.
    """
    if not 0 <= center < g.num_entities:
        raise IndexOutOfRange(f"center {center} out of range (n={g.num_entities})")
    if radius < 1 or max_nodes < 1:
        raise ValueError("radius and max_nodes must be >= 1")
    order = [center]
    seen = {center}
    level = [center]
    for _ in range(radius):
        if len(order) >= max_nodes:
            break
        nxt = sorted({v for u in level for v in g.neighbors(u)} - seen)
        nxt = nxt[: max_nodes - len(order)]
        order.extend(nxt)
        seen.update(nxt)
        level = nxt
        if not level:
            break
    new_id = {v: i for i, v in enumerate(order)}
    edges = tuple((new_id[h], r, new_id[t]) for h, r, t in g.edges if h in new_id and t in new_id)
    return KnowledgeGraph(len(order), g.num_relations, edges), tuple(order)
