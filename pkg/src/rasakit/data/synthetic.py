"""Random typed digraphs and k-hop query datasets labelled by the exact oracle."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DegreeInfeasible, EmptySplit, GenerationStalled, InvalidConfig
from ..graph import KnowledgeGraph, build_graph, khop_answers
from ..model import KHopExample

SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class SyntheticSpec:
    num_entities: int = 32
    avg_out_degree: float = 3.0
    num_relations: int = 4
    hop_count: int = 1
    num_examples: int = 1000
    seed: int = 0
    examples_per_graph: int = 10
    max_retries: int = 1000

    def validate(self) -> None:
        if self.num_entities < 1 or self.num_relations < 1 or self.hop_count < 1:
            raise InvalidConfig("num_entities, num_relations and hop_count must be >= 1")
        if not self.avg_out_degree > 0:
            raise InvalidConfig("avg_out_degree must be positive")
        if self.num_examples < 1 or self.examples_per_graph < 1 or self.max_retries < 1:
            raise InvalidConfig("num_examples, examples_per_graph and max_retries must be >= 1")

    @property
    def num_edges(self) -> int:
        return int(math.floor(self.num_entities * self.avg_out_degree + 0.5))

    @property
    def num_graphs(self) -> int:
        return -(-self.num_examples // self.examples_per_graph)


@dataclass
class Dataset:
    split: str
    graphs: dict[int, KnowledgeGraph]
    examples: list[KHopExample]
    spec: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.examples)

    def graph_of(self, example: KHopExample) -> KnowledgeGraph:
        return self.graphs[example.graph_id]

    def to_json(self) -> str:
        used = sorted({e.graph_id for e in self.examples})
        doc = {
            "split": self.split,
            "spec": self.spec,
            "graphs": [{"id": gid, **self.graphs[gid].to_dict()} for gid in used],
            "examples": [e.to_dict() for e in self.examples],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Dataset":
        doc = json.loads(text)
        graphs = {int(g["id"]): KnowledgeGraph.from_dict(g) for g in doc["graphs"]}
        examples = [KHopExample.from_dict(e) for e in doc["examples"]]
        return cls(doc["split"], graphs, examples, doc.get("spec", {}))


def _graph_seed(seed: int, graph_index: int) -> int:
    return int(np.random.SeedSequence([seed, 0, graph_index]).generate_state(1)[0])


def gen_random_graph(spec: SyntheticSpec, graph_seed: int) -> KnowledgeGraph:
    """Uniform typed digraph with round(n * degree) distinct edges and no self-loops."""
    spec.validate()
    n, R = spec.num_entities, spec.num_relations
    m = spec.num_edges
    capacity = n * (n - 1) * R
    if m > capacity:
        raise DegreeInfeasible(f"{m} edges requested but only {capacity} distinct typed edges exist")
    rng = np.random.default_rng(graph_seed)
    seen: set[tuple[int, int, int]] = set()
    edges = []
    while len(edges) < m:
        h = int(rng.integers(n))
        r = int(rng.integers(R))
        t = int(rng.integers(n - 1))
        t += t >= h
        if (h, r, t) in seen:
            continue
        seen.add((h, r, t))
        edges.append((h, r, t))
    return build_graph(edges, n, R)


def gen_khop_dataset(spec: SyntheticSpec) -> dict[str, Dataset]:
    """Sample non-empty k-hop queries, label them exactly, and split 70/15/15 by example.

    Example i lives on graph i // examples_per_graph and draws its query from a
    generator seeded by (seed, i), so results do not depend on iteration order.
    """
    spec.validate()
    graphs = {gid: gen_random_graph(spec, _graph_seed(spec.seed, gid)) for gid in range(spec.num_graphs)}
    seen: set[tuple[int, int, tuple[int, ...]]] = set()
    examples: list[KHopExample] = []
    for i in range(spec.num_examples):
        gid = i // spec.examples_per_graph
        g = graphs[gid]
        rng = np.random.default_rng([spec.seed, 1, i])
        for _ in range(spec.max_retries):
            source = int(rng.integers(spec.num_entities))
            path = tuple(int(r) for r in rng.integers(spec.num_relations, size=spec.hop_count))
            key = (gid, source, path)
            if key in seen:
                continue
            answers = khop_answers(g, source, path)
            if answers:
                seen.add(key)
                examples.append(KHopExample(gid, source, path, tuple(sorted(answers))))
                break
        else:
            raise GenerationStalled(
                f"example {i}: no fresh non-empty {spec.hop_count}-hop query after {spec.max_retries} draws "
                f"(graph too sparse for k={spec.hop_count})"
            )

    N = len(examples)
    perm = np.random.default_rng([spec.seed, 2]).permutation(N)
    n_train, n_dev = N * 70 // 100, N * 15 // 100
    parts = {"train": perm[:n_train], "dev": perm[n_train:n_train + n_dev], "test": perm[n_train + n_dev:]}
    meta = asdict(spec)
    out = {}
    for split, idx in parts.items():
        chosen = [examples[i] for i in sorted(idx)]
        used = {e.graph_id for e in chosen}
        out[split] = Dataset(split, {gid: graphs[gid] for gid in sorted(used)}, chosen, meta)
    verify_dataset(out)
    return out


def verify_dataset(splits: dict[str, Dataset]) -> int:
    """Recompute every answer set with the oracle; returns the number checked."""
    checked = 0
    keys: set = set()
    for ds in splits.values():
        for e in ds.examples:
            expected = tuple(sorted(khop_answers(ds.graph_of(e), e.source, e.path)))
            if expected != e.answers:
                raise ValueError(f"{ds.split}: answers of {e} disagree with oracle {expected}")
            key = (e.graph_id, e.source, e.path)
            if key in keys:
                raise ValueError(f"query {key} appears twice across splits")
            keys.add(key)
            checked += 1
    return checked


def save_dataset(directory: str | Path, splits: dict[str, Dataset]) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for split in SPLITS:
        if split in splits:
            p = directory / f"{split}.json"
            p.write_text(splits[split].to_json(), encoding="utf-8")
            paths.append(p)
    return paths


def load_dataset(directory: str | Path) -> dict[str, Dataset]:
    directory = Path(directory)
    out = {}
    for split in SPLITS:
        p = directory / f"{split}.json"
        if p.exists():
            out[split] = Dataset.from_json(p.read_text(encoding="utf-8"))
    if not out:
        raise EmptySplit(f"no split files found in {directory}")
    return out
